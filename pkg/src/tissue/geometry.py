"""Periodic unit cell, tiled domain and membrane facet bookkeeping.

The unit cell is the unit square (or interval in the 1D diagnostic mode)
containing a centered axis-aligned inclusion.  The membrane is the inclusion
boundary; it falls on grid lines by construction so every membrane facet
separates exactly one interior cell from one exterior cell and carries two
trace unknowns.  All measures are analytic, not quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError


@dataclass(frozen=True)
class FaceSet:
    """Interior grid faces: cell pair, axis, and membrane marking.

    ``cell_a`` is always on the negative side of the face along ``axis``.
    For membrane faces ``inner``/``outer`` identify which of the two cells
    is inside the inclusion; the facet normal points from inner to outer.
    """

    cell_a: np.ndarray
    cell_b: np.ndarray
    axis: np.ndarray
    membrane: np.ndarray        # bool mask
    a_inside: np.ndarray        # bool, cell_a lies in the inclusion

    def __len__(self) -> int:
        return self.cell_a.size


@dataclass(frozen=True)
class BoundaryFaceSet:
    """Outer boundary faces of a Dirichlet domain: owner cell and midpoint."""

    cell: np.ndarray
    axis: np.ndarray
    sign: np.ndarray            # +1: face on the high side of the cell
    midpoint: np.ndarray        # (n_faces, dim)

    def __len__(self) -> int:
        return self.cell.size


@dataclass(frozen=True)
class MembraneFacets:
    """Membrane facets with inner/outer cell pairs and normals.

    The unit normal points from the inner (inclusion) side to the outer
    side; ``axis``/``sign`` encode it for axis-aligned facets.  The two
    trace unknowns of facet ``k`` are indexed ``(k, n_facets + k)``.
    """

    inner_cell: np.ndarray
    outer_cell: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    midpoint: np.ndarray        # (n_facets, dim)
    measure: float              # measure of a single facet

    def __len__(self) -> int:
        return self.inner_cell.size

    @property
    def trace_index_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self)
        return np.arange(n), n + np.arange(n)


def _grid_inside_mask(n: int, lo: int, hi: int, dim: int) -> np.ndarray:
    """Boolean mask (flat, C order) of cells with every index in [lo, hi)."""
    idx = np.arange(n)
    band = (idx >= lo) & (idx < hi)
    if dim == 1:
        return band
    return (band[:, None] & band[None, :]).ravel()


def _interior_faces(n: int, dim: int, inside: np.ndarray,
                    periodic: bool) -> FaceSet:
    """Enumerate grid faces between cell pairs, wrapping when periodic."""
    cell_a, cell_b, axis = [], [], []
    if dim == 1:
        last = n if periodic else n - 1
        i = np.arange(last)
        cell_a.append(i)
        cell_b.append((i + 1) % n)
        axis.append(np.zeros(last, dtype=np.int64))
    else:
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        flat = (ii * n + jj).ravel()
        # axis 0: neighbor (i+1, j)
        if periodic:
            keep = np.ones(n * n, dtype=bool)
        else:
            keep = (ii < n - 1).ravel()
        nb0 = ((ii + 1) % n * n + jj).ravel()
        cell_a.append(flat[keep])
        cell_b.append(nb0[keep])
        axis.append(np.zeros(keep.sum(), dtype=np.int64))
        # axis 1: neighbor (i, j+1)
        if periodic:
            keep = np.ones(n * n, dtype=bool)
        else:
            keep = (jj < n - 1).ravel()
        nb1 = (ii * n + (jj + 1) % n).ravel()
        cell_a.append(flat[keep])
        cell_b.append(nb1[keep])
        axis.append(np.ones(keep.sum(), dtype=np.int64))
    a = np.concatenate(cell_a)
    b = np.concatenate(cell_b)
    ax = np.concatenate(axis)
    memb = inside[a] != inside[b]
    return FaceSet(cell_a=a, cell_b=b, axis=ax, membrane=memb,
                   a_inside=inside[a])


def _facets_from_faces(faces: FaceSet, h: float, dim: int,
                       centers: np.ndarray) -> MembraneFacets:
    sel = np.flatnonzero(faces.membrane)
    a = faces.cell_a[sel]
    b = faces.cell_b[sel]
    ax = faces.axis[sel]
    a_in = faces.a_inside[sel]
    inner = np.where(a_in, a, b)
    outer = np.where(a_in, b, a)
    # normal points from inner to outer along the face axis
    sign = np.where(a_in, 1, -1).astype(np.int64)
    mid = 0.5 * (centers[a] + centers[b])
    measure = h ** (dim - 1)
    return MembraneFacets(inner_cell=inner, outer_cell=outer, axis=ax,
                          sign=sign, midpoint=mid, measure=measure)


def _cell_centers(n: int, h: float, dim: int) -> np.ndarray:
    x = (np.arange(n) + 0.5) * h
    if dim == 1:
        return x[:, None]
    xx, yy = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass(frozen=True)
class CellGeometry:
    """Unit periodic cell with a centered axis-aligned square inclusion.

    ``margin`` is the distance from the membrane to the cell boundary, so
    the inclusion is ``(margin, 1 - margin)**dim``.  The grid has
    ``resolution`` cells per axis and the membrane falls on grid lines.
    """

    dim: int
    margin: float
    resolution: int
    inside: np.ndarray = field(repr=False)
    faces: FaceSet = field(repr=False)          # periodic face list
    facets: MembraneFacets = field(repr=False)
    area_int: float
    area_out: float
    memb_measure: float

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def n_cells(self) -> int:
        return self.resolution ** self.dim

    def summary(self) -> dict:
        return {
            "dimension": self.dim,
            "inclusion_margin": self.margin,
            "cell_resolution": self.resolution,
            "area_int": self.area_int,
            "area_out": self.area_out,
            "membrane_measure": self.memb_measure,
            "n_facets": len(self.facets),
        }


def smallest_aligned_resolution(margin: float, limit: int = 100000) -> int:
    """Smallest grid resolution whose lines contain the inclusion boundary."""
    for m in range(1, limit + 1):
        if abs(margin * m - round(margin * m)) < 1e-9 and round(margin * m) >= 1:
            return m
    raise GeometryError(f"no aligned resolution below {limit} for margin {margin}")


def build_cell_geometry(margin: float, resolution: int, dim: int = 2) -> CellGeometry:
    """Construct the unit cell; rejects grids that do not fit the membrane."""
    if dim not in (1, 2):
        raise GeometryError(f"dimension must be 1 or 2, got {dim}")
    if not (0.0 < margin < 0.5):
        raise GeometryError(f"inclusion_margin must lie in (0, 0.5), got {margin}")
    if resolution < 2:
        raise GeometryError(f"cell_resolution must be at least 2, got {resolution}")
    am = margin * resolution
    if abs(am - round(am)) > 1e-9:
        m_ok = smallest_aligned_resolution(margin)
        raise GeometryError(
            f"cell_resolution={resolution} does not align the membrane with grid "
            f"lines (margin*resolution={am:.6g} is not an integer); smallest "
            f"valid resolution is {m_ok}")
    lo = int(round(am))
    hi = resolution - lo
    if hi <= lo:
        raise GeometryError(
            f"inclusion is empty at margin={margin}, resolution={resolution}")
    inside = _grid_inside_mask(resolution, lo, hi, dim)
    faces = _interior_faces(resolution, dim, inside, periodic=True)
    h = 1.0 / resolution
    centers = _cell_centers(resolution, h, dim)
    facets = _facets_from_faces(faces, h, dim, centers)

    side = 1.0 - 2.0 * margin
    area_int = side ** dim
    area_out = 1.0 - area_int
    memb = 2.0 * dim * side ** (dim - 1)

    geo = CellGeometry(dim=dim, margin=margin, resolution=resolution,
                       inside=inside, faces=faces, facets=facets,
                       area_int=area_int, area_out=area_out,
                       memb_measure=memb)
    _check_cell(geo)
    return geo


def _check_cell(geo: CellGeometry) -> None:
    assert abs(geo.area_int + geo.area_out - 1.0) < 1e-15
    facets = geo.facets
    # normals point from the inclusion into the outer phase, per facet
    assert np.all(geo.inside[facets.inner_cell])
    assert not np.any(geo.inside[facets.outer_cell])
    # discrete membrane measure agrees with the analytic perimeter
    assert abs(len(facets) * facets.measure - geo.memb_measure) < 1e-12


@dataclass(frozen=True)
class Conductivity:
    """Piecewise-constant conductivity of the two phases and its volume mean."""

    sigma_int: float
    sigma_out: float
    mean: float

    @property
    def harmonic(self) -> float:
        """Series combination seen by a membrane facet (half cell each side)."""
        return 2.0 * self.sigma_int * self.sigma_out / (self.sigma_int + self.sigma_out)


def mean_conductivity(cell: CellGeometry, sigma_int: float,
                      sigma_out: float) -> float:
    """Volume-weighted mean conductivity of the unit cell."""
    if sigma_int <= 0 or sigma_out <= 0:
        raise GeometryError("conductivities must be positive")
    return cell.area_int * sigma_int + cell.area_out * sigma_out


def make_conductivity(cell: CellGeometry, sigma_int: float,
                      sigma_out: float) -> Conductivity:
    mean = mean_conductivity(cell, sigma_int, sigma_out)
    assert min(sigma_int, sigma_out) <= mean <= max(sigma_int, sigma_out)
    return Conductivity(sigma_int=sigma_int, sigma_out=sigma_out, mean=mean)


@dataclass(frozen=True)
class EpsilonDomain:
    """Unit macro domain tiled by scaled copies of the periodic cell.

    ``1/epsilon`` copies per axis, each subdivided by the cell grid, give a
    global fitted grid of spacing ``epsilon/resolution``.  Membrane facets
    keep duplicated trace unknowns; the boundary carries Dirichlet data and
    stays at distance ``margin * epsilon`` from every membrane facet.
    """

    cell: CellGeometry
    epsilon: float
    n: int                      # grid cells per axis
    h: float                    # grid spacing
    inside: np.ndarray = field(repr=False)
    faces: FaceSet = field(repr=False)
    boundary: BoundaryFaceSet = field(repr=False)
    facets: MembraneFacets = field(repr=False)
    centers: np.ndarray = field(repr=False)
    memb_measure: float

    @property
    def dim(self) -> int:
        return self.cell.dim

    @property
    def n_cells(self) -> int:
        return self.n ** self.dim

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    def summary(self) -> dict:
        out = self.cell.summary()
        out.update({
            "epsilon": self.epsilon,
            "grid_cells_per_axis": self.n,
            "spacing": self.h,
            "n_bulk_unknowns": self.n_cells,
            "n_membrane_facets": self.n_facets,
            "membrane_measure": self.memb_measure,
            # membrane-to-boundary separation, in units of epsilon
            "boundary_gap_over_epsilon": self.cell.margin,
        })
        return out


def tile_domain(cell: CellGeometry, epsilon: float,
                max_cells: int = 65536, max_facets: int = 4096) -> EpsilonDomain:
    """Tile the unit domain with scaled periodic cells.

    The tiling must close exactly (``1/epsilon`` integral) and the resulting
    unknown counts must fit the dense precompute budget of the solvers.
    """
    if epsilon <= 0:
        raise GeometryError(f"epsilon must be positive, got {epsilon}")
    inv = 1.0 / epsilon
    if abs(inv - round(inv)) > 1e-9:
        raise GeometryError(
            f"1/epsilon must be an integer so the tiling closes; got "
            f"epsilon={epsilon} (1/epsilon={inv:.6g})")
    copies = int(round(inv))
    n = copies * cell.resolution
    dim = cell.dim
    n_cells = n ** dim

    # inclusion mask repeats per tile
    band = np.tile((np.arange(cell.resolution) >= round(cell.margin * cell.resolution))
                   & (np.arange(cell.resolution) < cell.resolution - round(cell.margin * cell.resolution)),
                   copies)
    if dim == 1:
        inside = band
    else:
        inside = (band[:, None] & band[None, :]).ravel()

    h = epsilon / cell.resolution
    centers = _cell_centers(n, h, dim)
    faces = _interior_faces(n, dim, inside, periodic=False)
    facets = _facets_from_faces(faces, h, dim, centers)

    n_facets = len(facets)
    if n_cells > max_cells or n_facets > max_facets:
        dense_bytes = 8 * (n_cells * n_facets + n_facets * n_facets)
        raise GeometryError(
            f"unknown budget exceeded: {n_cells} cells / {n_facets} facets "
            f"(limits {max_cells} / {max_facets}); dense flux-response "
            f"precompute would need about {dense_bytes / 1e6:.0f} MB")

    # boundary faces: cells on the outer rim, one face per exposed side
    bc, bax, bsg, bmid = [], [], [], []
    if dim == 1:
        bc = [0, n - 1]
        bax = [0, 0]
        bsg = [-1, 1]
        bmid = [[0.0], [1.0]]
    else:
        idx = np.arange(n)
        for axis_i, sign_i in ((0, -1), (0, 1), (1, -1), (1, 1)):
            if axis_i == 0:
                cells = (0 if sign_i < 0 else n - 1) * n + idx
                mids = np.column_stack([np.full(n, 0.0 if sign_i < 0 else 1.0),
                                        (idx + 0.5) * h])
            else:
                cells = idx * n + (0 if sign_i < 0 else n - 1)
                mids = np.column_stack([(idx + 0.5) * h,
                                        np.full(n, 0.0 if sign_i < 0 else 1.0)])
            bc.append(cells)
            bax.append(np.full(n, axis_i))
            bsg.append(np.full(n, sign_i))
            bmid.append(mids)
        bc = np.concatenate(bc)
        bax = np.concatenate(bax)
        bsg = np.concatenate(bsg)
        bmid = np.vstack(bmid)
    boundary = BoundaryFaceSet(cell=np.asarray(bc, dtype=np.int64),
                               axis=np.asarray(bax, dtype=np.int64),
                               sign=np.asarray(bsg, dtype=np.int64),
                               midpoint=np.asarray(bmid, dtype=float))

    memb_measure = n_facets * facets.measure
    dom = EpsilonDomain(cell=cell, epsilon=epsilon, n=n, h=h, inside=inside,
                        faces=faces, boundary=boundary, facets=facets,
                        centers=centers, memb_measure=memb_measure)
    _check_domain(dom)
    return dom


def _check_domain(dom: EpsilonDomain) -> None:
    copies = round(1.0 / dom.epsilon)
    expected = dom.cell.memb_measure * dom.epsilon ** (dom.dim - 1) * copies ** dom.dim
    # equivalently |cell membrane| * |domain| / epsilon
    assert abs(expected - dom.cell.memb_measure / dom.epsilon) < 1e-12
    assert abs(dom.memb_measure - expected) < 1e-12
    facets = dom.facets
    assert np.all(dom.inside[facets.inner_cell])
    assert not np.any(dom.inside[facets.outer_cell])
    # no boundary cell belongs to the inclusion (keeps the Dirichlet gap)
    assert not np.any(dom.inside[dom.boundary.cell])
