"""Resolved-microstructure solver: quasi-static bulk conduction coupled to
the dynamic membrane condition on the tiled membrane.

Finite volumes on the fitted grid.  Bulk unknowns are cell averages; each
membrane facet carries a jump unknown and its two trace values follow from
the facet-local flux-continuity elimination, which keeps the bulk operator
symmetric positive definite.  Time stepping is backward Euler with Newton on
the jump vector; the bulk response is precomputed as a dense affine map so a
step costs one dense factorization of facet size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolveError
from .geometry import Conductivity, EpsilonDomain
from .membrane import FluxResponse, JumpStepper, SolverParams, StepResult
from .nonlinearity import BoundaryData, Nonlinearity

__all__ = [
    "SolverParams", "BulkOperator", "MicroState", "MicroSystem",
    "MicroTrajectory", "assemble_bulk", "elliptic_solve_given_jump",
    "step", "simulate", "initial_jump", "difference_state",
    "dissipation_identity", "bulk_l2", "jump_l2", "gradient_l2",
    "sigma_gradient_energy",
]


class BulkOperator:
    """Assembled bulk conduction operator with facet and boundary couplings.

    Row convention: ``A u = boundary_load + B w`` where ``w`` is the jump
    vector.  ``A`` is symmetric positive definite; membrane faces use the
    series (harmonic) conductivity of the two half cells.
    """

    def __init__(self, domain: EpsilonDomain, cond: Conductivity):
        self.domain = domain
        self.cond = cond
        dim = domain.dim
        h = domain.h
        s_face = h ** (dim - 1)
        faces = domain.faces
        facets = domain.facets

        sig = np.where(domain.inside, cond.sigma_int, cond.sigma_out)
        k_face = np.where(faces.membrane, cond.harmonic,
                          sig[faces.cell_a]) * s_face / h

        rows, cols, vals = [], [], []
        a, b = faces.cell_a, faces.cell_b
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [k_face, k_face, -k_face, -k_face]

        bnd = domain.boundary
        k_bnd = 2.0 * cond.sigma_out * s_face / h
        rows.append(bnd.cell)
        cols.append(bnd.cell)
        vals.append(np.full(len(bnd), k_bnd))

        n = domain.n_cells
        self.A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsc()

        # jump coupling: -k on the inner-cell row, +k on the outer-cell row
        memb = np.flatnonzero(faces.membrane)
        self.k_facet = k_face[memb][_facet_order(faces, facets, memb)]
        nf = len(facets)
        self.B = sp.coo_matrix(
            (np.concatenate([-self.k_facet, self.k_facet]),
             (np.concatenate([facets.inner_cell, facets.outer_cell]),
              np.concatenate([np.arange(nf), np.arange(nf)]))),
            shape=(n, nf)).tocsc()

        self.k_boundary = k_bnd
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.A)
        return self._lu

    def boundary_load(self, boundary_values: np.ndarray) -> np.ndarray:
        rhs = np.zeros(self.domain.n_cells)
        np.add.at(rhs, self.domain.boundary.cell,
                  self.k_boundary * boundary_values)
        return rhs

    def solve(self, w: np.ndarray, boundary_values: np.ndarray,
              tol: float = 1e-10) -> np.ndarray:
        rhs = self.boundary_load(boundary_values) + self.B @ w
        u = self.lu.solve(rhs)
        res = float(np.linalg.norm(self.A @ u - rhs))
        ref = max(float(np.linalg.norm(rhs)), 1e-30)
        if res > tol * max(ref, 1.0):
            raise LinearSolveError(
                f"bulk solve residual {res:.3e} exceeds tolerance", [res])
        return u

    def flux_density(self, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Membrane normal flux per facet, from the eliminated traces."""
        f = self.domain.facets
        s = f.measure
        return self.k_facet * (u[f.outer_cell] - u[f.inner_cell] - w) / s

    def traces(self, u: np.ndarray, w: np.ndarray):
        f = self.domain.facets
        si, so = self.cond.sigma_int, self.cond.sigma_out
        inner = (si * u[f.inner_cell] + so * (u[f.outer_cell] - w)) / (si + so)
        return inner, inner + w

    def one_sided_fluxes(self, u: np.ndarray, w: np.ndarray):
        f = self.domain.facets
        half = 0.5 * self.domain.h
        t_in, t_out = self.traces(u, w)
        q_in = self.cond.sigma_int * (t_in - u[f.inner_cell]) / half
        q_out = self.cond.sigma_out * (u[f.outer_cell] - t_out) / half
        return q_in, q_out


def _facet_order(faces, facets, memb_idx):
    """Membrane faces are enumerated in facet order already; assert and map."""
    order = np.arange(len(memb_idx))
    assert np.array_equal(
        np.minimum(faces.cell_a[memb_idx], faces.cell_b[memb_idx]),
        np.minimum(facets.inner_cell, facets.outer_cell))
    return order


def assemble_bulk(domain: EpsilonDomain, cond: Conductivity) -> BulkOperator:
    return BulkOperator(domain, cond)


def elliptic_solve_given_jump(op: BulkOperator, w: np.ndarray,
                              drive: BoundaryData, t: float,
                              tol: float = 1e-10):
    """Solve the bulk problem with a prescribed jump; returns (u, flux).

    The membrane flux is the average of the two one-sided discrete fluxes,
    which the elimination makes equal up to roundoff (asserted here).
    """
    bvals = drive.values(op.domain.boundary.midpoint, t)
    u = op.solve(w, bvals, tol=tol)
    q_in, q_out = op.one_sided_fluxes(u, w)
    scale = max(1.0, float(np.max(np.abs(q_in), initial=0.0)))
    assert float(np.max(np.abs(q_in - q_out), initial=0.0)) <= 1e-8 * scale
    return u, 0.5 * (q_in + q_out)


@dataclass(frozen=True)
class MicroState:
    """Bulk potential, membrane jump, flux and the duplicated traces."""

    t: float
    u: np.ndarray
    jump: np.ndarray
    flux: np.ndarray
    trace_in: np.ndarray
    trace_out: np.ndarray

    def consistency_error(self) -> float:
        return float(np.max(np.abs(self.trace_out - self.trace_in - self.jump),
                            initial=0.0))


class MicroSystem:
    """Bulk operator bound to a membrane law and boundary data.

    Precomputes the dense flux response of the jump vector (one bulk solve
    per facet) plus the separable boundary response, after which every time
    step reduces to dense facet-sized algebra.
    """

    def __init__(self, domain: EpsilonDomain, cond: Conductivity,
                 law: Nonlinearity, drive: BoundaryData, params: SolverParams):
        self.domain = domain
        self.cond = cond
        self.law = law
        self.drive = drive
        self.params = params
        self.op = assemble_bulk(domain, cond)

        nf = domain.n_facets
        s = np.full(nf, domain.facets.measure)
        b_spatial = self.op.boundary_load(
            drive.spatial(domain.boundary.midpoint))
        self.u_drive = self.op.lu.solve(b_spatial)
        self.u_jump = self.op.lu.solve(self.op.B.toarray())
        response = np.diag(self.op.k_facet) - self.op.B.T @ self.u_jump
        response = 0.5 * (response + response.T)
        load = self.op.B.T @ self.u_drive
        self.flux_map = FluxResponse(weights=s, response=response, load=load)
        self.stepper = JumpStepper(
            self.flux_map, law, drive.temporal,
            rate_coeff=params.alpha / domain.epsilon,
            arg_scale=domain.epsilon, params=params)

    @property
    def weights(self) -> np.ndarray:
        return self.flux_map.weights

    def with_law(self, law: Nonlinearity) -> "MicroSystem":
        """Rebind the membrane law, reusing the precomputed bulk response."""
        twin = object.__new__(MicroSystem)
        twin.__dict__.update(self.__dict__)
        twin.law = law
        twin.stepper = JumpStepper(
            self.flux_map, law, self.drive.temporal,
            rate_coeff=self.params.alpha / self.domain.epsilon,
            arg_scale=self.domain.epsilon, params=self.params)
        return twin

    def bulk_at(self, t: float, w: np.ndarray) -> np.ndarray:
        return self.drive.temporal(t) * self.u_drive + self.u_jump @ w

    def state_at(self, t: float, w: np.ndarray) -> MicroState:
        u = self.bulk_at(t, w)
        t_in, t_out = self.op.traces(u, w)
        return MicroState(t=t, u=u, jump=w.copy(), flux=self.op.flux_density(u, w),
                          trace_in=t_in, trace_out=t_out)

    def advance(self, t: float, w: np.ndarray, dt: float) -> StepResult:
        return self.stepper.step(t + dt, w, dt)

    def lyapunov(self, w_a: np.ndarray, w_b: np.ndarray) -> float:
        """Weighted squared jump distance of two solutions."""
        r = w_a - w_b
        return float(self.params.alpha / self.domain.epsilon
                     * np.sum(self.weights * r * r))


def step(system: MicroSystem, state: MicroState) -> MicroState:
    """One implicit step of the coupled system."""
    res = system.advance(state.t, state.jump, system.params.dt)
    return system.state_at(state.t + system.params.dt, res.jump)


@dataclass
class MicroTrajectory:
    """Sampled jump history plus per-step solver records."""

    system: MicroSystem
    ts: np.ndarray
    jumps: np.ndarray                 # (n_samples, n_facets)
    stride: int
    newton_iters: np.ndarray = field(default=None)
    step_residuals: np.ndarray = field(default=None)
    balance_residuals: np.ndarray = field(default=None)

    @property
    def dt(self) -> float:
        return self.system.params.dt

    def state(self, i: int) -> MicroState:
        return self.system.state_at(float(self.ts[i]), self.jumps[i])

    def __len__(self) -> int:
        return len(self.ts)


def simulate(system: MicroSystem, w0: np.ndarray, horizon: float,
             stride: int = 1) -> MicroTrajectory:
    """Advance from the initial jump over ``horizon`` time units.

    The horizon must be a whole number of steps.  Samples every ``stride``
    steps (sample 0 is the initial state); bulk fields are reconstructed on
    demand from the sampled jumps.
    """
    dt = system.params.dt
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9:
        raise ValueError(f"horizon {horizon} is not a multiple of dt {dt}")
    ws = [w0.copy()]
    ts = [0.0]
    iters = np.zeros(n_steps, dtype=np.int64)
    resid = np.zeros(n_steps)
    balance = np.zeros(n_steps)
    w = w0.copy()
    for n in range(n_steps):
        t_next = (n + 1) * dt
        w_prev = w
        res = system.stepper.step(t_next, w_prev, dt)
        w = res.jump
        iters[n] = res.iterations
        resid[n] = res.residual
        balance[n] = _balance_residual(system, w_prev, w, t_next, dt)
        if (n + 1) % stride == 0:
            ws.append(w.copy())
            ts.append(t_next)
    return MicroTrajectory(system=system, ts=np.asarray(ts),
                           jumps=np.asarray(ws), stride=stride,
                           newton_iters=iters, step_residuals=resid,
                           balance_residuals=balance)


def _balance_residual(system: MicroSystem, w_prev: np.ndarray, w: np.ndarray,
                      t_next: float, dt: float) -> float:
    """Energy-balance defect of the achieved step: residual tested with w."""
    drive = system.drive.temporal(t_next)
    rvec = system.stepper._weighted_residual(w, w_prev, drive, dt)
    return float(abs(rvec @ w))


def initial_jump(domain: EpsilonDomain, kind: str, amplitude: float,
                 seed: int = 0) -> np.ndarray:
    """Built-in initial jump family, scaled by the cell size.

    The scaling keeps the squared membrane integral of the data bounded by
    (cell membrane measure) * amplitude^2 * epsilon, the admissible-data
    requirement of the transient problem.
    """
    mids = domain.facets.midpoint
    nf = domain.n_facets
    eps = domain.epsilon
    if kind == "zero":
        return np.zeros(nf)
    if kind == "uniform":
        return np.full(nf, eps * amplitude)
    if kind == "modulated":
        return eps * amplitude * np.cos(2.0 * np.pi * mids[:, 0])
    if kind == "random":
        rng = np.random.default_rng(seed)
        return eps * amplitude * rng.uniform(-1.0, 1.0, nf)
    raise ValueError(f"unknown initial jump kind {kind!r}")


@dataclass(frozen=True)
class DifferenceState:
    """Snapshot of two solutions of the same discrete system at equal time."""

    t: float
    jump_a: np.ndarray
    jump_b: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.jump_a - self.jump_b


def difference_state(state_a: MicroState, state_b: MicroState) -> DifferenceState:
    assert abs(state_a.t - state_b.t) < 1e-12
    return DifferenceState(t=state_a.t, jump_a=state_a.jump.copy(),
                           jump_b=state_b.jump.copy())


def dissipation_identity(prev: DifferenceState, curr: DifferenceState,
                         system: MicroSystem) -> dict:
    """Discrete energy identity of the difference of two solutions.

    Splits the tested implicit difference equation into the bulk gradient
    term, the membrane storage rate and the membrane dissipation through the
    secant slope of the law.  The three terms sum to the solver residual;
    backward Euler makes the stored jump energy nonincreasing on top of it.
    """
    p = system.params
    eps = system.domain.epsilon
    s = system.weights
    dt = p.dt
    r_new = curr.diff
    r_old = prev.diff

    bulk = float(r_new @ system.flux_map.response @ r_new)
    storage = float(p.alpha / eps * np.sum(s * (r_new - r_old) / dt * r_new))
    df = system.law(curr.jump_a / eps) - system.law(curr.jump_b / eps)
    dissipation = float(np.sum(s * df * r_new))

    secants = _secant_slopes(system.law, curr.jump_a / eps, curr.jump_b / eps)
    return {
        "bulk_term": bulk,
        "membrane_storage_delta": storage,
        "membrane_dissipation": dissipation,
        "residual_sum": bulk + storage + dissipation,
        "secant_min": float(secants.min(initial=np.inf)),
        "secant_max": float(secants.max(initial=-np.inf)),
    }


def _secant_slopes(law: Nonlinearity, a: np.ndarray, b: np.ndarray,
                   floor: float = 1e-12) -> np.ndarray:
    gap = a - b
    out = np.where(np.abs(gap) > floor,
                   (law(a) - law(b)) / np.where(np.abs(gap) > floor, gap, 1.0),
                   law.deriv(0.5 * (a + b)))
    return out


# -- discrete norms ---------------------------------------------------------

def bulk_l2(domain: EpsilonDomain, u: np.ndarray) -> float:
    return float(np.sqrt(domain.cell_volume * np.sum(u * u)))


def jump_l2(domain: EpsilonDomain, w: np.ndarray) -> float:
    return float(np.sqrt(domain.facets.measure * np.sum(w * w)))


def _face_differences(domain: EpsilonDomain, u: np.ndarray, w: np.ndarray,
                      boundary_values: Optional[np.ndarray]):
    """Per-face normal differences and quadrature volumes.

    Membrane faces subtract the jump; boundary faces difference against the
    Dirichlet value over the half spacing.  Returns (slopes, volumes, sigma
    selector) aligned as [interior faces..., boundary faces...].
    """
    faces = domain.faces
    h = domain.h
    s_face = h ** (domain.dim - 1)
    du = u[faces.cell_b] - u[faces.cell_a]
    jump_corr = np.zeros(len(faces))
    memb = np.flatnonzero(faces.membrane)
    # jump is oriented inner->outer; convert to the a->b face orientation
    sign = np.where(faces.a_inside[memb], 1.0, -1.0)
    jump_corr[memb] = sign * w
    slopes_int = (du - jump_corr) / h
    vol_int = np.full(len(faces), s_face * h)

    bnd = domain.boundary
    if boundary_values is None:
        bvals = np.zeros(len(bnd))
    else:
        bvals = boundary_values
    slopes_bnd = (bvals - u[bnd.cell]) / (0.5 * h)
    vol_bnd = np.full(len(bnd), s_face * 0.5 * h)
    return slopes_int, vol_int, slopes_bnd, vol_bnd


def gradient_l2(domain: EpsilonDomain, u: np.ndarray, w: np.ndarray,
                boundary_values: Optional[np.ndarray] = None) -> float:
    si, vi, sb, vb = _face_differences(domain, u, w, boundary_values)
    return float(np.sqrt(np.sum(vi * si * si) + np.sum(vb * sb * sb)))


def sigma_gradient_energy(domain: EpsilonDomain, cond: Conductivity,
                          u: np.ndarray, w: np.ndarray,
                          boundary_values: Optional[np.ndarray] = None) -> float:
    """Conductivity-weighted squared gradient energy (not a norm)."""
    faces = domain.faces
    sig_cells = np.where(domain.inside, cond.sigma_int, cond.sigma_out)
    sig_face = np.where(faces.membrane, cond.harmonic, sig_cells[faces.cell_a])
    si, vi, sb, vb = _face_differences(domain, u, w, boundary_values)
    sig_bnd = cond.sigma_out
    return float(np.sum(vi * sig_face * si * si)
                 + np.sum(vb * sig_bnd * sb * sb))
