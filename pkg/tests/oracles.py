"""Dense reference implementations used as test oracles.

Everything here is assembled from first principles with plain loops and
solved with dense factorizations, independent of the production assembly
and Schur elimination paths.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


def face_coefficient(dom, cond, face_idx: int) -> float:
    """Transmission coefficient of one interior face (flux integral per unit
    potential difference)."""
    faces = dom.faces
    h = dom.h
    s = h ** (dom.dim - 1)
    if faces.membrane[face_idx]:
        sig = 2.0 * cond.sigma_int * cond.sigma_out / (cond.sigma_int + cond.sigma_out)
    else:
        sig = cond.sigma_int if dom.inside[faces.cell_a[face_idx]] else cond.sigma_out
    return s * sig / h


def dense_bulk(dom, cond):
    """Dense A, B and facet coefficient vector from explicit loops."""
    n = dom.n_cells
    nf = dom.n_facets
    A = np.zeros((n, n))
    for i in range(len(dom.faces)):
        a = int(dom.faces.cell_a[i])
        b = int(dom.faces.cell_b[i])
        k = face_coefficient(dom, cond, i)
        A[a, a] += k
        A[b, b] += k
        A[a, b] -= k
        A[b, a] -= k
    s = dom.h ** (dom.dim - 1)
    k_bnd = 2.0 * cond.sigma_out * s / dom.h
    for i in range(len(dom.boundary)):
        c = int(dom.boundary.cell[i])
        A[c, c] += k_bnd
    B = np.zeros((n, nf))
    k_facet = np.zeros(nf)
    memb_faces = np.flatnonzero(dom.faces.membrane)
    for e in range(nf):
        k = face_coefficient(dom, cond, int(memb_faces[e]))
        k_facet[e] = k
        B[int(dom.facets.inner_cell[e]), e] = -k
        B[int(dom.facets.outer_cell[e]), e] = +k
    return A, B, k_facet, k_bnd


def dense_boundary_load(dom, cond, drive, t: float, k_bnd: float) -> np.ndarray:
    rhs = np.zeros(dom.n_cells)
    vals = drive.values(dom.boundary.midpoint, t)
    for i in range(len(dom.boundary)):
        rhs[int(dom.boundary.cell[i])] += k_bnd * float(vals[i])
    return rhs


def dense_elliptic(dom, cond, drive, t: float, w: np.ndarray):
    """Direct dense solve of the bulk problem with a prescribed jump."""
    A, B, k_facet, k_bnd = dense_bulk(dom, cond)
    rhs = dense_boundary_load(dom, cond, drive, t, k_bnd) + B @ w
    u = scipy.linalg.solve(A, rhs, assume_a="pos")
    s = dom.facets.measure
    q = np.array([
        k_facet[e] * (u[int(dom.facets.outer_cell[e])]
                      - u[int(dom.facets.inner_cell[e])] - w[e]) / s
        for e in range(dom.n_facets)])
    return u, q


class DenseLinearStepper:
    """Monolithic dense backward-Euler stepper for a linear membrane law.

    Solves the coupled (bulk, jump) block system by one dense factorization;
    the production code eliminates the bulk first, so agreement is a real
    cross-check of both reductions.
    """

    def __init__(self, dom, cond, drive, params, kappa: float):
        self.dom = dom
        self.drive = drive
        self.params = params
        A, B, k_facet, k_bnd = dense_bulk(dom, cond)
        self.A, self.B, self.k_facet, self.k_bnd = A, B, k_facet, k_bnd
        n, nf = dom.n_cells, dom.n_facets
        s = dom.facets.measure
        eps = dom.epsilon
        dt = params.dt
        M = np.zeros((n + nf, n + nf))
        M[:n, :n] = A
        M[:n, n:] = -B
        # membrane rows: (a/dt + kappa/eps) w - q(u, w) = (a/dt) w_prev
        self.rate = params.alpha / eps / dt
        for e in range(nf):
            M[n + e, n + e] = self.rate + kappa / eps + k_facet[e] / s
            M[n + e, int(dom.facets.outer_cell[e])] -= k_facet[e] / s
            M[n + e, int(dom.facets.inner_cell[e])] += k_facet[e] / s
        self.lu = scipy.linalg.lu_factor(M)
        self.n = n
        self.nf = nf

    def step(self, t_next: float, w_prev: np.ndarray):
        rhs = np.zeros(self.n + self.nf)
        rhs[:self.n] = dense_boundary_load(self.dom, None, self.drive, t_next,
                                           self.k_bnd)
        rhs[self.n:] = self.rate * w_prev
        x = scipy.linalg.lu_solve(self.lu, rhs)
        return x[:self.n], x[self.n:]

    def run(self, w0: np.ndarray, n_steps: int):
        """Jump states at every step plus the final bulk field."""
        dt = self.params.dt
        ws = [w0.copy()]
        w = w0.copy()
        u = None
        for k in range(n_steps):
            u, w = self.step((k + 1) * dt, w)
            ws.append(w.copy())
        return np.asarray(ws), u

    def affine_period_map(self, n_steps: int):
        """Monodromy matrix and offset of the one-period jump map."""
        nf = self.nf
        dt = self.params.dt
        mat = np.eye(nf)
        off = np.zeros(nf)
        for k in range(n_steps):
            t = (k + 1) * dt
            rhs = np.zeros((self.n + self.nf, nf + 1))
            rhs[:self.n, -1] = dense_boundary_load(self.dom, None, self.drive,
                                                   t, self.k_bnd)
            rhs[self.n:, :nf] = self.rate * mat
            rhs[self.n:, -1] += self.rate * off
            x = scipy.linalg.lu_solve(self.lu, rhs)
            mat = x[self.n:, :nf]
            off = x[self.n:, -1]
        return mat, off


def dense_sigma_gradient_energy(dom, cond, u, w, bvals) -> float:
    """Face-by-face conductivity-weighted gradient energy, plain loops."""
    total = 0.0
    h = dom.h
    s = h ** (dom.dim - 1)
    memb_faces = np.flatnonzero(dom.faces.membrane)
    facet_of_face = {int(f): e for e, f in enumerate(memb_faces)}
    for i in range(len(dom.faces)):
        a = int(dom.faces.cell_a[i])
        b = int(dom.faces.cell_b[i])
        du = u[b] - u[a]
        if dom.faces.membrane[i]:
            e = facet_of_face[i]
            sign = 1.0 if dom.inside[a] else -1.0
            du -= sign * w[e]
            sig = 2 * cond.sigma_int * cond.sigma_out / (cond.sigma_int + cond.sigma_out)
        else:
            sig = cond.sigma_int if dom.inside[a] else cond.sigma_out
        total += s * h * sig * (du / h) ** 2
    for i in range(len(dom.boundary)):
        c = int(dom.boundary.cell[i])
        bv = 0.0 if bvals is None else float(bvals[i])
        du = (bv - u[c]) / (0.5 * h)
        total += s * 0.5 * h * cond.sigma_out * du * du
    return total


# -- dense two-scale assembly -------------------------------------------------

class DenseTwoScale:
    """Dense Hessian of the two-scale bulk energy, assembled by loops.

    Unknown layout matches the production system: [macro, correctors, jumps].
    ``hessian`` is the quadratic form, ``load`` the linear part per unit
    drive factor (so the bulk equations are H x + drive * load = 0 plus the
    membrane mass and law terms on the jump block).
    """

    def __init__(self, system):
        import itertools

        self.system = system
        mac = system.macro
        cfd = system.cfd
        dim = mac.dim
        n_nodes = mac.n_nodes
        n_y = cfd.n_y
        n_cf = cfd.n_facets
        n_tot = n_nodes + n_nodes * n_y + n_nodes * n_cf
        rows = []
        loads = []
        grad = mac.grad.toarray()
        cell = system.cell
        faces = cell.faces
        memb_faces = list(np.flatnonzero(faces.membrane))
        weight = mac.spacing ** dim / 2 ** dim
        for j in range(n_nodes):
            for qpat in itertools.product((0, 1), repeat=dim):
                for phi in range(cfd.n_faces):
                    d = int(faces.axis[phi])
                    face = int(mac.side_of[j, d, qpat[d]])
                    row = np.zeros(n_tot)
                    row[:n_nodes] = grad[face]
                    load = float(mac.grad_load[face])
                    a = int(faces.cell_a[phi])
                    b = int(faces.cell_b[phi])
                    row[n_nodes + j * n_y + a] -= 1.0 / cfd.spacing
                    row[n_nodes + j * n_y + b] += 1.0 / cfd.spacing
                    if faces.membrane[phi]:
                        e = memb_faces.index(phi)
                        sign = 1.0 if cell.inside[a] else -1.0
                        row[n_nodes + n_nodes * n_y + j * n_cf + e] -= \
                            sign / cfd.spacing
                    sw = np.sqrt(weight * cfd.vol * float(cfd.sigma_face[phi]))
                    rows.append(sw * row)
                    loads.append(sw * load)
        T = np.asarray(rows)
        tl = np.asarray(loads)
        self.hessian = T.T @ T
        self.load = T.T @ tl
        self.n_nodes = n_nodes
        self.n_y = n_y
        self.n_cf = n_cf
        self.n_tot = n_tot

    def linear_step_matrix(self, kappa: float):
        """Dense monolithic matrix of one implicit step for a linear law."""
        sys = self.system
        p = sys.params
        n_nodes, n_y, n_cf = self.n_nodes, self.n_y, self.n_cf
        nz = n_nodes + n_nodes * n_y
        M = self.hessian.copy()
        s2 = sys.weights
        for i in range(n_nodes * n_cf):
            M[nz + i, nz + i] += s2[i] * (p.alpha / p.dt + kappa)
        # pin the per-node corrector means (zero-mean constraint)
        for j in range(n_nodes):
            mean_row = np.zeros(self.n_tot)
            mean_row[n_nodes + j * n_y: n_nodes + (j + 1) * n_y] = \
                self.system.cfd.vol
            M += sys.cond.mean * sys.macro.spacing ** sys.macro.dim * \
                np.outer(mean_row, mean_row)
        return M

    def step(self, kappa: float, w_prev: np.ndarray, t_next: float):
        sys = self.system
        p = sys.params
        nz = self.n_nodes + self.n_nodes * self.n_y
        M = self.linear_step_matrix(kappa)
        rhs = -sys.drive.temporal(t_next) * self.load
        rhs[nz:] += sys.weights * (p.alpha / p.dt) * w_prev
        x = scipy.linalg.solve(M, rhs)
        return x[:self.n_nodes], \
            x[self.n_nodes:nz].reshape(self.n_nodes, self.n_y), x[nz:]
