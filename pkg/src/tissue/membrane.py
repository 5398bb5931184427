"""Backward-Euler Newton driver for the membrane jump dynamics.

Both the resolved-microstructure solver and the two-scale solver reduce, at
every implicit time step, to the same structure: the bulk potential is a
quasi-static slave of the membrane jump vector, so after eliminating it the
step solves

    rate_coeff * (w - w_prev)/dt + f(w / arg_scale) = q(w, t)

per facet, with an affine flux response ``q`` whose weighted matrix is
symmetric negative semidefinite.  Backward Euler plus monotone ``f`` makes
the Newton matrix symmetric positive definite, which is what gives the
discrete Lyapunov decrease its unconditional sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NewtonError
from .nonlinearity import Nonlinearity


@dataclass(frozen=True)
class SolverParams:
    """Time step, capacitance constant and iteration tolerances."""

    alpha: float = 1.0
    dt: float = 1e-3
    newton_tol: float = 1e-13
    newton_max_iter: int = 30
    newton_shift: float = 1e-2
    linear_tol: float = 1e-10

    def __post_init__(self):
        if self.alpha <= 0 or self.dt <= 0:
            raise ValueError("alpha and dt must be positive")
        if self.newton_tol <= 0 or self.linear_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class FluxResponse:
    """Affine membrane flux map after bulk elimination.

    In facet-weighted form:  diag(weights) q(w, t) = drive(t) * load - response @ w
    with ``response`` dense symmetric positive semidefinite.
    """

    weights: np.ndarray
    response: np.ndarray
    load: np.ndarray


@dataclass
class StepResult:
    jump: np.ndarray
    iterations: int
    residual: float
    used_shift: bool
    history: list = field(default_factory=list)


class JumpStepper:
    """Advances the jump vector by one implicit step via Newton."""

    def __init__(self, flux: FluxResponse, law: Nonlinearity,
                 temporal: Callable[[float], float], rate_coeff: float,
                 arg_scale: float, params: SolverParams):
        self.flux = flux
        self.law = law
        self.temporal = temporal
        self.rate_coeff = rate_coeff
        self.arg_scale = arg_scale
        self.params = params
        self._linear_factor: Optional[tuple] = None

    # -- residual and Jacobian -------------------------------------------

    def _weighted_residual(self, w: np.ndarray, w_prev: np.ndarray,
                           drive: float, dt: float) -> np.ndarray:
        fl = self.flux
        rate = self.rate_coeff * (w - w_prev) / dt
        return (fl.weights * (rate + self.law(w / self.arg_scale))
                + fl.response @ w - drive * fl.load)

    def _jacobian(self, w: np.ndarray, dt: float,
                  shift: float = 0.0) -> np.ndarray:
        fl = self.flux
        diag = fl.weights * (self.rate_coeff / dt
                             + (self.law.deriv(w / self.arg_scale) + shift)
                             / self.arg_scale)
        jac = fl.response.copy()
        jac[np.diag_indices_from(jac)] += diag
        return jac

    def _tolerance(self, w_prev: np.ndarray, drive: float, dt: float) -> float:
        # reference: flux/data scale, not the (much larger) Jacobian scale;
        # the floor term covers roundoff of the rate term at that scale
        fl = self.flux
        scale = max(
            1.0,
            abs(drive) * float(np.max(np.abs(fl.load / fl.weights), initial=0.0)),
            float(np.max(np.abs(self.law(w_prev / self.arg_scale)), initial=0.0)),
        )
        floor = 10.0 * np.finfo(float).eps * self.rate_coeff / dt \
            * max(1.0, float(np.max(np.abs(w_prev), initial=0.0)))
        return self.params.newton_tol * scale + floor

    # -- stepping ---------------------------------------------------------

    def step(self, t_next: float, w_prev: np.ndarray, dt: float) -> StepResult:
        drive = self.temporal(t_next)
        if self.law.is_linear:
            return self._linear_step(w_prev, drive, dt)
        res = self._newton(w_prev, drive, dt, shift=0.0)
        if res is not None:
            return res
        res = self._newton(w_prev, drive, dt, shift=self.params.newton_shift)
        if res is not None:
            res.used_shift = True
            return res
        raise NewtonError(
            "Newton failed to converge, including the shifted-Jacobian retry",
            residuals=self._last_history)

    def _linear_step(self, w_prev: np.ndarray, drive: float,
                     dt: float) -> StepResult:
        fl = self.flux
        key = (dt, self.law.linear_slope, self.law.shift)
        if self._linear_factor is None or self._linear_factor[0] != key:
            jac = fl.response.copy()
            jac[np.diag_indices_from(jac)] += fl.weights * (
                self.rate_coeff / dt + self.law.linear_slope / self.arg_scale)
            self._linear_factor = (key, cho_factor(jac))
        rhs = fl.weights * self.rate_coeff / dt * w_prev + drive * fl.load
        w = cho_solve(self._linear_factor[1], rhs)
        resid = self._weighted_residual(w, w_prev, drive, dt)
        rnorm = float(np.max(np.abs(resid / fl.weights), initial=0.0))
        if rnorm > self._tolerance(w_prev, drive, dt):
            raise NewtonError(
                f"linear implicit step residual {rnorm:.3e} above tolerance",
                residuals=[rnorm])
        return StepResult(jump=w, iterations=1, residual=rnorm,
                          used_shift=False, history=[rnorm])

    def _newton(self, w_prev: np.ndarray, drive: float, dt: float,
                shift: float) -> Optional[StepResult]:
        fl = self.flux
        tol = self._tolerance(w_prev, drive, dt)
        w = w_prev.copy()
        resid = self._weighted_residual(w, w_prev, drive, dt)
        rnorm = float(np.max(np.abs(resid / fl.weights), initial=0.0))
        history = [rnorm]
        for it in range(1, self.params.newton_max_iter + 1):
            if rnorm <= tol:
                self._last_history = history
                return StepResult(jump=w, iterations=it - 1, residual=rnorm,
                                  used_shift=shift > 0.0, history=history)
            jac = self._jacobian(w, dt, shift=shift)
            try:
                dw = cho_solve(cho_factor(jac), -resid)
            except np.linalg.LinAlgError:
                break
            # backtracking keeps the overshoot of strongly convex laws in check
            step_len = 1.0
            for _ in range(8):
                w_try = w + step_len * dw
                resid_try = self._weighted_residual(w_try, w_prev, drive, dt)
                rnorm_try = float(np.max(np.abs(resid_try / fl.weights),
                                         initial=0.0))
                if rnorm_try < rnorm or rnorm_try <= tol:
                    break
                step_len *= 0.5
            w, resid, rnorm = w_try, resid_try, rnorm_try
            history.append(rnorm)
            # stagnation: bail out so the caller retries with a shift
            if shift == 0.0 and len(history) > 4 and \
                    history[-1] > 0.9 * history[-2] > 0.0:
                break
        self._last_history = history
        if rnorm <= tol:
            return StepResult(jump=w, iterations=len(history) - 1, residual=rnorm,
                              used_shift=shift > 0.0, history=history)
        return None
