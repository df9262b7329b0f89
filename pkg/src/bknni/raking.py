"""Raking calibration: multiplicative reweighting to hit auxiliary totals.

Solves for lambda such that sum_i d_i * exp(lambda' x_i) * x_i equals a
target vector, by damped Newton iteration.  The multiplicative form keeps
every positive initial weight strictly positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100
ABS_GUARD = 1e-12
EXP_CAP = 700.0  # beyond this exp() overflows float64


class CalibrationError(RuntimeError):
    pass


class NoConvergence(CalibrationError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"raking did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class SingularJacobian(CalibrationError):
    """The calibration system is singular: the target is unreachable."""


@dataclass(frozen=True)
class RakingSolution:
    lam: np.ndarray
    weights: np.ndarray
    residual: float
    iterations: int


def _residual(f: np.ndarray, target: np.ndarray) -> float:
    return float(np.max(np.abs(f) / np.maximum(np.abs(target), ABS_GUARD)))


def rake(initial_weights: np.ndarray, x: np.ndarray, target: np.ndarray,
         tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> RakingSolution:
    """Calibrate initial weights onto the target totals of x.

    Newton steps on F(lambda) = X'(d*exp(X lambda)) - target with step
    halving whenever ||F|| fails to decrease.  Raises SingularJacobian when
    the system degenerates (target outside the attainable cone) and
    NoConvergence when the iteration budget runs out.
    """
    d = np.asarray(initial_weights, dtype=float)
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(target)):
        raise CalibrationError("initial weights must be nonnegative and target finite")
    lam = np.zeros(x.shape[1])
    w = d.copy()
    f = x.T @ w - target
    norm = np.linalg.norm(f)
    it = 0
    while it < max_iter:
        if _residual(f, target) <= tol:
            return RakingSolution(lam, w, _residual(f, target), it)
        jac = x.T @ (w[:, None] * x)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise SingularJacobian("singular calibration Jacobian") from None
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("non-finite Newton step")
        # damped update: halve the step until ||F|| decreases
        scale = 1.0
        for _ in range(60):
            lam_new = lam + scale * step
            expo = x @ lam_new
            if np.max(expo) < EXP_CAP:
                w_new = d * np.exp(expo)
                f_new = x.T @ w_new - target
                norm_new = np.linalg.norm(f_new)
                if np.isfinite(norm_new) and norm_new < norm:
                    break
            scale *= 0.5
        else:
            raise SingularJacobian("step halving stalled; target likely unreachable")
        lam, w, f, norm = lam_new, w_new, f_new, norm_new
        it += 1
    res = _residual(f, target)
    if res <= tol:
        return RakingSolution(lam, w, res, it)
    raise NoConvergence(it, res)
