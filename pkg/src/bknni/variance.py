"""Approximation of the conditional imputation variance of the total.

The donor draw is a stratified balanced sampling of cells, so the variance
of the imputed total can be approximated by the balanced-sampling variance
formula applied to the cell population: a weighted regression of the donor
values on the auxiliaries, with the residual spread scaled by the cell
variances psi * (1 - psi) and a degrees-of-freedom correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataError, Dataset
from .psi import PsiMatrix


@dataclass(frozen=True)
class VarApproxResult:
    var_app: float
    b: np.ndarray
    c_sum: float
    pinv_used: bool = False


def var_app(psi: PsiMatrix, ds: Dataset) -> VarApproxResult:
    """Approximate Var of the imputed total conditional on sample and response.

    Cells with nonzero probability contribute c * d_j^2 * (y_i - b'x_i)^2
    where c = psi * (1 - psi) * n_m k / (n_m k - q) and b solves the
    c-weighted normal equations.  The correction uses q = Q, the number of
    auxiliary variables including the constant.
    """
    n_m = psi.n_m
    k = psi.k if psi.k > 0 else int(np.ceil(len(psi.prob) / max(n_m, 1)))
    q = ds.q
    if n_m * k <= q:
        raise DataError("degenerate correction factor: n_m * k must exceed q")
    keep = psi.prob > 0
    p = psi.prob[keep]
    donor = psi.donor[keep]
    d_j = ds.weights[psi.recipients][psi.recipient[keep]]
    c = p * (1.0 - p) * (n_m * k) / (n_m * k - q)
    w = c * d_j ** 2
    x = ds.aux[donor]
    y = ds.y[donor]
    gram = x.T @ (w[:, None] * x)
    rhs = x.T @ (w * y)
    pinv_used = False
    try:
        b = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(b)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        b = np.linalg.pinv(gram) @ rhs
        pinv_used = True
    resid = y - x @ b
    return VarApproxResult(var_app=float(np.sum(w * resid ** 2)), b=b,
                           c_sum=float(np.sum(c)), pinv_used=pinv_used)
