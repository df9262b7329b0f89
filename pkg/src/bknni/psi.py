"""Imputation-probability matrices and the iterated-raking construction.

A PsiMatrix is stored as flat parallel cell arrays (donor position,
recipient index, probability).  Columns are recipients; every column sums
to 1.  The balanced variant is obtained by alternating raking calibration
of the aggregated donor weights with column normalization until the
auxiliary-balance residual drops below tolerance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import DataError, Dataset
from .neighbors import KnnSets, knn_sets
from .raking import CalibrationError, rake

DEFAULT_TOL = 1e-6
DEFAULT_MAX_OUTER = 500
COLUMN_SUM_TOL = 1e-12
STALL_WINDOW = 10
STALL_EPS = 1e-12


class Infeasible(RuntimeError):
    """No balanced imputation-probability matrix exists for this support."""


class AllInfeasible(Infeasible):
    def __init__(self, k_max: int):
        super().__init__(f"no feasible neighborhood size up to k={k_max}")
        self.k_max = k_max


class EmptyColumn(DataError):
    def __init__(self, recipient_id):
        super().__init__(f"every candidate donor of recipient {recipient_id} is forbidden")
        self.recipient_id = recipient_id


@dataclass(frozen=True)
class PsiMatrix:
    """Column-stochastic imputation probabilities over donors x recipients."""

    donor: np.ndarray       # cell -> dataset position of the candidate donor
    recipient: np.ndarray   # cell -> index into `recipients`
    prob: np.ndarray        # cell -> probability
    recipients: np.ndarray  # dataset positions of the nonrespondents
    k: int                  # neighborhood size used (0 for the SRS matrix)
    balance_residual: np.ndarray | None = None

    @property
    def n_m(self) -> int:
        return len(self.recipients)

    def column_sums(self) -> np.ndarray:
        return np.bincount(self.recipient, weights=self.prob, minlength=self.n_m)

    def check(self) -> None:
        if np.any(self.prob < 0) or np.any(self.prob > 1 + 1e-12):
            raise DataError("probabilities must lie in [0, 1]")
        if np.max(np.abs(self.column_sums() - 1.0)) > COLUMN_SUM_TOL * 10:
            raise DataError("columns must sum to 1")

    def to_csv(self, ds: Dataset, path) -> None:
        """Audit export: donor_id, recipient_id, probability."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["donor_id", "recipient_id", "probability"])
            rec_ids = ds.unit_ids[self.recipients]
            for c in range(len(self.prob)):
                writer.writerow([int(ds.unit_ids[self.donor[c]]),
                                 int(rec_ids[self.recipient[c]]),
                                 repr(float(self.prob[c]))])


def psi_srs(ds: Dataset) -> PsiMatrix:
    """Uniform donor probabilities 1/n_r for every recipient."""
    resp = ds.respondents
    miss = ds.nonrespondents
    n_r, n_m = len(resp), len(miss)
    donor = np.tile(resp, n_m)
    recipient = np.repeat(np.arange(n_m), n_r)
    prob = np.full(n_r * n_m, 1.0 / n_r)
    return PsiMatrix(donor, recipient, prob, miss, k=0)


def psi_knn(knn: KnnSets) -> PsiMatrix:
    """Probability 1/k on each of the k nearest respondents of a recipient."""
    n_m, k = knn.neighbors.shape
    donor = knn.neighbors.ravel()
    recipient = np.repeat(np.arange(n_m), k)
    prob = np.full(n_m * k, 1.0 / k)
    return PsiMatrix(donor, recipient, prob, knn.recipients, k=k)


def apply_edit_rules(psi: PsiMatrix, forbidden, ds: Dataset) -> PsiMatrix:
    """Zero out forbidden (donor_id, recipient_id) pairs and rescale columns."""
    forbidden = {(int(a), int(b)) for a, b in forbidden}
    if not forbidden:
        return psi
    rec_ids = ds.unit_ids[psi.recipients]
    keep = np.array([(int(ds.unit_ids[psi.donor[c]]), int(rec_ids[psi.recipient[c]]))
                     not in forbidden for c in range(len(psi.prob))])
    donor = psi.donor[keep]
    recipient = psi.recipient[keep]
    prob = psi.prob[keep].copy()
    colsum = np.bincount(recipient, weights=prob, minlength=psi.n_m)
    if np.any(colsum <= 0):
        j = int(np.argmin(colsum))
        raise EmptyColumn(int(rec_ids[j]))
    prob /= colsum[recipient]
    return replace(psi, donor=donor, recipient=recipient, prob=prob)


def balance_residual(psi: PsiMatrix, ds: Dataset) -> np.ndarray:
    """Per-auxiliary relative gap between imputed and observed weighted totals."""
    d_m = ds.weights[psi.recipients]
    cell_w = d_m[psi.recipient] * psi.prob
    lhs = cell_w @ ds.aux[psi.donor]
    rhs = ds.aux[psi.recipients].T @ d_m
    return np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-12)


def compute_psi_bknn(psi0: PsiMatrix, ds: Dataset,
                     tol: float = DEFAULT_TOL,
                     max_outer: int = DEFAULT_MAX_OUTER) -> PsiMatrix:
    """Balance a column-stochastic starting matrix on the auxiliary totals.

    Alternates raking of the aggregated donor weights with column
    normalization; the support of psi0 is preserved throughout.  Raises
    Infeasible when the inner calibration fails or the outer loop stalls or
    exhausts its budget, which signals that no balanced matrix exists for
    this support (the caller may then increase k).
    """
    psi0.check()
    resp = np.unique(psi0.donor)
    resp_idx = np.searchsorted(resp, psi0.donor)
    xr = ds.aux[resp]
    d_m = ds.weights[psi0.recipients]
    target = ds.aux[psi0.recipients].T @ d_m
    cell_dj = d_m[psi0.recipient]
    n_r = len(resp)

    prob = psi0.prob.copy()
    residual_history: list[float] = []
    for outer in range(max_outer + 1):
        lhs = (cell_dj * prob) @ ds.aux[psi0.donor]
        res_vec = np.abs(lhs - target) / np.maximum(np.abs(target), 1e-12)
        res = float(np.max(res_vec))
        if res <= tol:
            return replace(psi0, prob=prob, balance_residual=res_vec)
        if outer == max_outer:
            raise Infeasible(f"no convergence after {max_outer} outer iterations "
                             f"(residual {res:.3e})")
        residual_history.append(res)
        if len(residual_history) > STALL_WINDOW and \
                residual_history[-STALL_WINDOW - 1] - res < STALL_EPS:
            raise Infeasible(f"outer iteration stalled at residual {res:.3e}")
        d_tilde = np.bincount(resp_idx, weights=cell_dj * prob, minlength=n_r)
        try:
            sol = rake(d_tilde, xr, target)
        except CalibrationError as exc:
            raise Infeasible(f"inner calibration failed: {exc}") from exc
        factor = np.exp(xr @ sol.lam)
        prob = prob * factor[resp_idx]
        colsum = np.bincount(psi0.recipient, weights=prob, minlength=psi0.n_m)
        prob = prob / colsum[psi0.recipient]
    raise AssertionError("unreachable")


def min_feasible_k(n_m: int, q: int) -> int:
    """Smallest neighborhood size not ruled out by the constraint count."""
    return max(1, math.ceil((n_m + q) / n_m))


def select_k(ds: Dataset, knn_fn=knn_sets, k_start: int | None = None,
             k_max: int | None = None, tol: float = DEFAULT_TOL,
             max_outer: int = DEFAULT_MAX_OUTER,
             forbidden=None) -> tuple[int, PsiMatrix]:
    """Increase k from the smallest admissible value until balancing succeeds."""
    lower = min_feasible_k(ds.n_m, ds.q)
    k = lower if k_start is None else max(int(k_start), lower)
    k_max = ds.n_r if k_max is None else min(int(k_max), ds.n_r)
    while k <= k_max:
        psi0 = psi_knn(knn_fn(ds, k))
        if forbidden:
            psi0 = apply_edit_rules(psi0, forbidden, ds)
        try:
            return k, compute_psi_bknn(psi0, ds, tol=tol, max_outer=max_outer)
        except Infeasible:
            k += 1
    raise AllInfeasible(k_max)
