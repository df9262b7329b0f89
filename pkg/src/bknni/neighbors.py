"""Mahalanobis metric on the nonconstant auxiliary variables and k-NN donor sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataError, Dataset

RIDGE_CONDITION_LIMIT = 1e12
RIDGE_EPS = 1e-8


@dataclass(frozen=True)
class KnnSets:
    """Ordered donor-candidate lists for every nonrespondent.

    ``neighbors[c]`` holds the dataset positions of the k nearest respondents
    of the c-th nonrespondent, by ascending distance (ties by unit id).
    """

    k: int
    recipients: np.ndarray  # n_m dataset positions of the nonrespondents
    neighbors: np.ndarray   # n_m x k dataset positions, ascending distance
    distances: np.ndarray   # n_m x k float
    ridged: bool = False
    dropped_columns: tuple[int, ...] = ()


def estimate_covariance(ds: Dataset) -> tuple[np.ndarray, bool, tuple[int, ...]]:
    """Sample covariance of the nonconstant auxiliaries over the whole sample.

    Uses divisor n-1.  Columns that are in fact constant are dropped from the
    metric; a near-singular matrix gets a small ridge on the diagonal.
    Returns (covariance, ridged flag, positions of dropped aux columns).
    """
    if ds.n < 2:
        raise DataError("need at least 2 units to estimate a covariance")
    x = ds.aux[:, 1:]
    keep = [j for j in range(x.shape[1]) if np.ptp(x[:, j]) > 0]
    dropped = tuple(j + 1 for j in range(x.shape[1]) if j not in keep)
    x = x[:, keep]
    if x.shape[1] == 0:
        return np.empty((0, 0)), False, dropped
    cov = np.cov(x, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    ridged = False
    if np.linalg.cond(cov) > RIDGE_CONDITION_LIMIT:
        cov = cov + RIDGE_EPS * np.mean(np.diag(cov)) * np.eye(cov.shape[0])
        ridged = True
    return cov, ridged, dropped


def mahalanobis(xi: np.ndarray, xj: np.ndarray, sigma_inv: np.ndarray) -> float:
    """Mahalanobis distance between two nonconstant auxiliary vectors."""
    delta = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return float(np.sqrt(delta @ sigma_inv @ delta))


def _metric_columns(ds: Dataset, dropped: tuple[int, ...]) -> np.ndarray:
    cols = [j for j in range(1, ds.q) if j not in dropped]
    return ds.aux[:, cols]


def knn_sets(ds: Dataset, k: int) -> KnnSets:
    """The k nearest respondents of every nonrespondent, Mahalanobis metric.

    Distance ties are broken by ascending unit id so the support is
    deterministic.
    """
    if k < 1 or k > ds.n_r:
        raise DataError(f"k must lie in [1, n_r={ds.n_r}]")
    cov, ridged, dropped = estimate_covariance(ds)
    resp = ds.respondents
    # order candidates by unit id so the stable sort below implements the
    # deterministic tie rule even when file order differs from id order
    resp = resp[np.argsort(ds.unit_ids[resp], kind="stable")]
    miss = ds.nonrespondents
    x = _metric_columns(ds, dropped)
    if x.shape[1] == 0:
        # no usable metric: all distances zero, ties resolved by unit id
        dist = np.zeros((len(miss), len(resp)))
    else:
        sigma_inv = np.linalg.inv(cov)
        diff = x[miss][:, None, :] - x[resp][None, :, :]
        dist = np.sqrt(np.einsum("mri,ij,mrj->mr", diff, sigma_inv, diff))
        dist = np.maximum(dist, 0.0)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    neigh = resp[order]
    d_sel = np.take_along_axis(dist, order, axis=1)
    return KnnSets(k=k, recipients=miss, neighbors=neigh, distances=d_sel,
                   ridged=ridged, dropped_columns=dropped)
