"""The six hot-deck imputation methods behind a single interface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import psi as psi_mod
from .dataset import DataError, Dataset, ImputedDataset
from .donors import (CellProblem, DonorAssignment, assignment_to_imputed,
                     build_cell_problem, flight_phase, landing_phase)
from .neighbors import knn_sets

METHODS = ("nni", "pmm", "srs", "srswor", "knni", "bknni")


@dataclass(frozen=True)
class ImputerConfig:
    method: str = "bknni"
    k: int = 20
    k_auto: bool = False
    k_max: int | None = None
    tol: float = psi_mod.DEFAULT_TOL
    max_outer: int = psi_mod.DEFAULT_MAX_OUTER
    fallback_to_knni: bool = True
    forbidden: tuple = ()
    seed: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown method {self.method!r}")
        if self.k < 1:
            raise DataError("k must be >= 1")


def _donor_imputed(ds: Dataset, donor_of: np.ndarray, fallback=False) -> ImputedDataset:
    return ImputedDataset(ds, ds.y[donor_of], donor_of, fallback=fallback)


def impute_nni(ds: Dataset) -> ImputedDataset:
    """Deterministic nearest-neighbor donor (Mahalanobis metric)."""
    knn = knn_sets(ds, 1)
    return _donor_imputed(ds, knn.neighbors[:, 0])


def impute_pmm(ds: Dataset) -> ImputedDataset:
    """Predictive mean matching on a weighted least-squares fit.

    Deterministic variant: each recipient takes the observed y of the
    respondent with the closest predicted mean (ties by unit id).
    """
    resp = ds.respondents
    if len(resp) < ds.q:
        raise DataError("need at least Q respondents to fit the regression")
    xr = ds.aux[resp]
    sw = np.sqrt(ds.weights[resp])
    coef, _, rank, _ = np.linalg.lstsq(sw[:, None] * xr, sw * ds.y[resp], rcond=None)
    pred = ds.aux @ coef
    # candidates in unit-id order so argmin's first-hit rule breaks ties by id
    cand = resp[np.argsort(ds.unit_ids[resp], kind="stable")]
    gap = np.abs(pred[ds.nonrespondents][:, None] - pred[cand][None, :])
    donor_of = cand[np.argmin(gap, axis=1)]
    return _donor_imputed(ds, donor_of)


def impute_srs(ds: Dataset, rng: np.random.Generator) -> ImputedDataset:
    """Uniform random donor per recipient, with replacement."""
    resp = ds.respondents
    donor_of = resp[rng.integers(0, len(resp), size=ds.n_m)]
    return _donor_imputed(ds, donor_of)


def impute_srswor(ds: Dataset, rng: np.random.Generator) -> ImputedDataset:
    """Distinct random donors, assigned to recipients in random order."""
    resp = ds.respondents
    if ds.n_m > len(resp):
        raise DataError("without-replacement selection needs n_m <= n_r")
    donor_of = rng.choice(resp, size=ds.n_m, replace=False)
    return _donor_imputed(ds, donor_of)


def impute_knni(ds: Dataset, k: int, rng: np.random.Generator) -> ImputedDataset:
    """Uniform random donor among each recipient's k nearest respondents."""
    knn = knn_sets(ds, k)
    pick = rng.integers(0, k, size=ds.n_m)
    return _donor_imputed(ds, knn.neighbors[np.arange(ds.n_m), pick])


@dataclass(frozen=True)
class BknnPlan:
    """Per-response-set preparation for balanced k-NN imputation.

    Building the probability matrix and the cell problem is deterministic
    and can be reused across repeated random donor draws.
    """

    psi: psi_mod.PsiMatrix
    problem: CellProblem
    k_used: int
    fallback: bool


def plan_bknn(ds: Dataset, cfg: ImputerConfig) -> BknnPlan:
    """Build the balanced probability matrix, falling back to the plain
    k-NN matrix when no balanced solution exists and the config allows it."""
    lower = psi_mod.min_feasible_k(ds.n_m, ds.q)
    if cfg.k < lower:
        raise DataError(f"k={cfg.k} below the feasibility bound {lower}")
    fallback = False
    if cfg.k_auto:
        try:
            k_used, mat = psi_mod.select_k(ds, k_start=cfg.k, k_max=cfg.k_max,
                                           tol=cfg.tol, max_outer=cfg.max_outer,
                                           forbidden=cfg.forbidden)
        except psi_mod.AllInfeasible:
            if not cfg.fallback_to_knni:
                raise
            fallback, k_used = True, cfg.k
    else:
        k_used = cfg.k
        psi0 = psi_mod.psi_knn(knn_sets(ds, cfg.k))
        if cfg.forbidden:
            psi0 = psi_mod.apply_edit_rules(psi0, cfg.forbidden, ds)
        try:
            mat = psi_mod.compute_psi_bknn(psi0, ds, tol=cfg.tol,
                                           max_outer=cfg.max_outer)
        except psi_mod.Infeasible:
            if not cfg.fallback_to_knni:
                raise
            fallback = True
    if fallback:
        mat = psi_mod.psi_knn(knn_sets(ds, k_used))
        if cfg.forbidden:
            mat = psi_mod.apply_edit_rules(mat, cfg.forbidden, ds)
        mat = psi_mod.PsiMatrix(mat.donor, mat.recipient, mat.prob, mat.recipients,
                                mat.k, psi_mod.balance_residual(mat, ds))
    return BknnPlan(psi=mat, problem=build_cell_problem(mat, ds),
                    k_used=k_used, fallback=fallback)


def draw_bknn(plan: BknnPlan, ds: Dataset,
              rng: np.random.Generator) -> tuple[ImputedDataset, DonorAssignment]:
    """One random donor realization from a prepared plan."""
    v = flight_phase(plan.problem, rng)
    assignment = landing_phase(v, plan.problem, rng)
    imputed = _donor_imputed(ds, assignment.donor_of, fallback=plan.fallback)
    return imputed, assignment


def impute_bknn(ds: Dataset, cfg: ImputerConfig,
                rng: np.random.Generator) -> ImputedDataset:
    """Balanced k-NN hot-deck: balanced probabilities, stratified draw."""
    plan = plan_bknn(ds, cfg)
    imputed, _ = draw_bknn(plan, ds, rng)
    return imputed


def impute(ds: Dataset, cfg: ImputerConfig,
           rng: np.random.Generator | None = None) -> ImputedDataset:
    """Dispatch on the configured method tag."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if cfg.method == "nni":
        return impute_nni(ds)
    if cfg.method == "pmm":
        return impute_pmm(ds)
    if cfg.method == "srs":
        return impute_srs(ds, rng)
    if cfg.method == "srswor":
        return impute_srswor(ds, rng)
    if cfg.method == "knni":
        return impute_knni(ds, cfg.k, rng)
    return impute_bknn(ds, cfg, rng)
