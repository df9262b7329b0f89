"""Monte Carlo replication harness: response generation, the replication
loop over the six imputation methods, and the RB / RRMSE / RRIV report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import psi as psi_mod
from .dataset import (Dataset, ImputedDataset, complete, estimate_percentile,
                      estimate_total, estimate_variance, load_mu284)
from .imputers import (ImputerConfig, METHODS, draw_bknn, impute_knni,
                       impute_nni, impute_pmm, impute_srs, impute_srswor,
                       plan_bknn)
from .variance import var_app

PARAMETERS = ("total", "p10", "p90", "variance")
BETA_TOL = 1e-10


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    case: int = 1
    m_r: int = 100
    m_i: int = 100
    mean_response_rate: float = 0.7
    k: int = 20
    tol: float = psi_mod.DEFAULT_TOL
    seed: int = 0
    methods: tuple = METHODS

    def __post_init__(self):
        if self.case not in (1, 2):
            raise StudyError("case must be 1 or 2")
        if self.m_r < 1 or self.m_i < 1:
            raise StudyError("replication counts must be >= 1")
        if not 0.0 < self.mean_response_rate < 1.0:
            raise StudyError("mean response rate must lie in (0, 1)")
        for m in self.methods:
            if m not in METHODS:
                raise StudyError(f"unknown method {m!r}")


@dataclass
class SimReport:
    config: StudyConfig
    true_values: dict
    measures: dict            # (method, parameter) -> {"rb", "rrmse", "rriv"}
    mean_var_app: float
    mc_imputation_variance: float
    var_ratio: float
    fallback_count: int
    redraw_count: int
    estimates: dict           # method -> (m_r, m_i, 4) array


def _rng(master_seed: int, *path: int) -> np.random.Generator:
    # counter-based derivation: every (response set, imputation, method)
    # coordinate maps to an independent, reproducible stream
    return np.random.default_rng(np.random.SeedSequence((int(master_seed), *path)))


def calibrate_beta(x_col: np.ndarray, target_rate: float,
                   tol: float = BETA_TOL) -> float:
    """Positive slope of the logistic response model hitting the mean rate.

    Bisection on mean_i 1/(1 + exp(1 - beta * x_i)) - target_rate.
    """
    x = np.asarray(x_col, dtype=float)
    if np.mean(x) <= 0:
        raise StudyError("response covariate must have a positive mean")
    if not 0.0 < target_rate < 1.0:
        raise StudyError("target rate must lie in (0, 1)")

    def gap(beta):
        return float(np.mean(response_propensity(x, beta))) - target_rate

    lo, hi = 0.0, 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise StudyError("target response rate unreachable with beta <= 1e6")
    if gap(lo) > 0:
        raise StudyError("target response rate below the beta -> 0 limit")
    mid = 0.5 * (lo + hi)
    for _ in range(500):
        mid = 0.5 * (lo + hi)
        g = gap(mid)
        if abs(g) <= tol:
            break
        if g < 0:
            lo = mid
        else:
            hi = mid
    return mid


def response_propensity(x_col: np.ndarray, beta: float) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(1.0 - beta * np.asarray(x_col, dtype=float)))


def gen_response(theta: np.ndarray, rng: np.random.Generator,
                 min_respondents: int = 1) -> tuple[np.ndarray, int]:
    """Independent Bernoulli response draws; degenerate patterns are redrawn.

    Returns the indicator vector and the number of redraws performed.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0) or np.any(theta >= 1):
        raise StudyError("response propensities must lie strictly in (0, 1)")
    redraws = 0
    while True:
        resp = (rng.random(len(theta)) < theta).astype(np.int8)
        n_r = int(resp.sum())
        if n_r >= min_respondents and n_r < len(theta):
            return resp, redraws
        redraws += 1
        if redraws > 10000:
            raise StudyError("could not draw a usable response pattern")


def _estimates(imp: ImputedDataset) -> np.ndarray:
    return np.array([estimate_total(imp),
                     estimate_percentile(imp, 0.1),
                     estimate_percentile(imp, 0.9),
                     estimate_variance(imp)])


def run_study(cfg: StudyConfig) -> SimReport:
    """Replicate the census Monte Carlo study on the bundled population."""
    ds_full = load_mu284(cfg.case)
    y_full = ds_full.y.copy()
    full = complete(ds_full)
    truth = {"total": estimate_total(full),
             "p10": estimate_percentile(full, 0.1),
             "p90": estimate_percentile(full, 0.9),
             "variance": estimate_variance(full)}
    # MAR covariate: P85 in Case 1, CS82 in Case 2 (aux column 1 either way)
    x_ell = ds_full.aux[:, 1]
    beta = calibrate_beta(x_ell, cfg.mean_response_rate)
    # the logistic model saturates to 1.0 in float64 for the largest units;
    # keep the propensities strictly inside (0, 1)
    theta = np.clip(response_propensity(x_ell, beta), 1e-12, 1.0 - 1e-12)

    method_idx = {m: t for t, m in enumerate(METHODS)}
    estimates = {m: np.zeros((cfg.m_r, cfg.m_i, len(PARAMETERS)))
                 for m in cfg.methods}
    var_apps = []
    fallback_count = 0
    redraw_count = 0
    bknn_cfg = ImputerConfig(method="bknni", k=cfg.k, tol=cfg.tol)

    for r in range(cfg.m_r):
        resp, redraws = gen_response(theta, _rng(cfg.seed, 0, r),
                                     min_respondents=max(ds_full.q + 1, cfg.k))
        redraw_count += redraws
        ds = ds_full.with_response(resp, y_full)
        try:
            deterministic = {}
            if "nni" in cfg.methods:
                deterministic["nni"] = _estimates(impute_nni(ds))
            if "pmm" in cfg.methods:
                deterministic["pmm"] = _estimates(impute_pmm(ds))
            plan = None
            if "bknni" in cfg.methods:
                plan = plan_bknn(ds, bknn_cfg)
                fallback_count += int(plan.fallback)
                var_apps.append(var_app(plan.psi, ds).var_app)
            for i in range(cfg.m_i):
                for m in cfg.methods:
                    if m in deterministic:
                        estimates[m][r, i] = deterministic[m]
                        continue
                    rng = _rng(cfg.seed, 1, r, i, method_idx[m])
                    if m == "srs":
                        imp = impute_srs(ds, rng)
                    elif m == "srswor":
                        imp = impute_srswor(ds, rng)
                    elif m == "knni":
                        imp = impute_knni(ds, cfg.k, rng)
                    else:
                        imp, _ = draw_bknn(plan, ds, rng)
                    estimates[m][r, i] = _estimates(imp)
        except Exception as exc:
            raise StudyError(f"response set {r} failed: {exc}") from exc

    measures = {}
    mc_iv_total = 0.0
    for m in cfg.methods:
        est = estimates[m]
        for pidx, param in enumerate(PARAMETERS):
            vals = est[:, :, pidx]
            th = truth[param]
            rb = (float(np.mean(vals)) - th) / th
            rrmse = float(np.sqrt(np.mean((vals - th) ** 2))) / th
            if cfg.m_i > 1:
                iv = float(np.mean(np.var(vals, axis=1, ddof=1)))
            else:
                iv = 0.0
            rriv = float(np.sqrt(iv)) / th
            measures[(m, param)] = {"rb": rb, "rrmse": rrmse, "rriv": rriv}
            if m == "bknni" and param == "total":
                mc_iv_total = iv
    mean_va = float(np.mean(var_apps)) if var_apps else float("nan")
    ratio = mean_va / mc_iv_total if mc_iv_total > 0 else float("nan")
    return SimReport(config=cfg, true_values=truth, measures=measures,
                     mean_var_app=mean_va, mc_imputation_variance=mc_iv_total,
                     var_ratio=ratio, fallback_count=fallback_count,
                     redraw_count=redraw_count, estimates=estimates)


def report_to_csv(report: SimReport) -> str:
    lines = ["method,parameter,RB,RRMSE,RRIV"]
    for m in report.config.methods:
        for p in PARAMETERS:
            meas = report.measures[(m, p)]
            lines.append(f"{m},{p},{meas['rb']!r},{meas['rrmse']!r},{meas['rriv']!r}")
    lines.append("")
    lines.append("case,mean_var_app,mc_iv,ratio")
    lines.append(f"{report.config.case},{report.mean_var_app!r},"
                 f"{report.mc_imputation_variance!r},{report.var_ratio!r}")
    return "\n".join(lines) + "\n"


def report_to_markdown(report: SimReport) -> str:
    out = [f"# Simulation report (case {report.config.case}, "
           f"M_R={report.config.m_r}, M_I={report.config.m_i}, "
           f"k={report.config.k}, seed={report.config.seed})", ""]
    names = {"total": "Total", "p10": "10th percentile",
             "p90": "90th percentile", "variance": "Variance"}
    for p in PARAMETERS:
        out.append(f"## {names[p]}")
        out.append("")
        out.append("| Method | RB | RRMSE | RRIV |")
        out.append("|---|---:|---:|---:|")
        for m in report.config.methods:
            meas = report.measures[(m, p)]
            out.append(f"| {m.upper()} | {meas['rb']:.3f} | "
                       f"{meas['rrmse']:.3f} | {meas['rriv']:.3f} |")
        out.append("")
    out.append("## Imputation-variance approximation (total)")
    out.append("")
    out.append("| Mean approximated variance | Monte Carlo variance | Ratio |")
    out.append("|---:|---:|---:|")
    out.append(f"| {report.mean_var_app:.2f} | "
               f"{report.mc_imputation_variance:.2f} | {report.var_ratio:.2f} |")
    out.append("")
    out.append(f"Fallbacks to the unbalanced k-NN matrix: {report.fallback_count}; "
               f"degenerate response sets redrawn: {report.redraw_count}.")
    out.append("")
    out.append("Conventions: percentiles are weighted lower empirical quantiles; "
               "the variance parameter uses divisor sum(d).")
    return "\n".join(out) + "\n"


def report_diagnostics(report: SimReport) -> str:
    payload = {
        "case": report.config.case,
        "m_r": report.config.m_r,
        "m_i": report.config.m_i,
        "k": report.config.k,
        "seed": report.config.seed,
        "true_values": report.true_values,
        "mean_var_app": report.mean_var_app,
        "mc_imputation_variance": report.mc_imputation_variance,
        "var_ratio": report.var_ratio,
        "fallback_count": report.fallback_count,
        "redraw_count": report.redraw_count,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
