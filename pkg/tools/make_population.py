"""Generate the bundled 284-municipality study population.

The original MU284 population (Sarndal, Swensson & Wretman 1992) is not
redistributable here, so the package ships a synthetic stand-in built to
match its published summary profile:

* N = 284, census weights;
* revenue variable RMT85 and auxiliaries P85, P75 (population in
  thousands, heavily right-skewed, three dominant cities) and CS82
  (council seats, small integers);
* corr(RMT85, P85) ~ 0.96, corr(RMT85, P75) ~ 0.97, corr(RMT85, CS82) ~ 0.52;
* OLS R^2 of RMT85 on (P85, P75, CS82) ~ 0.94, on CS82 alone ~ 0.27.

The generator calibrates its noise scales by bisection to hit the three
correlations, then searches seeds until the rounded integer data still
meets every target.  Run from the repository root:

    python3 tools/make_population.py src/bknni/data/mu284.csv
"""

from __future__ import annotations

import sys

import numpy as np

N = 284
TARGET_C1 = 0.96   # corr(y, P85)
TARGET_C2 = 0.97   # corr(y, P75)
TARGET_C3 = 0.52   # corr(y, CS82)
TARGET_R2_FULL = 0.94
TARGET_R2_CS = 0.27
SLOPE = 12.0       # revenue per thousand inhabitants
ALPHA = 1.5        # heteroscedasticity exponent of the revenue noise
BIG_CITIES = (653.0, 425.0, 229.0)


def corr(a, b):
    return float(np.corrcoef(a, b)[0, 1])


def r_squared(y, x):
    xx = np.column_stack([np.ones(len(y)), x])
    coef, _, _, _ = np.linalg.lstsq(xx, y, rcond=None)
    resid = y - xx @ coef
    return 1.0 - np.sum(resid ** 2) / np.sum((y - np.mean(y)) ** 2)


def bisect(fn, lo, hi, steps=60):
    flo = fn(lo)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if (fn(mid) > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def candidate(seed):
    rng = np.random.default_rng(seed)
    p85 = np.exp(rng.normal(2.75, 0.78, N - len(BIG_CITIES)))
    p85 = np.maximum(p85, 3.0)
    p85 = np.concatenate([p85, BIG_CITIES])
    rng.shuffle(p85)
    z_g = rng.standard_normal(N)
    z_e = rng.standard_normal(N)
    z_c = rng.standard_normal(N)

    def build_p75(sg):
        return np.maximum(p85 * (1.0 - 0.03 + sg * z_g), 2.0)

    def build_y(p75, s):
        # noise grows faster than proportionally with size, so small
        # municipalities are nearly deterministic given their auxiliaries
        return SLOPE * p75 + s * p75 ** ALPHA * z_e

    def noise_for_c2(p75):
        # residual scale driving corr(y, P75) down to its target
        return bisect(lambda s: corr(build_y(p75, s), p75) - TARGET_C2, 0.0, 400.0)

    def c1_gap(sg):
        p75 = build_p75(sg)
        y = build_y(p75, noise_for_c2(p75))
        return corr(y, p85) - TARGET_C1

    sg = bisect(c1_gap, 0.005, 0.40)
    p75 = build_p75(sg)
    s = noise_for_c2(p75)
    y = build_y(p75, s)

    def build_cs(sc):
        seats = 1.2 + 4.4 * np.log(p85) + sc * z_c
        return np.clip(np.round(seats), 0.0, 49.0)

    sc = bisect(lambda v: corr(y, build_cs(v)) - TARGET_C3, 0.05, 30.0)
    cs82 = build_cs(sc)

    # freeze to integers, as published municipal figures would be
    p85 = np.round(p85)
    p75 = np.round(p75)
    y = np.maximum(np.round(y), 1.0)
    return p85, p75, cs82, y


def score(p85, p75, cs82, y):
    """Worst miss across the five targets, in units of their tolerance."""
    x_full = np.column_stack([p85, p75, cs82])
    return max(
        abs(corr(y, p85) - TARGET_C1) / 0.005,
        abs(corr(y, p75) - TARGET_C2) / 0.005,
        abs(corr(y, cs82) - TARGET_C3) / 0.005,
        abs(r_squared(y, x_full) - TARGET_R2_FULL) / 0.01,
        abs(r_squared(y, cs82[:, None]) - TARGET_R2_CS) / 0.01,
    )


def main():
    # usage: make_population.py [output.csv] [seed]
    # Without a seed, the best-scoring seed in 0..299 is used.  The shipped
    # CSV pins a specific low-score seed whose Monte Carlo imputation-variance
    # diagnostics also match the published magnitudes.
    out = sys.argv[1] if len(sys.argv) > 1 else "src/bknni/data/mu284.csv"
    if len(sys.argv) > 2:
        seed = int(sys.argv[2])
    else:
        seed = min(range(300), key=lambda s: score(*candidate(s)))
    p85, p75, cs82, y = candidate(seed)
    if score(p85, p75, cs82, y) >= 1.0:
        raise SystemExit("no acceptable seed found")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("LABEL,P85,P75,CS82,RMT85\n")
        for i in range(N):
            fh.write(f"{i + 1},{int(p85[i])},{int(p75[i])},"
                     f"{int(cs82[i])},{int(y[i])}\n")
    x_full = np.column_stack([p85, p75, cs82])
    print(f"seed={seed}")
    print(f"corr(y,P85)={corr(y, p85):.4f} corr(y,P75)={corr(y, p75):.4f} "
          f"corr(y,CS82)={corr(y, cs82):.4f}")
    print(f"R2(full)={r_squared(y, x_full):.4f} R2(CS82)={r_squared(y, cs82[:, None]):.4f}")
    print(f"total={y.sum():.0f} mean={y.mean():.1f} max={y.max():.0f}")


if __name__ == "__main__":
    main()
