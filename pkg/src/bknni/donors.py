"""Donor realization by stratified balanced sampling on the cell population.

Every nonzero probability cell (donor candidate, recipient) becomes a unit
of a sampling problem: exactly one cell must be selected per recipient
stratum while the weighted auxiliary profile of the selected donors stays
as close as possible to its expectation.  The flight phase walks the
probability vector along null-space directions of the balancing rows; the
landing phase relaxes the overall-balance rows one at a time (last
auxiliary first, constant last) until everything is integral.

The walk itself runs in numba kernels: strata are folded in one at a time
and the pool of fractional cells is squeezed after each addition, which
keeps every elimination step tiny.  All randomness is pre-drawn from the
caller's generator, so results are reproducible from a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import DataError, Dataset, ImputedDataset
from .psi import PsiMatrix

INT_TOL = 1e-9
RANK_TOL = 1e-10


@dataclass(frozen=True)
class CellProblem:
    """Stratified balanced-sampling problem over nonzero psi cells."""

    donor: np.ndarray       # cell -> dataset position of the candidate donor
    stratum: np.ndarray     # cell -> recipient index (cells sorted by stratum)
    pi: np.ndarray          # cell inclusion probability (= psi entry)
    x_dot: np.ndarray       # cells x Q balancing vectors d_j * psi * x_i
    bal: np.ndarray         # cells x Q rows x_dot / pi, column-rescaled
    recipients: np.ndarray  # dataset positions of the nonrespondents
    stratum_start: np.ndarray  # stratum boundaries into the cell arrays

    @property
    def n_cells(self) -> int:
        return len(self.pi)

    @property
    def n_aux(self) -> int:
        return self.bal.shape[1]


@dataclass(frozen=True)
class DonorAssignment:
    """One realized donor per recipient."""

    donor_of: np.ndarray     # per recipient, dataset position of its donor
    recipients: np.ndarray   # dataset positions of the nonrespondents
    selected_cells: np.ndarray
    balance_gap: np.ndarray  # per-auxiliary |realized - expected| weighted total

    def phi(self, problem: CellProblem) -> np.ndarray:
        """0/1 vector over the problem's cells."""
        out = np.zeros(problem.n_cells)
        out[self.selected_cells] = 1.0
        return out

    def to_csv(self, ds: Dataset, path) -> None:
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["recipient_id", "donor_id"])
            for rec, don in zip(self.recipients, self.donor_of):
                writer.writerow([int(ds.unit_ids[rec]), int(ds.unit_ids[don])])


def build_cell_problem(psi: PsiMatrix, ds: Dataset) -> CellProblem:
    """One cell per nonzero psi entry; strata are the recipient columns."""
    psi.check()
    keep = psi.prob > 0
    donor = psi.donor[keep]
    stratum = psi.recipient[keep]
    pi = psi.prob[keep]
    order = np.argsort(stratum, kind="stable")
    donor, stratum, pi = donor[order], stratum[order], pi[order]
    d_j = ds.weights[psi.recipients][stratum]
    x_dot = (d_j * pi)[:, None] * ds.aux[donor]
    bal = d_j[:, None] * ds.aux[donor]
    # rescale balancing columns to comparable magnitude; the null space of
    # the row system is unchanged
    scale = np.maximum(np.max(np.abs(bal), axis=0), 1e-300)
    bal = np.ascontiguousarray(bal / scale)
    counts = np.bincount(stratum, minlength=psi.n_m)
    start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return CellProblem(donor, stratum.astype(np.int64), pi.astype(np.float64),
                       x_dot, bal, psi.recipients, start)


@njit(cache=True)
def _null_vector(b, m, p, out):
    """Null vector of the m x p matrix b (p <= m + 1), written into out[:p].

    Gaussian elimination with partial pivoting; returns False when b has
    full column rank.  b is destroyed.
    """
    scale = 0.0
    for r in range(m):
        for c in range(p):
            a = abs(b[r, c])
            if a > scale:
                scale = a
    if scale == 0.0:
        for c in range(p):
            out[c] = 0.0
        out[0] = 1.0
        return True
    eps = RANK_TOL * scale
    piv_row_of_col = np.full(p, -1, np.int64)
    row = 0
    for col in range(p):
        if row >= m:
            break
        best = row
        for r in range(row + 1, m):
            if abs(b[r, col]) > abs(b[best, col]):
                best = r
        if abs(b[best, col]) <= eps:
            continue
        if best != row:
            for c in range(col, p):
                tmp = b[row, c]
                b[row, c] = b[best, c]
                b[best, c] = tmp
        inv = 1.0 / b[row, col]
        for r in range(row + 1, m):
            f = b[r, col] * inv
            if f != 0.0:
                for c in range(col, p):
                    b[r, c] -= f * b[row, c]
        piv_row_of_col[col] = row
        row += 1
    free = -1
    for col in range(p):
        if piv_row_of_col[col] == -1:
            free = col
            break
    if free == -1:
        return False
    for c in range(p):
        out[c] = 0.0
    out[free] = 1.0
    # back substitution over the pivot columns left of the free column
    for col in range(free - 1, -1, -1):
        r = piv_row_of_col[col]
        acc = 0.0
        for c in range(col + 1, p):
            if out[c] != 0.0:
                acc += b[r, c] * out[c]
        out[col] = -acc / b[r, col]
    return True


@njit(cache=True)
def _squeeze(v, pool, n_pool, stratum, bal, n_aux_rows, u01, iu):
    """Walk along null-space directions until the pool admits no move.

    pool[:n_pool] holds fractional cell indices; rows considered are one
    indicator per stratum present in the working set plus the first
    n_aux_rows balance rows.  Returns (new pool size, uniforms consumed);
    a negative size signals that u01 ran out.
    """
    max_m = n_pool + n_aux_rows + 2
    b = np.empty((max_m, max_m + 1), np.float64)
    u = np.empty(max_m + 1, np.float64)
    strat_of = np.empty(max_m + 1, np.int64)
    while n_pool > 0:
        # strata present in the pool bound the working-set size
        n_strata = 0
        last = -1
        for t in range(n_pool):
            s = stratum[pool[t]]
            if s != last:
                # pool is kept in cell order, so equal strata are adjacent
                n_strata += 1
                last = s
        m_rows = n_strata + n_aux_rows
        take = n_pool if n_pool < m_rows + 1 else m_rows + 1
        # local stratum row index for each working-set cell
        n_w_strata = 0
        last = -1
        for t in range(take):
            s = stratum[pool[t]]
            if s != last:
                last = s
                n_w_strata += 1
            strat_of[t] = n_w_strata - 1
        m = n_w_strata + n_aux_rows
        for r in range(m):
            for c in range(take):
                b[r, c] = 0.0
        for t in range(take):
            b[strat_of[t], t] = 1.0
            for a in range(n_aux_rows):
                b[n_w_strata + a, t] = bal[pool[t], a]
        if not _null_vector(b, m, take, u):
            return n_pool, iu
        lam1 = np.inf
        lam2 = np.inf
        for t in range(take):
            ut = u[t]
            vt = v[pool[t]]
            if ut > 0.0:
                a1 = (1.0 - vt) / ut
                a2 = vt / ut
            elif ut < 0.0:
                a1 = vt / -ut
                a2 = (1.0 - vt) / -ut
            else:
                continue
            if a1 < lam1:
                lam1 = a1
            if a2 < lam2:
                lam2 = a2
        if not (np.isfinite(lam1) and np.isfinite(lam2)) or lam1 + lam2 <= 0.0:
            return n_pool, iu
        if iu >= len(u01):
            return -1, iu
        step = lam1 if u01[iu] < lam2 / (lam1 + lam2) else -lam2
        iu += 1
        for t in range(take):
            nv = v[pool[t]] + step * u[t]
            if nv < 0.0:
                nv = 0.0
            elif nv > 1.0:
                nv = 1.0
            v[pool[t]] = nv
        # drop cells that reached a bound
        keep = 0
        for t in range(n_pool):
            c = pool[t]
            if INT_TOL < v[c] < 1.0 - INT_TOL:
                pool[keep] = c
                keep += 1
            else:
                v[c] = 0.0 if v[c] <= INT_TOL else 1.0
        if keep == n_pool:
            # the step must resolve at least one cell; numerical stall
            return n_pool, iu
        n_pool = keep
    return 0, iu


@njit(cache=True)
def _flight_kernel(v, stratum, stratum_start, bal, n_aux, u01):
    pool = np.empty(len(v), np.int64)
    n_pool = 0
    iu = 0
    local = np.empty(len(v), np.int64)
    for s in range(len(stratum_start) - 1):
        n_local = 0
        for c in range(stratum_start[s], stratum_start[s + 1]):
            if INT_TOL < v[c] < 1.0 - INT_TOL:
                local[n_local] = c
                n_local += 1
        if n_local == 0:
            continue
        # resolve as much as possible inside the stratum first
        n_local, iu = _squeeze(v, local, n_local, stratum, bal, n_aux, u01, iu)
        if n_local < 0:
            return -1
        # merge the leftovers into the global pool, keeping cell order
        for t in range(n_local):
            pool[n_pool] = local[t]
            n_pool += 1
        n_pool, iu = _squeeze(v, pool, n_pool, stratum, bal, n_aux, u01, iu)
        if n_pool < 0:
            return -1
    return iu


@njit(cache=True)
def _landing_kernel(v, stratum, bal, n_aux, u01, iu):
    n = len(v)
    pool = np.empty(n, np.int64)
    for rows in range(n_aux - 1, -1, -1):
        n_pool = 0
        for c in range(n):
            if INT_TOL < v[c] < 1.0 - INT_TOL:
                pool[n_pool] = c
                n_pool += 1
        if n_pool == 0:
            return iu
        n_pool, iu = _squeeze(v, pool, n_pool, stratum, bal, rows, u01, iu)
        if n_pool < 0:
            return -1
    # safety net: settle any stratum still fractional with one draw each
    n_pool = 0
    for c in range(n):
        if INT_TOL < v[c] < 1.0 - INT_TOL:
            pool[n_pool] = c
            n_pool += 1
    t = 0
    while t < n_pool:
        s = stratum[pool[t]]
        hi = t
        total = 0.0
        while hi < n_pool and stratum[pool[hi]] == s:
            total += v[pool[hi]]
            hi += 1
        if iu >= len(u01):
            return -1
        r = u01[iu] * total
        iu += 1
        acc = 0.0
        win = pool[hi - 1]
        for tt in range(t, hi):
            acc += v[pool[tt]]
            if acc >= r:
                win = pool[tt]
                break
        for tt in range(t, hi):
            v[pool[tt]] = 0.0
        v[win] = 1.0
        t = hi
    return iu


def _uniforms(problem: CellProblem, rng: np.random.Generator) -> np.ndarray:
    return rng.random(4 * problem.n_cells + 64)


def flight_phase(problem: CellProblem, rng: np.random.Generator) -> np.ndarray:
    """Random walk from the inclusion probabilities to a mostly 0/1 vector.

    The expectation of the result equals the inclusion probabilities; at
    most (number of unresolved strata + Q) coordinates stay fractional.
    """
    v = problem.pi.copy()
    used = _flight_kernel(v, problem.stratum, problem.stratum_start,
                          problem.bal, problem.n_aux, _uniforms(problem, rng))
    if used < 0:
        raise RuntimeError("flight walk exhausted its randomness budget")
    return v


def landing_phase(fractional: np.ndarray, problem: CellProblem,
                  rng: np.random.Generator) -> DonorAssignment:
    """Resolve leftover fractional cells by relaxing overall-balance rows."""
    v = fractional.astype(np.float64).copy()
    used = _landing_kernel(v, problem.stratum, problem.bal, problem.n_aux,
                           _uniforms(problem, rng), 0)
    if used < 0:
        raise RuntimeError("landing walk exhausted its randomness budget")
    selected = np.flatnonzero(v == 1.0)
    n_m = len(problem.recipients)
    if len(selected) != n_m or \
            not np.array_equal(problem.stratum[selected], np.arange(n_m)):
        raise DataError("landing failed to select exactly one donor per recipient")
    return _finish(problem, selected)


def _finish(problem: CellProblem, selected: np.ndarray) -> DonorAssignment:
    expected = np.sum(problem.x_dot, axis=0)
    # realized weighted donor totals: x_dot / pi on the selected cells
    realized = np.sum(problem.x_dot[selected] / problem.pi[selected, None], axis=0)
    gap = np.abs(realized - expected)
    return DonorAssignment(donor_of=problem.donor[selected],
                           recipients=problem.recipients,
                           selected_cells=selected, balance_gap=gap)


def select_donors(psi: PsiMatrix, ds: Dataset,
                  rng: np.random.Generator) -> DonorAssignment:
    """Realize a donor assignment whose expectation matches psi."""
    problem = build_cell_problem(psi, ds)
    v = flight_phase(problem, rng)
    return landing_phase(v, problem, rng)


def assignment_to_imputed(assignment: DonorAssignment, ds: Dataset) -> ImputedDataset:
    y_star = ds.y[assignment.donor_of]
    return ImputedDataset(ds, y_star, assignment.donor_of)
