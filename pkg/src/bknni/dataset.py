"""Population data structures, CSV ingestion and the imputed-value estimators.

Conventions used across the package:

* units are kept in file order; ``unit_ids`` holds their external labels,
  every other structure refers to units by *position* (0-based index into
  the dataset arrays),
* missing values of the variable of interest are stored as NaN and mirrored
  by the 0/1 ``response`` indicator,
* the auxiliary matrix always carries a leading constant column equal to 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

MISSING_TOKENS = {"", "NA"}


class DataError(ValueError):
    """Raised when an input file or dataset violates the data contract."""


@dataclass(frozen=True)
class Dataset:
    """An already-drawn sample with design weights and item nonresponse.

    ``y`` is NaN exactly where ``response`` is 0.
    """

    unit_ids: np.ndarray
    weights: np.ndarray
    aux: np.ndarray
    y: np.ndarray
    response: np.ndarray
    cov_ridged: bool = False

    def __post_init__(self):
        n = len(self.unit_ids)
        if n == 0:
            raise DataError("empty dataset")
        if self.weights.shape != (n,) or self.y.shape != (n,) or self.response.shape != (n,):
            raise DataError("inconsistent array lengths")
        if self.aux.ndim != 2 or self.aux.shape[0] != n:
            raise DataError("aux must be an n x Q matrix")
        if np.any(self.weights <= 0):
            raise DataError("all design weights must be strictly positive")
        if not np.all(self.aux[:, 0] == 1.0):
            raise DataError("aux column 0 must be identically 1")
        resp = self.response.astype(bool)
        if np.any(np.isnan(self.y[resp])) or not np.all(np.isnan(self.y[~resp])):
            raise DataError("y must be present exactly where response == 1")
        if not np.any(resp):
            raise DataError("dataset has no respondents")
        for arr in (self.unit_ids, self.weights, self.aux, self.y, self.response):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def q(self) -> int:
        return self.aux.shape[1]

    @property
    def respondents(self) -> np.ndarray:
        """Positions of responding units, in unit order."""
        return np.flatnonzero(self.response == 1)

    @property
    def nonrespondents(self) -> np.ndarray:
        """Positions of nonresponding units, in unit order."""
        return np.flatnonzero(self.response == 0)

    @property
    def n_r(self) -> int:
        return int(np.sum(self.response == 1))

    @property
    def n_m(self) -> int:
        return int(np.sum(self.response == 0))

    def with_response(self, response: np.ndarray, y_full: np.ndarray) -> "Dataset":
        """Dataset with the same frame but a new response pattern.

        ``y_full`` must hold observed values for every unit; values of new
        nonrespondents are masked out.
        """
        response = np.asarray(response, dtype=np.int8).copy()
        y = np.asarray(y_full, dtype=float).copy()
        y[response == 0] = np.nan
        return Dataset(self.unit_ids.copy(), self.weights.copy(),
                       self.aux.copy(), y, response)


@dataclass(frozen=True)
class ImputedDataset:
    """A dataset whose nonrespondents carry imputed values.

    ``y_star`` and ``donor_of`` are aligned with ``base.nonrespondents``;
    ``donor_of`` holds donor *positions* and is None for non-donor methods.
    """

    base: Dataset
    y_star: np.ndarray
    donor_of: np.ndarray | None = None
    fallback: bool = False

    def __post_init__(self):
        if self.y_star.shape != (self.base.n_m,):
            raise DataError("y_star must have one value per nonrespondent")
        if np.any(np.isnan(self.y_star)):
            raise DataError("unimputed nonrespondent present")
        if self.donor_of is not None:
            if self.donor_of.shape != (self.base.n_m,):
                raise DataError("donor_of must have one donor per nonrespondent")
            if np.any(self.base.response[self.donor_of] != 1):
                raise DataError("donors must be respondents")
            donor_y = self.base.y[self.donor_of]
            if not np.array_equal(donor_y, self.y_star):
                raise DataError("imputed values must equal the donor's observed y")

    def full_y(self) -> np.ndarray:
        """Complete y vector with imputed values filled in."""
        y = self.base.y.copy()
        y[self.base.nonrespondents] = self.y_star
        return y


def complete(ds: Dataset) -> ImputedDataset:
    """Wrap a full-response dataset (nothing to impute)."""
    if ds.n_m != 0:
        raise DataError("dataset still has nonrespondents")
    return ImputedDataset(ds, np.empty(0), np.empty(0, dtype=np.intp))


def estimate_total(ds: ImputedDataset) -> float:
    """Weighted total of the completed variable of interest."""
    d = ds.base.weights
    return float(np.sum(d * ds.full_y()))


def estimate_percentile(ds: ImputedDataset, p: float) -> float:
    """Weighted lower empirical quantile of the completed variable.

    Smallest observed value whose cumulative weight share reaches p.
    """
    if not 0.0 < p < 1.0:
        raise DataError("p must lie in (0, 1)")
    y = ds.full_y()
    d = ds.base.weights
    order = np.argsort(y, kind="stable")
    cum = np.cumsum(d[order]) / np.sum(d)
    idx = int(np.searchsorted(cum, p, side="left"))
    idx = min(idx, len(y) - 1)
    return float(y[order][idx])


def estimate_variance(ds: ImputedDataset) -> float:
    """Weighted population variance of the completed variable (divisor sum(d))."""
    y = ds.full_y()
    d = ds.base.weights
    mean = np.sum(d * y) / np.sum(d)
    return float(np.sum(d * (y - mean) ** 2) / np.sum(d))


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {text!r}") from None


def load_csv(path, aux_cols: list[str], y_col: str,
             id_col: str | None = None, weight_col: str | None = None) -> Dataset:
    """Read a dataset from a headered CSV file.

    Missing y is encoded as an empty field or the literal ``NA``.  A constant
    auxiliary column is prepended unless the first listed aux column is
    already identically 1.  With no weight column, all weights are 1 (census).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        needed = list(aux_cols) + [y_col]
        if id_col:
            needed.append(id_col)
        if weight_col:
            needed.append(weight_col)
        for c in needed:
            if c not in reader.fieldnames:
                raise DataError(f"{path}: missing column {c!r}")
        ids, weights, aux_rows, ys, resp = [], [], [], [], []
        for rownum, rec in enumerate(reader, start=2):
            ids.append(_parse_cell(rec[id_col], rownum, id_col) if id_col else len(ids) + 1)
            weights.append(_parse_cell(rec[weight_col], rownum, weight_col) if weight_col else 1.0)
            aux_rows.append([_parse_cell(rec[c], rownum, c) for c in aux_cols])
            token = rec[y_col].strip()
            if token in MISSING_TOKENS:
                ys.append(math.nan)
                resp.append(0)
            else:
                ys.append(_parse_cell(token, rownum, y_col))
                resp.append(1)
    if not ids:
        raise DataError(f"{path}: no data rows")
    aux = np.asarray(aux_rows, dtype=float)
    if aux.size == 0 or not np.all(aux[:, 0] == 1.0):
        aux = np.column_stack([np.ones(len(ids)), aux])
    return Dataset(np.asarray(ids), np.asarray(weights, dtype=float), aux,
                   np.asarray(ys, dtype=float), np.asarray(resp, dtype=np.int8))


def write_csv(ds: Dataset, path, aux_names: list[str] | None = None) -> None:
    """Write a dataset in the format accepted by load_csv."""
    q = ds.q
    if aux_names is None:
        aux_names = [f"x{j}" for j in range(q)]
    if len(aux_names) != q:
        raise DataError("one name per auxiliary column required")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "weight", *aux_names, "y"])
        for i in range(ds.n):
            yval = "NA" if ds.response[i] == 0 else repr(float(ds.y[i]))
            writer.writerow([int(ds.unit_ids[i]), repr(float(ds.weights[i])),
                             *[repr(float(v)) for v in ds.aux[i]], yval])


def load_mu284(case: int) -> Dataset:
    """The bundled 284-municipality study population.

    Case 1 uses the three auxiliary variables (P85, P75, CS82) next to the
    constant; Case 2 keeps only CS82, the variable least correlated with the
    revenue variable RMT85.  A census is assumed (all weights 1).
    """
    if case not in (1, 2):
        raise DataError("case must be 1 or 2")
    path = resources.files("bknni").joinpath("data/mu284.csv")
    with resources.as_file(path) as p:
        aux = ["P85", "P75", "CS82"] if case == 1 else ["CS82"]
        return load_csv(p, aux_cols=aux, y_col="RMT85", id_col="LABEL")
