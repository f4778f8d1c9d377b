"""Dataset container and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    outcome_name: str = "Y"
    treatment_name: str = "T"
    control_names: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float)
        self.t = np.ascontiguousarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size == self.y.size else x.reshape(self.y.size, 0)
        self.x = np.ascontiguousarray(x)
        if not (self.y.size == self.t.size == self.x.shape[0]):
            raise DataError("Y, T and X must have the same number of rows")
        if not self.control_names:
            self.control_names = [f"X{j + 1}" for j in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def basis(self) -> np.ndarray:
        """b(X): a leading constant column followed by the sample-centered controls.

        Centering keeps the shrinkage of the (penalized) constant from leaking
        into the gradients of positive-valued controls.
        """
        return np.hstack([np.ones((self.n, 1)), self.x - self.x.mean(axis=0)])

    def basis_names(self) -> list:
        return ["(const)"] + list(self.control_names)


def load_csv_dataset(path, outcome: str, treatment: str,
                     controls: Optional[Sequence[str]] = None) -> Dataset:
    """Read a comma-separated file with a header row.

    ``controls=None`` (or "all-others") uses every column other than the outcome
    and the treatment. Missing or non-numeric cells raise with their row/column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")
    if controls is None or controls == "all-others" or list(controls) == ["all-others"]:
        controls = [h for h in header if h not in (outcome, treatment)]
    wanted = [outcome, treatment, *controls]
    for name in wanted:
        if name not in header:
            raise DataError(f"{path}: missing column {name!r}")
    idx = [header.index(name) for name in wanted]
    values = np.empty((len(rows), len(idx)))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        for c, j in enumerate(idx):
            cell = row[j].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric value {cell!r} at row {r + 2}, column {wanted[c]!r}"
                ) from None
            if math.isnan(v) or math.isinf(v):
                raise DataError(f"{path}: missing value at row {r + 2}, column {wanted[c]!r}")
            values[r, c] = v
    return Dataset(values[:, 0], values[:, 1], values[:, 2:], outcome, treatment, list(controls))


def write_csv_dataset(data: Dataset, path) -> None:
    header = [data.outcome_name, data.treatment_name, *data.control_names]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(float(data.y[i])), repr(float(data.t[i]))]
                       + [repr(float(v)) for v in data.x[i]])
