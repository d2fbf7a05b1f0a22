"""Column-typed tabular datasets with optional missingness."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("continuous", "binary", "categorical")


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str = "continuous"
    cardinality: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind == "binary" and self.cardinality not in (1, 2):
            raise ValueError("binary variables have cardinality 2")
        if self.kind == "categorical" and self.cardinality < 2:
            raise ValueError(f"categorical variable {self.name!r} needs cardinality >= 2")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous"

    @property
    def n_classes(self) -> int:
        return {"continuous": 1, "binary": 2}.get(self.kind, self.cardinality)

    @property
    def encoded_width(self) -> int:
        """Width of this variable's input encoding (one-hot for categorical)."""
        return self.cardinality if self.kind == "categorical" else 1

    @property
    def output_width(self) -> int:
        """Width of the mean-function output (logits for categorical)."""
        return self.cardinality if self.kind == "categorical" else 1

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            out["cardinality"] = self.cardinality
        return out

    @classmethod
    def from_json(cls, obj: dict) -> VariableSpec:
        kind = obj.get("kind", "continuous")
        card = obj.get("cardinality", 2 if kind == "binary" else 1)
        return cls(obj["name"], kind, int(card))


def check_specs(specs: list[VariableSpec]) -> None:
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("variable names must be unique")


@dataclass
class Dataset:
    """``values`` is (N, D) float; ``mask`` is (N, D) with 1 = observed."""

    specs: list[VariableSpec]
    values: np.ndarray
    mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_specs(self.specs)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.specs):
            raise ValueError(f"values shape {self.values.shape} does not match {len(self.specs)} variables")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)
            if self.mask.shape != self.values.shape:
                raise ValueError("mask shape must match values")
            self.values = np.where(self.mask > 0, self.values, 0.0)
        for j, s in enumerate(self.specs):
            if s.is_discrete:
                col = self.values[:, j] if self.mask is None else self.values[self.mask[:, j] > 0, j]
                if np.any(col != np.round(col)) or np.any(col < 0) or np.any(col >= s.n_classes):
                    raise ValueError(f"variable {s.name!r}: class indices must lie in [0, {s.n_classes})")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def has_missing(self) -> bool:
        return self.mask is not None and bool(np.any(self.mask == 0))

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}") from None


def format_value(v: float, spec: VariableSpec) -> str:
    if spec.is_discrete:
        return str(int(v))
    return repr(float(v))


def write_csv(path: str | Path, ds: Dataset) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.names)
        for r in range(ds.n):
            row = []
            for j, s in enumerate(ds.specs):
                if ds.mask is not None and ds.mask[r, j] == 0:
                    row.append("")
                else:
                    row.append(format_value(ds.values[r, j], s))
            writer.writerow(row)


def read_csv(path: str | Path, specs: list[VariableSpec] | None = None) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if specs is None:
        specs = [VariableSpec(name) for name in header]
    elif [s.name for s in specs] != header:
        raise ValueError(f"{path}: header {header} does not match metadata names")
    values = np.zeros((len(rows), len(header)))
    mask = np.ones_like(values)
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            if cell.strip() == "":
                mask[r, j] = 0.0
            else:
                values[r, j] = float(cell)
    return Dataset(specs, values, mask if np.any(mask == 0) else None)


def write_metadata(path: str | Path, specs: list[VariableSpec], extra: dict | None = None) -> None:
    obj = {"variables": [s.to_json() for s in specs]}
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_metadata(path: str | Path) -> tuple[list[VariableSpec], dict]:
    obj = json.loads(Path(path).read_text())
    specs = [VariableSpec.from_json(v) for v in obj["variables"]]
    return specs, {k: v for k, v in obj.items() if k != "variables"}
