"""Dataset directories: data.csv, metadata.json, graph.csv, interventions.json."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import Dataset, read_csv, read_metadata, write_csv, write_metadata
from ..graph import read_adjacency_csv, write_adjacency_csv
from .synthetic import GroundTruthPackage

DATA_FILE = "data.csv"
METADATA_FILE = "metadata.json"
GRAPH_FILE = "graph.csv"
INTERVENTIONS_FILE = "interventions.json"


@dataclass
class StoredDataset:
    dataset: Dataset
    graph: np.ndarray | None
    cases: list[dict] | None


def write_dataset_dir(path: str | Path, dataset: Dataset, truth: GroundTruthPackage | None = None) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / DATA_FILE, dataset)
    write_metadata(out / METADATA_FILE, dataset.specs, {"meta": dataset.meta} if dataset.meta else None)
    if truth is not None:
        write_adjacency_csv(out / GRAPH_FILE, truth.graph)
        body = {"dataset": truth.name, "cases": truth.cases}
        (out / INTERVENTIONS_FILE).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return out


def read_dataset_dir(path: str | Path) -> StoredDataset:
    root = Path(path)
    if not (root / DATA_FILE).exists():
        raise FileNotFoundError(f"{root}: no {DATA_FILE}")
    specs = None
    meta = {}
    if (root / METADATA_FILE).exists():
        specs, extra = read_metadata(root / METADATA_FILE)
        meta = extra.get("meta", {})
    ds = read_csv(root / DATA_FILE, specs)
    ds.meta = meta
    graph = read_adjacency_csv(root / GRAPH_FILE) if (root / GRAPH_FILE).exists() else None
    cases = None
    if (root / INTERVENTIONS_FILE).exists():
        cases = json.loads((root / INTERVENTIONS_FILE).read_text())["cases"]
    return StoredDataset(ds, graph, cases)
