"""Discovery and effect-estimation scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import VariationalGraphPosterior, is_dag, reachability, sample_graphs
from .numerics.rng import RngStream


def _check_pair(true_g, pred_g) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(true_g) != 0
    p = np.asarray(pred_g) != 0
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {t.shape}")
    if t.shape != p.shape:
        raise ValueError(f"graph shapes differ: {t.shape} vs {p.shape}")
    return t, p


def _f1(tp: int, n_pred: int, n_true: int) -> float:
    if n_pred == 0 and n_true == 0:
        return 1.0
    # 2PR / (P + R) written without the divisions
    return 2.0 * tp / (n_pred + n_true)


def _skeleton(g: np.ndarray) -> np.ndarray:
    s = g | g.T
    return s[np.triu_indices(g.shape[0], k=1)]


def adjacency_f1(true_g, pred_g) -> float:
    """F1 over unordered node pairs joined by an edge in either direction."""
    t, p = _check_pair(true_g, pred_g)
    st, sp = _skeleton(t), _skeleton(p)
    return _f1(int(np.sum(st & sp)), int(sp.sum()), int(st.sum()))


def orientation_f1(true_g, pred_g) -> float:
    """F1 over directed edges. A reversed edge is one false positive and one
    false negative."""
    t, p = _check_pair(true_g, pred_g)
    off = ~np.eye(t.shape[0], dtype=bool)
    t, p = t & off, p & off
    return _f1(int(np.sum(t & p)), int(p.sum()), int(t.sum()))


def causal_accuracy_flagged(true_g, pred_g) -> tuple[float, bool]:
    """Ancestor-relation recall, and whether the prediction was cyclic.

    A cyclic prediction is still scored on its reachability relation."""
    t, p = _check_pair(true_g, pred_g)
    off = ~np.eye(t.shape[0], dtype=bool)
    rt = reachability(t) & off
    rp = reachability(p) & off
    n_true = int(rt.sum())
    value = 1.0 if n_true == 0 else float(np.sum(rt & rp)) / n_true
    return value, not is_dag(p.astype(np.float64))


def causal_accuracy(true_g, pred_g) -> float:
    return causal_accuracy_flagged(true_g, pred_g)[0]


@dataclass
class MetricSummary:
    mean: float
    std: float

    def to_json(self) -> dict:
        return {"mean": self.mean, "std": self.std}


@dataclass
class DiscoveryReport:
    adjacency_f1: MetricSummary
    orientation_f1: MetricSummary
    causal_accuracy: MetricSummary
    n_samples: int
    n_cyclic: int = 0

    def to_json(self) -> dict:
        return {
            "adjacency_f1": self.adjacency_f1.to_json(),
            "orientation_f1": self.orientation_f1.to_json(),
            "causal_accuracy": self.causal_accuracy.to_json(),
            "n_samples": self.n_samples,
            "n_cyclic": self.n_cyclic,
        }


def discovery_report(true_g, graphs) -> DiscoveryReport:
    """Mean and standard deviation of each score over a stack of predicted graphs."""
    graphs = np.asarray(graphs)
    if graphs.ndim == 2:
        graphs = graphs[None]
    adj, ori, acc, cyclic = [], [], [], 0
    for g in graphs:
        adj.append(adjacency_f1(true_g, g))
        ori.append(orientation_f1(true_g, g))
        a, flagged = causal_accuracy_flagged(true_g, g)
        acc.append(a)
        cyclic += int(flagged)

    def summary(v):
        return MetricSummary(float(np.mean(v)), float(np.std(v)))

    return DiscoveryReport(summary(adj), summary(ori), summary(acc), len(graphs), cyclic)


def expected_discovery_metrics(
    true_g,
    posterior: VariationalGraphPosterior,
    rng: RngStream,
    n_samples: int = 100,
) -> DiscoveryReport:
    """Scores averaged over hard samples from the graph posterior."""
    return discovery_report(true_g, sample_graphs(posterior, n_samples, rng))


def _flatten_effects(values) -> np.ndarray:
    return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in values]) if len(values) else np.zeros(0)


def ate_rmse(estimates, truth) -> float:
    """Root-mean-square error over aligned test cases. Entries may be scalars
    or per-class vectors (categorical targets); vectors contribute each
    component."""
    if len(estimates) != len(truth):
        raise ValueError(f"{len(estimates)} estimates for {len(truth)} ground-truth cases")
    if not len(truth):
        raise ValueError("no test cases")
    e, t = _flatten_effects(estimates), _flatten_effects(truth)
    if e.shape != t.shape:
        raise ValueError("estimate and ground-truth entries have different widths")
    return float(np.sqrt(np.mean((e - t) ** 2)))


cate_rmse = ate_rmse
