"""Ground-truth structural equation models used to generate benchmark data.

A :class:`TrueSem` holds one :class:`Node` per variable. Continuous nodes are
``x_i = f_i(x) + noise_i(u_i)`` with ``u_i`` standard normal; binary nodes are
``1[f_i(x) + l_i > 0]`` with logistic ``l_i``; categorical nodes take
``argmax(f_i(x) + g_i)`` with Gumbel ``g_i``. Mean functions receive the full
``(n, D)`` value Tensor and must only read their parents' columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data import Dataset, VariableSpec
from ..graph import mutilate, topological_order
from ..numerics import ad
from ..numerics.autodiff import Tensor, no_grad
from ..numerics.rng import RngStream
from .noise import NoiseFamily


class Columns:
    """Read-only ``x[:, j]`` access to per-node column Tensors without stacking."""

    def __init__(self, cols: list, n: int):
        self.cols = cols
        self.shape = (n, len(cols))

    def __getitem__(self, key):
        rows, j = key
        if rows != slice(None):
            raise IndexError("only whole-column access is supported")
        col = self.cols[j]
        if col is None:
            raise ValueError(f"column {j} read before it was computed (not a parent?)")
        return col


@dataclass
class Node:
    spec: VariableSpec
    parents: list[int]
    mean: Callable[[Tensor], Tensor] | None = None
    noise: NoiseFamily | None = None

    def evaluate(self, x) -> Tensor:
        n = x.shape[0]
        if self.mean is None:
            width = self.spec.cardinality if self.spec.kind == "categorical" else 1
            return Tensor(np.zeros((n, width) if width > 1 else n))
        return self.mean(x)


@dataclass
class TrueSem:
    nodes: list[Node]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = len(self.nodes)
        g = np.zeros((d, d))
        for i, node in enumerate(self.nodes):
            for p in node.parents:
                g[p, i] = 1.0
            if node.spec.kind == "continuous" and node.noise is None:
                raise ValueError(f"continuous node {node.spec.name!r} needs a noise family")
        self.graph = g
        self.order = topological_order(g)

    @property
    def d(self) -> int:
        return len(self.nodes)

    @property
    def specs(self) -> list[VariableSpec]:
        return [n.spec for n in self.nodes]

    @property
    def names(self) -> list[str]:
        return [n.spec.name for n in self.nodes]

    def draw_exogenous(self, n: int, rng: RngStream) -> list[np.ndarray]:
        """Per-node exogenous draws in column order."""
        out = []
        for node in self.nodes:
            s = node.spec
            if s.kind == "continuous":
                out.append(rng.normal(size=n))
            elif s.kind == "binary":
                out.append(rng.gumbel(size=n) - rng.gumbel(size=n))
            else:
                out.append(rng.gumbel(size=(n, s.cardinality)))
        return out

    def simulate(self, exogenous: list, do: dict[int, float] | None = None, n: int | None = None) -> Tensor:
        """Ancestral evaluation. Continuous entries of ``exogenous`` may be
        Tensors (for gradients); the result is then a Tensor with gradients."""
        do = do or {}
        n = n if n is not None else len(np.asarray(ad.as_tensor(exogenous[0]).data))
        order = topological_order(mutilate(self.graph, do.keys())) if do else self.order
        cols: list[Tensor | None] = [None] * self.d
        x = Columns(cols, n)
        for i in order:
            if i in do:
                cols[i] = Tensor(np.full(n, float(do[i])))
                continue
            node = self.nodes[i]
            f = node.evaluate(x)
            kind = node.spec.kind
            if kind == "continuous":
                cols[i] = f + node.noise.from_standard_normal(exogenous[i])
            elif kind == "binary":
                cols[i] = Tensor((f.data + np.asarray(exogenous[i]) > 0).astype(np.float64))
            else:
                cols[i] = Tensor(np.argmax(f.data + np.asarray(exogenous[i]), axis=1).astype(np.float64))
        return ad.stack(cols, axis=1)

    def sample(self, n: int, rng: RngStream, do: dict[int, float] | None = None) -> np.ndarray:
        with no_grad():
            return self.simulate(self.draw_exogenous(n, rng), do, n).data

    def dataset(self, n: int, rng: RngStream) -> Dataset:
        return Dataset(self.specs, self.sample(n, rng))

    def conditional_log_density(self, x: Tensor, nodes: list[int]) -> Tensor:
        """``sum_{i in nodes} log p(x_i | parents)`` for continuous nodes, per row."""
        total = None
        for i in nodes:
            node = self.nodes[i]
            if node.spec.kind != "continuous":
                raise ValueError(f"conditioning on discrete node {node.spec.name!r} needs stratification")
            term = node.noise.log_prob(x[:, i] - node.evaluate(x))
            total = term if total is None else total + term
        return total

    def as_model(self) -> SemModelView:
        """View with the model interface the effect estimators use."""
        return SemModelView(self)

    # -- ground-truth effects ----------------------------------------------------
    def target_values(self, x: np.ndarray, targets: list[int]) -> list[np.ndarray]:
        out = []
        for t in targets:
            s = self.nodes[t].spec
            out.append(np.eye(s.cardinality)[x[:, t].astype(int)] if s.kind == "categorical" else x[:, t])
        return out

    def ate(
        self,
        treatment: dict[int, float],
        reference: dict[int, float],
        targets: list[int],
        n: int,
        rng: RngStream,
    ) -> tuple[list, list]:
        """Interventional mean difference from ``n`` paired draws sharing noise."""
        with no_grad():
            ex = self.draw_exogenous(n, rng)
            xa = self.simulate(ex, treatment, n).data
            xb = self.simulate(ex, reference, n).data
        est, se = [], []
        for ya, yb in zip(self.target_values(xa, targets), self.target_values(xb, targets)):
            diff = ya - yb
            est.append(_to_list(diff.mean(axis=0)))
            se.append(_to_list(diff.std(axis=0, ddof=1) / np.sqrt(n)))
        return est, se

    def stratified_samples(self, do: dict[int, float], condition: dict[int, float], n: int, rng: RngStream, max_rounds: int = 200) -> np.ndarray:
        """Interventional samples with every conditioned (discrete) node at its value, by rejection."""
        kept = []
        total = 0
        batch = max(4 * n, 1000)
        idx = list(condition)
        vals = np.array([condition[i] for i in idx])
        for _ in range(max_rounds):
            x = self.sample(batch, rng, do)
            ok = np.all(x[:, idx] == vals, axis=1)
            kept.append(x[ok])
            total += int(ok.sum())
            if total >= n:
                break
        if total < n:
            raise RuntimeError("conditioning event too rare for rejection sampling")
        return np.concatenate(kept)[:n]


class SemModelView:
    """Exposes ``specs``, ``draw_exogenous`` and ``simulate(g, exogenous, do)``.

    The graph argument must match the SEM's own graph; the equations are
    fixed, so simulating under any other structure has no meaning."""

    def __init__(self, sem: TrueSem):
        self.sem = sem

    @property
    def specs(self) -> list[VariableSpec]:
        return self.sem.specs

    @property
    def names(self) -> list[str]:
        return self.sem.names

    def draw_exogenous(self, n: int, rng: RngStream) -> list[np.ndarray]:
        return self.sem.draw_exogenous(n, rng)

    def simulate(self, g, exogenous: list, do: dict[int, float] | None = None) -> np.ndarray:
        if not np.array_equal(np.asarray(g) != 0, self.sem.graph != 0):
            raise ValueError("ground-truth SEM can only be simulated under its own graph")
        n = len(np.asarray(exogenous[0]))
        with no_grad():
            return self.sem.simulate(exogenous, do, n).data


def _to_list(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v.tolist()
