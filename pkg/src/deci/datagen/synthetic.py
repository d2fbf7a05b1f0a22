"""Random additive-noise benchmarks on Erdős–Rényi and scale-free DAGs."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, VariableSpec
from ..numerics import ad
from ..numerics.autodiff import Tensor
from ..numerics.rng import RngStream
from ..numerics.spline import MIN_DERIVATIVE, RqSpline
from .noise import Gaussian, MlpTransformed
from .truth import Node, TrueSem

GRAPH_FAMILIES = ("ER", "SF")
NOISE_KINDS = ("gaussian", "mlp")
ATE_SAMPLES = 2000


def _check_counts(d: int, e: int) -> None:
    if d < 1:
        raise ValueError("need at least one node")
    if not 0 <= e <= d * (d - 1) // 2:
        raise ValueError(f"edge count {e} outside [0, {d * (d - 1) // 2}] for {d} nodes")


def sample_er_graph(d: int, e: int, rng: RngStream) -> np.ndarray:
    """``e`` distinct node pairs chosen uniformly, oriented along a random order."""
    _check_counts(d, e)
    iu, ju = np.triu_indices(d, k=1)
    chosen = rng.choice(len(iu), size=e, replace=False) if e else np.array([], dtype=int)
    rank = np.empty(d, dtype=int)
    rank[rng.permutation(d)] = np.arange(d)
    g = np.zeros((d, d))
    for k in chosen:
        a, b = iu[k], ju[k]
        if rank[a] < rank[b]:
            g[a, b] = 1.0
        else:
            g[b, a] = 1.0
    return g


def sample_sf_graph(d: int, e: int, rng: RngStream) -> np.ndarray:
    """Preferential attachment: each new node links to existing nodes chosen
    with probability proportional to degree + 1. Edges point from the new node
    to the old one, so early hubs collect large in-degree. Labels are then
    randomly permuted."""
    _check_counts(d, e)
    g = np.zeros((d, d))
    degree = np.zeros(d)
    remaining = e
    for k in range(d):
        if remaining == 0:
            break
        c = min(k, math.ceil(remaining / (d - k)))
        if c == 0:
            continue
        w = degree[:k] + 1.0
        targets = rng.choice(k, size=c, replace=False, p=w / w.sum())
        for t in targets:
            g[k, t] = 1.0
            degree[t] += 1
        degree[k] += c
        remaining -= c
    perm = rng.permutation(d)
    out = np.zeros_like(g)
    out[np.ix_(perm, perm)] = g
    return out


class RandomSpline:
    """Monotone rational-quadratic spline on [-3, 3] (identity outside) with
    eight equal-width bins, random bin heights and log-normal knot derivatives,
    multiplied by a random sign."""

    def __init__(self, rng: RngStream, bins: int = 8, bound: float = 3.0):
        params = np.zeros((1, 3 * bins - 1))
        params[0, bins : 2 * bins] = rng.normal(size=bins)
        deriv = np.exp(rng.normal(size=bins - 1, scale=0.75))
        params[0, 2 * bins :] = np.log(np.expm1(np.maximum(deriv - MIN_DERIVATIVE, 1e-6)))
        self.spline = RqSpline(1, bins, bound, Tensor(params))
        self.sign = 1.0 if rng.uniform() < 0.5 else -1.0

    def __call__(self, s) -> Tensor:
        s = ad.as_tensor(s)
        y, _ = self.spline.forward(ad.reshape(s, (s.shape[0], 1)))
        return ad.reshape(y, (s.shape[0],)) * self.sign


def _sum_of_parents(parents: list[int], fn: RandomSpline):
    scale = 1.0 / math.sqrt(len(parents))

    def mean(x):
        total = x[:, parents[0]]
        for p in parents[1:]:
            total = total + x[:, p]
        return fn(total * scale)

    return mean


@dataclass
class SyntheticSpec:
    graph: str = "ER"
    d: int = 16
    e: int = 16
    noise: str = "gaussian"
    n: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.graph not in GRAPH_FAMILIES:
            raise ValueError(f"graph family must be one of {GRAPH_FAMILIES}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}")
        _check_counts(self.d, self.e)
        if self.n <= 0:
            raise ValueError("sample count must be positive")


@dataclass
class GroundTruthPackage:
    sem: TrueSem
    cases: list[dict]
    name: str = ""

    @property
    def graph(self) -> np.ndarray:
        return self.sem.graph


def shortest_path_lengths_to(g: np.ndarray, target: int) -> dict[int, int]:
    """Directed path length from each ancestor of ``target`` to it."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for p in np.flatnonzero(g[:, v]):
            p = int(p)
            if p not in dist:
                dist[p] = dist[v] + 1
                queue.append(p)
    del dist[target]
    return dist


def build_anm(g: np.ndarray, noise: str, rng: RngStream) -> TrueSem:
    d = g.shape[0]
    nodes = []
    for i in range(d):
        parents = [int(p) for p in np.flatnonzero(g[:, i])]
        fam = Gaussian(1.0) if noise == "gaussian" else MlpTransformed(rng.child(f"noise-{i}"))
        mean = _sum_of_parents(parents, RandomSpline(rng.child(f"spline-{i}"))) if parents else None
        nodes.append(Node(VariableSpec(f"x{i}"), parents, mean, fam))
    return TrueSem(nodes)


def intervention_cases(sem: TrueSem, data: np.ndarray, rng: RngStream, max_cases: int = 5, max_hops: int = 3) -> list[dict]:
    """ATE test cases: the effect variable is the last node in causal order,
    treatments are distinct ancestors at most ``max_hops`` edges away. Treated
    and reference values are one marginal standard deviation above and below
    the treated variable's mean."""
    target = sem.order[-1]
    near = sorted(i for i, k in shortest_path_lengths_to(sem.graph, target).items() if k <= max_hops)
    if not near:
        return []
    chosen = rng.choice(len(near), size=min(max_cases, len(near)), replace=False)
    names = sem.names
    cases = []
    for k in sorted(int(c) for c in chosen):
        t = near[k]
        mu, sd = float(data[:, t].mean()), float(data[:, t].std())
        a, b = mu + sd, mu - sd
        est, se = sem.ate({t: a}, {t: b}, [target], ATE_SAMPLES, rng.child(f"ate-{t}"))
        cases.append(_case("ate", names, {t: a}, {t: b}, [target], {}, est, se, ATE_SAMPLES))
    return cases


def _case(kind, names, treatment, reference, targets, condition, effect, stderr, n) -> dict:
    return {
        "kind": kind,
        "treatment": {names[k]: v for k, v in treatment.items()},
        "reference": {names[k]: v for k, v in reference.items()},
        "targets": [names[t] for t in targets],
        "condition": {names[k]: v for k, v in condition.items()},
        "effect": effect,
        "stderr": stderr,
        "n_samples": n,
    }


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, GroundTruthPackage]:
    root = RngStream(spec.seed, (7,))
    sampler = sample_er_graph if spec.graph == "ER" else sample_sf_graph
    g = sampler(spec.d, spec.e, root.child("graph"))
    return simulate_anm(g, spec, root.child("sem"))


def simulate_anm(g: np.ndarray, spec: SyntheticSpec, rng: RngStream) -> tuple[Dataset, GroundTruthPackage]:
    sem = build_anm(np.asarray(g, dtype=np.float64), spec.noise, rng.child("functions"))
    data = sem.sample(spec.n, rng.child("data"))
    cases = intervention_cases(sem, data, rng.child("cases"))
    name = f"{spec.graph.lower()}_{spec.d}_{spec.e}_{spec.noise}"
    return Dataset(sem.specs, data), GroundTruthPackage(sem, cases, name)
