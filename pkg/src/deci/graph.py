"""DAG machinery: adjacency helpers, the DAG penalty, the graph prior and the
ENCO-style variational posterior over directed graphs.

Adjacency convention: ``G[j, i] == 1`` means an edge ``j -> i``.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.special

from .numerics import ad
from .numerics.autodiff import Tensor
from .numerics.gumbel import binary_gumbel_softmax
from .numerics.rng import RngStream

SATURATED_LOGIT = 1e3


class CyclicGraph(ValueError):
    pass


def pair_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the upper triangle, one entry per unordered pair."""
    return np.triu_indices(d, k=1)


def is_dag(g: np.ndarray) -> bool:
    try:
        topological_order(g)
    except CyclicGraph:
        return False
    return True


# -- penalty and prior ----------------------------------------------------


def dag_penalty(w) -> Tensor:
    """``tr(exp(W * W)) - D``; zero exactly when the support of ``W`` is acyclic."""
    w = ad.as_tensor(w)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"dag_penalty needs a square matrix, got shape {w.shape}")
    return ad.trace_expm(ad.square(w)) - float(w.shape[0])


def dag_penalty_value(g: np.ndarray) -> float:
    g = np.asarray(g, dtype=np.float64)
    return float(np.trace(scipy.linalg.expm(g * g)) - g.shape[0])


def dag_penalty_batch(graphs: np.ndarray) -> np.ndarray:
    return np.array([dag_penalty_value(g) for g in graphs])


@dataclass
class GraphPrior:
    """Soft prior ``exp(-lambda_s ||G - W0||^2 - rho h(G)^2 - alpha h(G))``."""

    lambda_sparse: float = 5.0
    rho: float = 1.0
    alpha: float = 0.0
    w0: np.ndarray | None = None

    def __post_init__(self):
        if self.lambda_sparse < 0 or self.rho < 0 or self.alpha < 0:
            raise ValueError("prior weights must be non-negative")
        if self.w0 is not None:
            self.w0 = np.asarray(self.w0, dtype=np.float64)
            if np.any(self.w0 < 0) or np.any(self.w0 > 1):
                raise ValueError("prior mean entries must lie in [0, 1]")


def informed_prior_mean(graph: np.ndarray, strength: float) -> np.ndarray:
    """Prior mean placing weight ``strength`` on the edges of ``graph``."""
    if not 0.0 <= strength <= 1.0:
        raise ValueError("strength must lie in [0, 1]")
    return strength * np.asarray(graph, dtype=np.float64)


def prior_log_density_unnormalized(g, prior: GraphPrior) -> Tensor:
    g = ad.as_tensor(g)
    w0 = np.zeros(g.shape) if prior.w0 is None else prior.w0
    if w0.shape != g.shape:
        raise ValueError(f"prior mean shape {w0.shape} does not match graph shape {g.shape}")
    h = dag_penalty(g)
    sparsity = ad.tsum(ad.square(g - w0))
    return -prior.lambda_sparse * sparsity - prior.rho * ad.square(h) - prior.alpha * h


# -- variational posterior -------------------------------------------------


@dataclass
class VariationalGraphPosterior:
    """Independent existence and orientation Bernoullis per node pair.

    For the pair ``(i, j)`` with ``i < j`` (ordered as in :func:`pair_indices`),
    ``existence[k]`` is the logit of an edge between them and ``orientation[k]``
    is the logit of the direction ``i -> j``.
    """

    d: int
    existence: Tensor = field(default=None)
    orientation: Tensor = field(default=None)
    fixed: bool = False

    def __post_init__(self):
        p = self.d * (self.d - 1) // 2
        if self.existence is None:
            self.existence = Tensor(np.zeros(p), requires_grad=not self.fixed)
        if self.orientation is None:
            self.orientation = Tensor(np.zeros(p), requires_grad=not self.fixed)
        if self.existence.shape != (p,) or self.orientation.shape != (p,):
            raise ValueError(f"posterior logits must have shape ({p},)")

    @classmethod
    def from_graph(cls, g: np.ndarray, fixed: bool = True) -> VariationalGraphPosterior:
        """A posterior saturated on ``g`` (which must not contain 2-cycles)."""
        g = np.asarray(g)
        d = g.shape[0]
        iu, ju = pair_indices(d)
        fwd, bwd = g[iu, ju] > 0, g[ju, iu] > 0
        if np.any(fwd & bwd):
            raise ValueError("graph has a 2-cycle; cannot be represented")
        ex = np.where(fwd | bwd, SATURATED_LOGIT, -SATURATED_LOGIT)
        orient = np.where(bwd, -SATURATED_LOGIT, SATURATED_LOGIT)
        return cls(
            d,
            Tensor(ex, requires_grad=not fixed),
            Tensor(orient, requires_grad=not fixed),
            fixed=fixed,
        )

    def parameters(self) -> list[Tensor]:
        return [] if self.fixed else [self.existence, self.orientation]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [("posterior.existence", self.existence), ("posterior.orientation", self.orientation)]


def edge_probabilities(q: VariationalGraphPosterior) -> np.ndarray:
    iu, ju = pair_indices(q.d)
    pe = scipy.special.expit(q.existence.data)
    po = scipy.special.expit(q.orientation.data)
    probs = np.zeros((q.d, q.d))
    probs[iu, ju] = pe * po
    probs[ju, iu] = pe * (1.0 - po)
    return probs


def _pairs_to_matrix(upper: Tensor, lower: Tensor, d: int) -> Tensor:
    iu, ju = pair_indices(d)
    out = np.zeros((d, d))
    out[iu, ju] = upper.data
    out[ju, iu] = lower.data
    return ad.make_op(out, (upper, lower), lambda g: (g[iu, ju], g[ju, iu]))


def posterior_sample(
    q: VariationalGraphPosterior, rng: RngStream, temperature: float = 0.25, hard: bool = True
) -> Tensor:
    """One relaxed adjacency sample; the hard version is a binary matrix with
    straight-through gradients to the logits."""
    e = binary_gumbel_softmax(q.existence, temperature, hard, rng)
    o = binary_gumbel_softmax(q.orientation, temperature, hard, rng)
    return _pairs_to_matrix(e * o, e * (1.0 - o), q.d)


def posterior_sample_pair(
    q: VariationalGraphPosterior, rng: RngStream, temperature: float = 0.25
) -> tuple[Tensor, Tensor]:
    """A relaxed adjacency sample and its hardened version from the same noise.

    The hard matrix is binary in the forward pass and passes gradients
    straight through to the relaxed one.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = len(q.existence.data)
    noise_e = rng.gumbel(p) - rng.gumbel(p)
    noise_o = rng.gumbel(p) - rng.gumbel(p)
    e = ad.sigmoid((q.existence + noise_e) * (1.0 / temperature))
    o = ad.sigmoid((q.orientation + noise_o) * (1.0 / temperature))
    soft = _pairs_to_matrix(e * o, e * (1.0 - o), q.d)
    he = q.existence.data + noise_e > 0
    ho = q.orientation.data + noise_o > 0
    iu, ju = pair_indices(q.d)
    hard = np.zeros((q.d, q.d))
    hard[iu, ju] = he & ho
    hard[ju, iu] = he & ~ho
    return soft, ad.straight_through(hard, soft)


def sample_graphs(q: VariationalGraphPosterior, n: int, rng: RngStream) -> np.ndarray:
    """``n`` hard samples as an ``(n, D, D)`` array (no gradients)."""
    iu, ju = pair_indices(q.d)
    p = len(iu)
    u_e = rng.uniform(size=(n, p))
    u_o = rng.uniform(size=(n, p))
    e = u_e < scipy.special.expit(q.existence.data)
    o = u_o < scipy.special.expit(q.orientation.data)
    out = np.zeros((n, q.d, q.d))
    out[:, iu, ju] = e & o
    out[:, ju, iu] = e & ~o
    return out


def _bernoulli_entropy(logits: Tensor) -> Tensor:
    l = logits.data
    a = np.abs(l)
    finite = np.isfinite(a)
    af = np.where(finite, a, 0.0)
    value = np.where(finite, np.logaddexp(0.0, -af) + af * scipy.special.expit(-af), 0.0)

    def _bw(g):
        lf = np.where(finite, l, 0.0)
        return (g * -lf * scipy.special.expit(lf) * scipy.special.expit(-lf),)

    return ad.make_op(value, (logits,), _bw)


def posterior_entropy(q: VariationalGraphPosterior) -> Tensor:
    """Sum of the Bernoulli entropies of every existence and orientation variable."""
    return ad.tsum(_bernoulli_entropy(q.existence)) + ad.tsum(_bernoulli_entropy(q.orientation))


def posterior_mode(q: VariationalGraphPosterior) -> tuple[np.ndarray, bool]:
    """Most probable graph under the factorised posterior, plus a cyclicity flag."""
    iu, ju = pair_indices(q.d)
    present = scipy.special.expit(q.existence.data) > 0.5
    forward = q.orientation.data >= 0
    g = np.zeros((q.d, q.d))
    g[iu, ju] = present & forward
    g[ju, iu] = present & ~forward
    return g, not is_dag(g)


# -- structural helpers -----------------------------------------------------


def topological_order(g) -> list[int]:
    """Kahn's algorithm with smallest-index tie-breaking."""
    g = np.asarray(g) != 0
    d = g.shape[0]
    indeg = g.sum(axis=0).astype(int)
    heap = [i for i in range(d) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        j = heapq.heappop(heap)
        order.append(j)
        for i in np.flatnonzero(g[j]):
            indeg[i] -= 1
            if indeg[i] == 0:
                heapq.heappush(heap, int(i))
    if len(order) != d:
        raise CyclicGraph("graph contains a directed cycle")
    return order


def mutilate(g, treatments) -> np.ndarray:
    """Remove every edge into the treated nodes."""
    g = np.array(g, dtype=np.float64, copy=True)
    d = g.shape[0]
    for t in treatments:
        if not 0 <= t < d:
            raise IndexError(f"treatment index {t} out of range for {d} nodes")
        g[:, t] = 0.0
    return g


def reachability(g) -> np.ndarray:
    """``R[j, i]`` is True when there is a directed path ``j -> ... -> i``."""
    a = np.asarray(g) != 0
    reach = a.copy()
    for k in range(a.shape[0]):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def ancestors(g, node: int) -> set[int]:
    return set(np.flatnonzero(reachability(g)[:, node]).tolist())


def descendants(g, node: int) -> set[int]:
    return set(np.flatnonzero(reachability(g)[node, :]).tolist())


# -- file formats -------------------------------------------------------------


def write_adjacency_csv(path: str | Path, g: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(g):
            writer.writerow([int(v) for v in row])


def read_adjacency_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    g = np.array(rows)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"{path}: adjacency must be square")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError(f"{path}: adjacency entries must be 0 or 1")
    return g


def write_probabilities_csv(path: str | Path, probs: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(probs):
            writer.writerow([repr(float(v)) for v in row])


def read_probabilities_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
