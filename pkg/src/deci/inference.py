"""Treatment-effect estimation by simulating from a trained model.

ATE: for each posterior graph draw, simulate both arms on the mutilated graph
with shared exogenous noise and average the target differences.

CATE: per graph draw, simulate joint samples under both arms, regress the
targets on the conditioning variables with a random-Fourier-feature ridge
model whose frequencies are shared between arms, and difference the two
predictions at the conditioning value.
"""

from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .data import VariableSpec
from .graph import VariationalGraphPosterior, is_dag, reachability, sample_graphs
from .numerics.rng import RngStream
from .sem import DeciModel

MAX_OVERSAMPLING = 10


class PosteriorNotDag(RuntimeError):
    pass


@dataclass
class CausalQuery:
    """Indices refer to model columns. ``treatment`` and ``reference`` map the
    same treated columns to their two values."""

    treatment: dict[int, float]
    reference: dict[int, float]
    targets: list[int]
    condition: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self.treatment = {int(k): float(v) for k, v in self.treatment.items()}
        self.reference = {int(k): float(v) for k, v in self.reference.items()}
        self.condition = {int(k): float(v) for k, v in self.condition.items()}
        self.targets = [int(t) for t in self.targets]
        if not self.treatment:
            raise ValueError("query needs at least one treated variable")
        if set(self.treatment) != set(self.reference):
            raise ValueError("treatment and reference must assign the same variables")
        if not self.targets:
            raise ValueError("query needs at least one target")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("duplicate targets")
        t, c, y = set(self.treatment), set(self.condition), set(self.targets)
        if t & c or t & y or c & y:
            raise ValueError("treatment, conditioning and target sets must be disjoint")

    def validate(self, specs: list[VariableSpec]) -> None:
        d = len(specs)
        for i in [*self.treatment, *self.condition, *self.targets]:
            if not 0 <= i < d:
                raise IndexError(f"variable index {i} out of range for {d} variables")
        for assignment in (self.treatment, self.reference, self.condition):
            for i, v in assignment.items():
                s = specs[i]
                if s.is_discrete and (v != int(v) or not 0 <= v < s.n_classes):
                    raise ValueError(f"value {v} invalid for {s.kind} variable {s.name!r}")

    @classmethod
    def from_json(cls, obj: dict, names: list[str]) -> CausalQuery:
        def index(name):
            if name not in names:
                raise KeyError(f"unknown variable {name!r}")
            return names.index(name)

        for key in ("treatment", "reference", "targets"):
            if key not in obj:
                raise ValueError(f"query is missing the {key!r} field")
        return cls(
            treatment={index(k): v for k, v in obj["treatment"].items()},
            reference={index(k): v for k, v in obj["reference"].items()},
            targets=[index(k) for k in obj["targets"]],
            condition={index(k): v for k, v in (obj.get("condition") or {}).items()},
        )

    def to_json(self, names: list[str]) -> dict:
        return {
            "treatment": {names[k]: v for k, v in self.treatment.items()},
            "reference": {names[k]: v for k, v in self.reference.items()},
            "targets": [names[k] for k in self.targets],
            "condition": {names[k]: v for k, v in self.condition.items()},
        }


def read_query(path: str | Path, names: list[str]) -> CausalQuery:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed query JSON: {exc}") from None
    return CausalQuery.from_json(obj, names)


@dataclass
class EffectEstimate:
    """``estimate[k]`` is a float for continuous and binary targets and a
    class-probability difference vector for categorical targets."""

    estimate: list
    stderr: list
    n_graphs_used: int
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "n_graphs_used": self.n_graphs_used,
            "warnings": list(self.warnings),
        }


# -- graph draws ----------------------------------------------------------------------


def draw_dags(posterior: VariationalGraphPosterior, n: int, rng: RngStream) -> tuple[np.ndarray, list[str]]:
    """``n`` acyclic posterior draws, resampling cyclic ones.

    Raises :class:`PosteriorNotDag` when more than half of the first batch is
    cyclic. If the oversampling budget runs out, fewer than ``n`` graphs are
    returned with a warning.
    """
    notes = []
    first = sample_graphs(posterior, n, rng)
    ok = np.array([is_dag(g) for g in first])
    n_cyclic = int((~ok).sum())
    if n_cyclic > n / 2:
        raise PosteriorNotDag(f"{n_cyclic} of {n} posterior draws are cyclic")
    kept = list(first[ok])
    drawn = n
    while len(kept) < n and drawn < MAX_OVERSAMPLING * n:
        extra = sample_graphs(posterior, n - len(kept), rng)
        drawn += len(extra)
        kept.extend(g for g in extra if is_dag(g))
    if n_cyclic:
        notes.append(f"rejected cyclic graph draws; {drawn - n} resamples")
    if len(kept) < n:
        notes.append(f"only {len(kept)} acyclic graphs within the resampling budget")
    return np.array(kept[:n]).reshape(-1, posterior.d, posterior.d), notes


def group_graphs(graphs: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """Distinct graphs with multiplicities, in order of first appearance."""
    seen: dict[bytes, int] = {}
    out: list[list] = []
    for g in graphs:
        key = g.astype(np.uint8).tobytes()
        if key in seen:
            out[seen[key]][1] += 1
        else:
            seen[key] = len(out)
            out.append([g, 1])
    return [(g, c) for g, c in out]


def _target_values(model: DeciModel, x: np.ndarray, targets: list[int]) -> list[np.ndarray]:
    """Per-target sample arrays: (n,) for scalar targets, (n, k) one-hot for categorical."""
    out = []
    for t in targets:
        s = model.specs[t]
        if s.kind == "categorical":
            out.append(np.eye(s.cardinality)[x[:, t].astype(int)])
        else:
            out.append(x[:, t])
    return out


def _to_list(v):
    v = np.asarray(v)
    return float(v) if v.ndim == 0 else v.tolist()


# -- ATE ----------------------------------------------------------------------------


def estimate_ate(
    model: DeciModel,
    posterior: VariationalGraphPosterior,
    query: CausalQuery,
    rng: RngStream,
    n_graphs: int = 1000,
    n_per_graph: int = 2,
) -> EffectEstimate:
    """Posterior-averaged interventional mean difference with common random numbers."""
    query.validate(model.specs)
    if query.condition:
        raise ValueError("ATE queries take no conditioning set; use estimate_cate")
    graphs, notes = draw_dags(posterior, n_graphs, rng.child("graphs"))
    noise_rng = rng.child("noise")
    per_draw: list[list[np.ndarray]] = [[] for _ in query.targets]
    for g, count in group_graphs(graphs):
        ex = model.draw_exogenous(count * n_per_graph, noise_rng)
        xa = model.simulate(g, ex, query.treatment)
        xb = model.simulate(g, ex, query.reference)
        for k, (ya, yb) in enumerate(zip(_target_values(model, xa, query.targets), _target_values(model, xb, query.targets))):
            diff = (ya - yb).reshape((count, n_per_graph) + ya.shape[1:])
            per_draw[k].append(diff.mean(axis=1))
    est, se = [], []
    for blocks in per_draw:
        draws = np.concatenate(blocks, axis=0)
        est.append(_to_list(draws.mean(axis=0)))
        spread = draws.std(axis=0, ddof=1) / np.sqrt(len(draws)) if len(draws) > 1 else np.zeros(draws.shape[1:])
        se.append(_to_list(spread))
    return EffectEstimate(est, se, len(graphs), notes)


# -- random Fourier feature surrogate ---------------------------------------------------


@dataclass
class RffSurrogate:
    """Ridge regression on ``sqrt(2) cos(x @ omega + phase)`` features.

    The features are left unnormalised (``phi @ phi.T / F`` approximates the
    RBF kernel), so the default ridge of ``1e-3 * F`` amounts to a kernel
    ridge of 1e-3. Targets are centred before the solve so a constant target
    is fitted exactly despite the shrinkage.
    """

    omega: np.ndarray
    phase: np.ndarray
    weights: np.ndarray | None = None
    offset: np.ndarray | None = None
    ridge: float = 0.0

    @property
    def n_features(self) -> int:
        return self.omega.shape[1]

    @classmethod
    def draw(cls, dim: int, rng: RngStream, n_features: int = 3000, lengthscale: float = 1.0) -> RffSurrogate:
        omega = rng.normal(size=(dim, n_features)) / lengthscale
        phase = rng.uniform(size=n_features, high=2.0 * np.pi)
        return cls(omega, phase)

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        return np.sqrt(2.0) * np.cos(x @ self.omega + self.phase)

    def fit(self, x: np.ndarray, y: np.ndarray, ridge: float | None = None) -> RffSurrogate:
        return fit_rff_many(self, x, [y], ridge)[0]

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("surrogate is not fitted")
        return self.features(x) @ self.weights + self.offset


def fit_rff_many(template: RffSurrogate, x: np.ndarray, ys: list[np.ndarray], ridge: float | None = None) -> list[RffSurrogate]:
    """Fit one surrogate per target array on shared inputs and frequencies."""
    ridge = 1e-3 * template.n_features if ridge is None else ridge
    phi = template.features(x)
    n, f = phi.shape
    fitted = []
    ys2 = [np.asarray(y, dtype=np.float64).reshape(n, -1) for y in ys]
    offsets = [y.mean(axis=0) for y in ys2]
    rhs = np.concatenate([y - o for y, o in zip(ys2, offsets)], axis=1)
    if n < f:
        # dual form: w = phi^T (phi phi^T + ridge I)^-1 y
        gram = phi @ phi.T
        gram[np.diag_indices(n)] += ridge
        w_all = phi.T @ scipy.linalg.solve(gram, rhs, assume_a="pos")
    else:
        gram = phi.T @ phi
        gram[np.diag_indices(f)] += ridge
        w_all = scipy.linalg.solve(gram, phi.T @ rhs, assume_a="pos")
    start = 0
    for y, off in zip(ys2, offsets):
        width = y.shape[1]
        fitted.append(RffSurrogate(template.omega, template.phase, w_all[:, start : start + width], off, ridge))
        start += width
    return fitted


def fit_rff_surrogate(
    x: np.ndarray,
    y: np.ndarray,
    rng: RngStream,
    n_features: int = 3000,
    lengthscale: float = 1.0,
    ridge: float | None = None,
) -> RffSurrogate:
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=np.float64)
    if np.all(x == x[:1]) and np.ptp(y.reshape(len(y), -1), axis=0).max() > 0:
        _warnings.warn("conditioning inputs are constant; surrogate reduces to the target mean", stacklevel=2)
    return RffSurrogate.draw(x.shape[1], rng, n_features, lengthscale).fit(x, y, ridge)


# -- CATE ----------------------------------------------------------------------------


def estimate_cate(
    model: DeciModel,
    posterior: VariationalGraphPosterior,
    query: CausalQuery,
    rng: RngStream,
    n_graphs: int = 10,
    n_per_graph: int = 10000,
    n_features: int = 3000,
    lengthscale: float = 1.0,
) -> EffectEstimate:
    query.validate(model.specs)
    graphs, notes = draw_dags(posterior, n_graphs, rng.child("graphs"))
    noise_rng = rng.child("noise")
    feat_rng = rng.child("features")
    cond = sorted(query.condition)
    disc = [c for c in cond if model.specs[c].is_discrete]
    cont = [c for c in cond if not model.specs[c].is_discrete]
    c_cont = np.array([query.condition[c] for c in cont])

    per_graph: list[list[np.ndarray]] = [[] for _ in query.targets]
    violating = 0
    outside = False
    for g in graphs:
        reach = reachability(g)
        if any(reach[t, c] for t in query.treatment for c in cond):
            violating += 1
            continue
        ex = model.draw_exogenous(n_per_graph, noise_rng)
        xa = model.simulate(g, ex, query.treatment)
        xb = model.simulate(g, ex, query.reference)
        if disc:
            keep_a = np.all(xa[:, disc] == [query.condition[c] for c in disc], axis=1)
            keep_b = np.all(xb[:, disc] == [query.condition[c] for c in disc], axis=1)
            if keep_a.sum() < 2 or keep_b.sum() < 2:
                notes.append("a graph draw produced too few samples in the conditioning stratum; skipped")
                continue
            xa, xb = xa[keep_a], xb[keep_b]
        ya = _target_values(model, xa, query.targets)
        yb = _target_values(model, xb, query.targets)
        if not cont:
            for k in range(len(query.targets)):
                per_graph[k].append(ya[k].mean(axis=0) - yb[k].mean(axis=0))
            continue
        for xs in (xa, xb):
            lo, hi = np.percentile(xs[:, cont], [1, 99], axis=0)
            outside |= bool(np.any((c_cont < lo) | (c_cont > hi)))
        template = RffSurrogate.draw(len(cont), feat_rng, n_features, lengthscale)
        point = c_cont.reshape(1, -1)
        if len(xa) == len(xb) and np.array_equal(xa[:, cont], xb[:, cont]):
            fits = fit_rff_many(template, xa[:, cont], ya + yb)
            fa, fb = fits[: len(ya)], fits[len(ya) :]
        else:
            fa = fit_rff_many(template, xa[:, cont], ya)
            fb = fit_rff_many(template, xb[:, cont], yb)
        for k in range(len(query.targets)):
            diff = fa[k].predict(point)[0] - fb[k].predict(point)[0]
            if model.specs[query.targets[k]].kind != "categorical":
                diff = diff[0]
            per_graph[k].append(diff)
    if violating:
        notes.append(f"skipped {violating} graph draws where the treatment causes the conditioning set")
    if violating == len(graphs):
        raise ValueError("every sampled graph has a directed path from treatment to conditioning set")
    if not per_graph[0]:
        raise ValueError("no graph draw produced usable conditional samples")
    if outside:
        notes.append("conditioning value lies outside the simulated 1st-99th percentile range")
    est, se = [], []
    for vals in per_graph:
        arr = np.array(vals)
        est.append(_to_list(arr.mean(axis=0)))
        spread = arr.std(axis=0, ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else np.zeros(arr.shape[1:])
        se.append(_to_list(spread))
    return EffectEstimate(est, se, len(per_graph[0]), notes)
