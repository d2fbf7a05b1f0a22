"""Variational objective and the augmented-Lagrangian training loop.

The inner loop runs Adam on the negative ELBO divided by the number of rows
(Adam is invariant to that rescaling, and it keeps logged values readable).
Between inner loops the DAG-penalty weights are updated from a Monte Carlo
estimate of ``E_q[h(G)]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .graph import (
    GraphPrior,
    VariationalGraphPosterior,
    dag_penalty_batch,
    posterior_entropy,
    posterior_sample,
    prior_log_density_unnormalized,
    sample_graphs,
)
from .numerics import ad
from .numerics.autodiff import Tensor, backward, no_grad
from .numerics.nn import MlpBlock, Module
from .numerics.optim import adam_init, adam_step
from .numerics.rng import RngStream
from .sem import DeciModel

LOG_2PI = float(np.log(2.0 * np.pi))
DAG_TOLERANCE = 1e-4


class TrainingError(RuntimeError):
    def __init__(self, message: str, diagnostics: Diagnostics | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    lambda_sparse: float = 5.0
    temperature: float = 0.25
    inner_max_steps: int = 6000
    inner_patience: int = 1500
    lr: float = 0.01
    lr_decay: float = 10.0
    lr_patience: int = 500
    max_lr_decays: int = 2
    outer_max_steps: int = 100
    progress_ratio: float = 0.65
    rho_multiplier: float = 10.0
    penalty_cap: float = 1e13
    batch_size: int | None = None
    penalty_samples: int = 100
    seed: int = 0
    noise: str = "spline"
    hidden_dim: int = 128
    embedding_dim: int | None = None
    imputer_hidden_dim: int | None = None
    stop_when_acyclic: bool = True

    def __post_init__(self):
        positive = [
            "temperature", "inner_max_steps", "inner_patience", "lr", "lr_decay", "lr_patience",
            "outer_max_steps", "rho_multiplier", "penalty_cap", "penalty_samples", "hidden_dim",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_sparse < 0 or self.max_lr_decays < 0:
            raise ValueError("lambda_sparse and max_lr_decays must be non-negative")
        if not 0.0 < self.progress_ratio < 1.0:
            raise ValueError("progress_ratio must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def resolved_batch_size(self, n: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n)
        return n if n <= 1024 else 512

    def to_json(self) -> dict:
        return asdict(self)


# -- augmented Lagrangian ------------------------------------------------------


@dataclass(frozen=True)
class AugLagState:
    rho: float = 1.0
    alpha: float = 0.0
    outer_step: int = 0
    last_penalty: float | None = None

    def __post_init__(self):
        if self.rho < 1.0 or self.alpha < 0.0:
            raise ValueError("require rho >= 1 and alpha >= 0")

    def capped(self, cap: float) -> bool:
        return self.rho >= cap or self.alpha >= cap


def auglag_update(state: AugLagState, p2: float, ratio: float = 0.65, multiplier: float = 10.0) -> AugLagState:
    """One outer update from the penalty ``p2`` measured after the inner loop.

    If ``p2 < ratio * P1`` (``P1`` being the penalty recorded by the previous
    update, or at initialisation) ``alpha`` grows by ``rho * p2``; otherwise
    ``rho`` is multiplied. ``p2`` becomes the next ``P1``.
    """
    if not p2 >= 0.0:
        raise ValueError(f"penalty must be non-negative, got {p2}")
    p1 = state.last_penalty
    rho, alpha = state.rho, state.alpha
    if p1 is not None and p2 < ratio * p1:
        alpha = alpha + rho * p2
    else:
        rho = rho * multiplier
    return AugLagState(rho=rho, alpha=alpha, outer_step=state.outer_step + 1, last_penalty=float(p2))


def expected_penalty(posterior: VariationalGraphPosterior, n: int, rng: RngStream) -> float:
    """Monte Carlo estimate of ``E_q[h(G)]`` from ``n`` hard samples."""
    return float(np.mean(dag_penalty_batch(sample_graphs(posterior, n, rng))))


# -- objectives ------------------------------------------------------------------


def _check_batch(batch) -> np.ndarray:
    x = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("ELBO needs a non-empty (B, D) batch")
    return x


def _graph_terms(posterior, prior, rng, temperature):
    w = posterior_sample(posterior, rng, temperature=temperature, hard=True)
    return w, prior_log_density_unnormalized(w, prior) + posterior_entropy(posterior)


def elbo_estimate(
    model: DeciModel,
    posterior: VariationalGraphPosterior,
    prior: GraphPrior,
    batch,
    n_total: int,
    rng: RngStream,
    temperature: float = 0.25,
) -> Tensor:
    """Single-graph-sample ELBO with the likelihood rescaled to ``n_total`` rows.

    The graph sample is binary in the forward pass, with straight-through
    gradients from its relaxation. A relaxed sample in the likelihood would let
    both directions of a pair be partially active at once, a cyclic SEM whose
    density lacks the Jacobian term.
    """
    x = _check_batch(batch)
    if np.any(np.isnan(x)):
        raise ValueError("batch has missing values; use elbo_missing")
    w, graph_terms = _graph_terms(posterior, prior, rng, temperature)
    loglik = ad.tsum(model.log_likelihood(x, w))
    return loglik * (n_total / x.shape[0]) + graph_terms


class ImputationNetwork(Module):
    """Amortised Gaussian imputer: (zero-filled values, mask) -> mean, log-variance."""

    LOG_VAR_RANGE = (-12.0, 6.0)

    def __init__(self, d: int, rng: np.random.Generator, hidden_dim: int = 128):
        self.d = d
        self.net = MlpBlock(2 * d, 2 * d, rng, hidden_dim)

    def __call__(self, values: np.ndarray, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        inp = np.concatenate([np.where(mask > 0, values, 0.0), mask], axis=1)
        out = self.net(Tensor(inp))
        mean = out[:, : self.d]
        log_var = ad.clamp(out[:, self.d :], *self.LOG_VAR_RANGE)
        return mean, log_var


def imputation_entropy(log_var: Tensor, missing: np.ndarray) -> Tensor:
    """Per-row Gaussian entropy over the missing coordinates."""
    return ad.tsum((0.5 * (1.0 + LOG_2PI) + 0.5 * log_var) * missing, axis=1)


def elbo_missing(
    model: DeciModel,
    posterior: VariationalGraphPosterior,
    imputer: ImputationNetwork,
    prior: GraphPrior,
    batch,
    mask,
    n_total: int,
    rng: RngStream,
    temperature: float = 0.25,
) -> Tensor:
    """ELBO with missing entries imputed by reparameterised Gaussian draws.

    ``mask`` is 1 where observed. With nothing missing this equals
    :func:`elbo_estimate` for the same random stream.
    """
    x = _check_batch(batch)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ValueError("mask shape must match batch")
    missing = 1.0 - mask
    for i, s in enumerate(model.specs):
        if s.is_discrete and np.any(missing[:, i] > 0):
            raise ValueError(f"missing values in discrete variable {s.name!r} are not supported")
    observed = np.where(mask > 0, x, 0.0)
    w, graph_terms = _graph_terms(posterior, prior, rng, temperature)
    if not np.any(missing):
        loglik = ad.tsum(model.log_likelihood(observed, w))
        return loglik * (n_total / x.shape[0]) + graph_terms
    mean, log_var = imputer(observed, mask)
    eps = rng.normal(size=x.shape)
    draw = mean + ad.exp(0.5 * log_var) * eps
    completed = draw * missing + observed
    per_row = model.log_likelihood(completed, w) + imputation_entropy(log_var, missing)
    return ad.tsum(per_row) * (n_total / x.shape[0]) + graph_terms


# -- training loop -------------------------------------------------------------------


@dataclass
class Diagnostics:
    records: list[dict] = field(default_factory=list)
    converged: bool = False
    final_penalty: float = float("nan")
    outer_steps: int = 0
    total_steps: int = 0
    warnings: list[str] = field(default_factory=list)

    def log(self, **entry) -> None:
        self.records.append(entry)

    def final_elbo(self) -> float:
        for r in reversed(self.records):
            if "elbo" in r:
                return r["elbo"]
        return float("nan")

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write_jsonl(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "final_penalty": self.final_penalty,
            "final_elbo": self.final_elbo(),
            "outer_steps": self.outer_steps,
            "total_steps": self.total_steps,
            "warnings": list(self.warnings),
        }


@dataclass
class _Inner:
    """Early-stopping and learning-rate schedule for one inner loop."""

    lr: float
    best: float = math.inf
    since_best: int = 0
    since_event: int = 0
    decays: int = 0
    done: str | None = None


def train(
    dataset: Dataset,
    config: TrainConfig | None = None,
    graph: np.ndarray | None = None,
    prior_mean: np.ndarray | None = None,
) -> tuple[DeciModel, VariationalGraphPosterior, Diagnostics]:
    """Fit the model and graph posterior.

    ``graph`` clamps the posterior to a fixed DAG (only the SEM is trained).
    ``prior_mean`` sets the prior's ``W0``.
    """
    config = config or TrainConfig()
    if dataset.n == 0:
        raise ValueError("dataset is empty")
    d = dataset.d
    root = RngStream(config.seed)
    model = DeciModel(
        dataset.specs,
        noise=config.noise,
        seed=int(root.child("model-init").integers(0, 2**63 - 1)),
        hidden_dim=config.hidden_dim,
        embedding_dim=config.embedding_dim,
    )
    if graph is not None:
        posterior = VariationalGraphPosterior.from_graph(graph, fixed=True)
    else:
        posterior = VariationalGraphPosterior(d)
    imputer = None
    mask = dataset.mask if dataset.has_missing else None
    if mask is not None:
        imputer = ImputationNetwork(
            d,
            np.random.default_rng(int(root.child("imputer-init").integers(0, 2**63 - 1))),
            config.imputer_hidden_dim or config.hidden_dim,
        )

    params = model.parameters() + posterior.parameters() + (imputer.parameters() if imputer else [])
    adam = adam_init(params, config.lr)
    batch_rng = root.child("batches")
    sample_rng = root.child("graph-samples")
    penalty_rng = root.child("penalty")
    diag = Diagnostics()

    n = dataset.n
    bs = config.resolved_batch_size(n)
    n_batches = -(-n // bs)
    state = AugLagState(last_penalty=expected_penalty(posterior, config.penalty_samples, penalty_rng))
    step = 0

    for outer in range(config.outer_max_steps):
        prior = GraphPrior(config.lambda_sparse, state.rho, state.alpha, prior_mean)
        sched = _Inner(lr=config.lr)
        adam.step_size = sched.lr
        inner_steps = 0
        while sched.done is None:
            order = batch_rng.permutation(n)
            total, pen_total = 0.0, 0.0
            for b in range(n_batches):
                idx = np.sort(order[b * bs : (b + 1) * bs])
                xb = dataset.values[idx]
                if imputer is None:
                    elbo = elbo_estimate(model, posterior, prior, xb, n, sample_rng, config.temperature)
                else:
                    elbo = elbo_missing(model, posterior, imputer, prior, xb, mask[idx], n, sample_rng, config.temperature)
                loss = elbo * (-1.0 / n)
                value = loss.item()
                if not math.isfinite(value):
                    diag.warnings.append(f"non-finite loss at step {step}")
                    diag.log(step=step, event="abort", loss=value)
                    raise TrainingError(f"non-finite loss at step {step}", diag)
                for p in params:
                    p.grad = None
                backward(loss)
                adam_step(adam, [p.grad for p in params], params)
                total += value
                step += 1
                inner_steps += 1
            epoch_loss = total / n_batches
            with no_grad():
                pen_total = float(np.mean(dag_penalty_batch(sample_graphs(posterior, 10, penalty_rng))))
            diag.log(
                step=step, outer=outer, elbo=-epoch_loss * n, penalty=pen_total,
                rho=state.rho, alpha=state.alpha, lr=sched.lr,
            )
            _advance_schedule(sched, epoch_loss, n_batches, config)
            if sched.done is None and inner_steps >= config.inner_max_steps:
                sched.done = "max_steps"
            if sched.lr != adam.step_size:
                adam.step_size = sched.lr
                diag.log(step=step, event="lr_decay", lr=sched.lr)

        p2 = expected_penalty(posterior, config.penalty_samples, penalty_rng)
        state = auglag_update(state, p2, config.progress_ratio, config.rho_multiplier)
        diag.log(
            step=step, event="outer", outer=outer, inner_exit=sched.done, penalty=p2,
            rho=state.rho, alpha=state.alpha,
        )
        if state.capped(config.penalty_cap):
            break
        if config.stop_when_acyclic and p2 < DAG_TOLERANCE and sched.done != "max_steps":
            break

    diag.outer_steps = state.outer_step
    diag.total_steps = step
    diag.final_penalty = float(state.last_penalty)
    diag.converged = diag.final_penalty < DAG_TOLERANCE
    if not diag.converged:
        diag.warnings.append(f"posterior not acyclic at termination: E[h(G)] = {diag.final_penalty:.3g}")
    return model, posterior, diag


def _advance_schedule(sched: _Inner, epoch_loss: float, steps: int, config: TrainConfig) -> None:
    if epoch_loss < sched.best:
        sched.best = epoch_loss
        sched.since_best = 0
        sched.since_event = 0
        return
    sched.since_best += steps
    sched.since_event += steps
    if sched.since_best >= config.inner_patience:
        sched.done = "patience"
    elif sched.since_event >= config.lr_patience:
        sched.since_event = 0
        if sched.decays >= config.max_lr_decays:
            sched.done = "lr_schedule"
        else:
            sched.decays += 1
            sched.lr = sched.lr / config.lr_decay


def with_overrides(config: TrainConfig, **kwargs) -> TrainConfig:
    return replace(config, **kwargs)
