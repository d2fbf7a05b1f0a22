"""Hamiltonian Monte Carlo for conditional interventional distributions.

The chain lives in the standard-normal space of the free nodes' exogenous
noise. Treated nodes are clamped; conditioned nodes are clamped to their
observed values and contribute their conditional log-density given parents,
so the target is ``p(u_free | x_C = c, do(x_T = a))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numerics import ad
from ..numerics.autodiff import Tensor, backward, no_grad
from ..numerics.rng import RngStream
from .truth import TrueSem

DIVERGENCE_THRESHOLD = 1000.0


@dataclass
class HmcConfig:
    n_samples: int = 2000
    burn_in: int = 10_000
    thin: int = 5
    n_leapfrog: int = 20
    n_chains: int = 8
    initial_step: float = 0.1
    accept_low: float = 0.6
    accept_high: float = 0.9
    adapt_every: int = 50
    max_divergence_rate: float = 0.05
    max_retries: int = 3


@dataclass
class HmcResult:
    samples: np.ndarray
    chains: np.ndarray
    step_size: float
    acceptance: float
    divergence_rate: float
    retries: int
    warnings: list[str] = field(default_factory=list)


class _Target:
    def __init__(self, sem: TrueSem, do: dict[int, float], condition: dict[int, float]):
        self.sem = sem
        self.clamped = {**{int(k): float(v) for k, v in do.items()}, **{int(k): float(v) for k, v in condition.items()}}
        self.cond = sorted(int(c) for c in condition)
        overlap = set(do) & set(condition)
        if overlap:
            raise ValueError(f"variables {sorted(overlap)} are both treated and conditioned")
        self.free = [i for i in range(sem.d) if i not in self.clamped]
        for i in self.free + self.cond:
            if sem.nodes[i].spec.kind != "continuous":
                raise ValueError(f"HMC needs continuous free and conditioned nodes; {sem.nodes[i].spec.name!r} is discrete")

    def values(self, u) -> Tensor:
        n = u.shape[0]
        ex: list = [np.zeros(n)] * self.sem.d
        for k, i in enumerate(self.free):
            ex[i] = u[:, k]
        return self.sem.simulate(ex, self.clamped, n)

    def log_prob_and_grad(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = Tensor(u, requires_grad=True)
        lp = ad.tsum(-0.5 * ad.square(t), axis=1)
        if self.cond:
            lp = lp + self.sem.conditional_log_density(self.values(t), self.cond)
        total = ad.tsum(lp)
        backward(total)
        grad = t.grad if t.grad is not None else np.zeros_like(u)
        return lp.data, grad


def _run(target: _Target, cfg: HmcConfig, step: float, rng: RngStream):
    chains, dim = cfg.n_chains, len(target.free)
    per_chain = -(-cfg.n_samples // chains)
    q = rng.normal(size=(chains, dim))
    lp, grad = target.log_prob_and_grad(q)
    kept = []
    accepts, divergences, post = 0.0, 0, 0
    window = []
    total_iters = cfg.burn_in + per_chain * cfg.thin
    for it in range(total_iters):
        p0 = rng.normal(size=(chains, dim))
        qn, pn, gn = q.copy(), p0 + 0.5 * step * grad, grad
        with np.errstate(all="ignore"):
            for k in range(cfg.n_leapfrog):
                qn = qn + step * pn
                lpn, gn = target.log_prob_and_grad(qn)
                if k < cfg.n_leapfrog - 1:
                    pn = pn + step * gn
            pn = pn + 0.5 * step * gn
            h0 = -lp + 0.5 * np.sum(p0 * p0, axis=1)
            h1 = -lpn + 0.5 * np.sum(pn * pn, axis=1)
            delta = h1 - h0
            bad = ~np.isfinite(delta) | (delta > DIVERGENCE_THRESHOLD)
            prob = np.where(bad, 0.0, np.exp(np.minimum(0.0, -np.where(bad, 0.0, delta))))
        accept = rng.uniform(size=chains) < prob
        q = np.where(accept[:, None], qn, q)
        lp = np.where(accept, lpn, lp)
        grad = np.where(accept[:, None], gn, grad)
        if it < cfg.burn_in:
            window.append(prob.mean())
            if len(window) == cfg.adapt_every:
                rate = float(np.mean(window))
                if rate < cfg.accept_low:
                    step *= 0.7
                elif rate > cfg.accept_high:
                    step *= 1.3
                window = []
        else:
            post += chains
            accepts += float(prob.sum())
            divergences += int(bad.sum())
            if (it - cfg.burn_in + 1) % cfg.thin == 0:
                kept.append(q.copy())
    draws = np.stack(kept, axis=1)  # (chains, per_chain, dim)
    return draws, step, accepts / max(post, 1), divergences / max(post, 1)


def hmc_conditional_samples(
    sem: TrueSem,
    do: dict[int, float],
    condition: dict[int, float],
    rng: RngStream,
    config: HmcConfig | None = None,
) -> HmcResult:
    """Samples of all variables from ``p(x | x_C = c, do(x_T = a))``."""
    cfg = config or HmcConfig()
    target = _Target(sem, do, condition)
    step = cfg.initial_step
    notes = []
    for attempt in range(cfg.max_retries + 1):
        if not target.free:
            draws = np.zeros((cfg.n_chains, -(-cfg.n_samples // cfg.n_chains), 0))
            acc, div = 1.0, 0.0
            break
        draws, tuned, acc, div = _run(target, cfg, step, rng.child(f"attempt-{attempt}"))
        if div <= cfg.max_divergence_rate:
            step = tuned
            break
        notes.append(f"divergence rate {div:.3f}; halving step size")
        step = tuned / 2.0
    else:
        notes.append("divergence rate still above threshold after retries")
    # interleave chains so truncation keeps every chain represented
    flat = np.swapaxes(draws, 0, 1).reshape(-1, draws.shape[-1])[: cfg.n_samples]
    with no_grad():
        x = target.values(Tensor(flat)).data
        chains_x = np.stack([target.values(Tensor(c)).data for c in draws])
    return HmcResult(x, chains_x, step, acc, div, attempt, notes)
