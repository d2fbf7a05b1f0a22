"""The DECI structural equation model.

Mean functions share weights across nodes::

    f_i(x) = zeta(u_i, sum_j W[j, i] * ell(u_j, x_j))

where ``u_i`` are trainable node embeddings. Continuous nodes carry additive
noise (Gaussian with learnt variance, or a rational-quadratic spline flow over a
standard normal); binary and categorical nodes use sigmoid/softmax heads over
the outputs of ``f_i``.
"""

from __future__ import annotations

import numpy as np

from .data import VariableSpec, check_specs
from .graph import CyclicGraph, mutilate, topological_order
from .numerics import ad
from .numerics.autodiff import Tensor, no_grad
from .numerics.nn import MlpBlock, Module
from .numerics.rng import RngStream
from .numerics.spline import RqSpline

LOG_2PI = float(np.log(2.0 * np.pi))
NOISE_MODELS = ("gaussian", "spline")


class DeciModel(Module):
    def __init__(
        self,
        specs: list[VariableSpec],
        noise: str = "gaussian",
        seed: int = 0,
        hidden_dim: int = 128,
        embedding_dim: int | None = None,
        latent_dim: int | None = None,
        spline_bins: int = 8,
        spline_bound: float = 5.0,
    ):
        check_specs(specs)
        if noise not in NOISE_MODELS:
            raise ValueError(f"noise model must be one of {NOISE_MODELS}, got {noise!r}")
        rng = np.random.default_rng(seed)
        self.specs = list(specs)
        self.noise = noise
        self.hidden_dim = hidden_dim
        self.embedding_dim = embedding_dim or len(specs)
        self.latent_dim = latent_dim or hidden_dim
        self.spline_bins = spline_bins
        self.spline_bound = spline_bound

        d = len(specs)
        self.in_width = max(s.encoded_width for s in specs)
        self.out_width = max(s.output_width for s in specs)
        self.embeddings = Tensor(rng.normal(size=(d, self.embedding_dim)), requires_grad=True)
        self.ell = MlpBlock(self.embedding_dim + self.in_width, self.latent_dim, rng, hidden_dim)
        self.zeta = MlpBlock(self.embedding_dim + self.latent_dim, self.out_width, rng, hidden_dim, zero_last=True)

        self.continuous = np.array([i for i, s in enumerate(specs) if s.kind == "continuous"], dtype=int)
        self.binary = np.array([i for i, s in enumerate(specs) if s.kind == "binary"], dtype=int)
        self.categorical = [i for i, s in enumerate(specs) if s.kind == "categorical"]
        n_cont = len(self.continuous)
        if noise == "gaussian":
            self.log_var = Tensor(np.zeros(n_cont), requires_grad=True)
        else:
            self.spline = RqSpline(n_cont, spline_bins, spline_bound)

        self._scalar_cols = np.array([s.kind != "categorical" for s in specs])

    # -- configuration ---------------------------------------------------
    @property
    def d(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def config(self) -> dict:
        return {
            "noise": self.noise,
            "hidden_dim": self.hidden_dim,
            "embedding_dim": self.embedding_dim,
            "latent_dim": self.latent_dim,
            "spline_bins": self.spline_bins,
            "spline_bound": self.spline_bound,
        }

    # -- mean functions ----------------------------------------------------
    def encode(self, x) -> Tensor:
        """(B, D) values -> (B, D, in_width) inputs for ``ell``."""
        x = ad.as_tensor(x)
        b, d = x.shape
        m = self.in_width
        onehot = np.zeros((b, d, m))
        for i in self.categorical:
            onehot[np.arange(b), i, x.data[:, i].astype(int)] = 1.0
        if not x.requires_grad:
            onehot[:, self._scalar_cols, 0] = x.data[:, self._scalar_cols]
            return Tensor(onehot)
        first = np.zeros((1, d, m))
        first[0, self._scalar_cols, 0] = 1.0
        return ad.reshape(x, (b, d, 1)) * first + onehot

    def predict(self, x, w) -> Tensor:
        """Per-node outputs ``f(x)`` of shape (B, D, out_width)."""
        x = ad.as_tensor(x)
        w = ad.as_tensor(w)
        d = self.d
        if x.ndim != 2 or x.shape[1] != d:
            raise ValueError(f"expected inputs of shape (B, {d}), got {x.shape}")
        if w.shape != (d, d):
            raise ValueError(f"expected adjacency of shape ({d}, {d}), got {w.shape}")
        emb = ad.reshape(self.embeddings, (1, d, self.embedding_dim))
        latent = self.ell.call_split([emb, self.encode(x)])  # (B, D, L)
        agg = ad.node_mix(latent, w)
        return self.zeta.call_split([emb, agg])

    # -- noise ---------------------------------------------------------------
    def noise_log_prob(self, z) -> Tensor:
        """Log-density of continuous-node noise, z of shape (B, n_continuous)."""
        z = ad.as_tensor(z)
        if self.noise == "gaussian":
            lv = self.log_var
            return -0.5 * (ad.square(z) * ad.exp(-lv) + lv + LOG_2PI)
        eps, logdet = self.spline.forward(z)
        return -0.5 * (ad.square(eps) + LOG_2PI) + logdet

    def sample_noise(self, n: int, rng: RngStream) -> np.ndarray:
        """Continuous-node noise draws, (n, n_continuous)."""
        base = rng.normal(size=(n, len(self.continuous)))
        with no_grad():
            if self.noise == "gaussian":
                return base * np.exp(0.5 * self.log_var.data)
            return self.spline.inverse(base)[0].data

    def noise_from_base(self, base: np.ndarray) -> np.ndarray:
        with no_grad():
            if self.noise == "gaussian":
                return base * np.exp(0.5 * self.log_var.data)
            return self.spline.inverse(base)[0].data

    # -- likelihood --------------------------------------------------------------
    def node_log_probs(self, x, out: Tensor) -> list[Tensor]:
        """Per-sample log-probability blocks (continuous, binary, each categorical)."""
        x = ad.as_tensor(x)
        parts = []
        if len(self.continuous):
            z = x[:, self.continuous] - out[:, self.continuous, 0]
            parts.append(self.noise_log_prob(z))
        if len(self.binary):
            logit = out[:, self.binary, 0]
            xb = x.data[:, self.binary]
            parts.append(xb * ad.logsigmoid(logit) + (1.0 - xb) * ad.logsigmoid(-logit))
        for i in self.categorical:
            k = self.specs[i].cardinality
            logp = ad.log_softmax(out[:, i, :k], axis=-1)
            cls = x.data[:, i].astype(int)
            parts.append(ad.reshape(logp[np.arange(x.shape[0]), cls], (x.shape[0], 1)))
        return parts

    def log_likelihood(self, x, w) -> Tensor:
        """Per-sample ``log p(x | W)`` (Jacobian term omitted; it is one for DAGs)."""
        out = self.predict(x, w)
        parts = self.node_log_probs(x, out)
        return ad.tsum(ad.concat(parts, axis=1), axis=1)

    # -- simulation -----------------------------------------------------------------
    def draw_exogenous(self, n: int, rng: RngStream) -> dict:
        """All randomness for ``n`` ancestral samples, reusable across arms."""
        d = self.d
        ex = {"continuous": self.sample_noise(n, rng)}
        ex["binary"] = rng.gumbel(size=(n, len(self.binary))) - rng.gumbel(size=(n, len(self.binary)))
        ex["categorical"] = {i: rng.gumbel(size=(n, self.specs[i].cardinality)) for i in self.categorical}
        ex["n"] = n
        ex["d"] = d
        return ex

    def simulate(self, g, exogenous: dict, do: dict[int, float] | None = None) -> np.ndarray:
        """Ancestral sampling on ``g`` (mutilated by ``do``) with given exogenous draws."""
        do = dict(do or {})
        g = mutilate(g, do.keys()) if do else np.asarray(g, dtype=np.float64)
        order = topological_order(g)
        n = exogenous["n"]
        x = np.zeros((n, self.d))
        for t, v in do.items():
            x[:, t] = v
        cont_pos = {int(i): k for k, i in enumerate(self.continuous)}
        bin_pos = {int(i): k for k, i in enumerate(self.binary)}
        with no_grad():
            for i in order:
                if i in do:
                    continue
                out = self.predict(x, g).data[:, i, :]
                kind = self.specs[i].kind
                if kind == "continuous":
                    x[:, i] = out[:, 0] + exogenous["continuous"][:, cont_pos[i]]
                elif kind == "binary":
                    x[:, i] = (out[:, 0] + exogenous["binary"][:, bin_pos[i]] > 0).astype(float)
                else:
                    k = self.specs[i].cardinality
                    x[:, i] = np.argmax(out[:, :k] + exogenous["categorical"][i], axis=1)
        return x

    def check_do(self, do: dict[int, float]) -> None:
        for t, v in do.items():
            s = self.specs[t]
            if s.is_discrete and (v != int(v) or not 0 <= v < s.n_classes):
                raise ValueError(f"intervention value {v} invalid for {s.kind} variable {s.name!r}")


# -- module-level operations --------------------------------------------------------


def predict(model: DeciModel, x, w) -> Tensor:
    return model.predict(x, w)


def log_likelihood(model: DeciModel, x, w) -> Tensor:
    """Scalar ``sum_n log p(x_n | W)``; ``x`` must be fully observed."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if np.any(np.isnan(x)):
        raise ValueError("missing values present; use the imputation path")
    return ad.tsum(model.log_likelihood(x, w))


def sample_observational(model: DeciModel, g, n: int, rng: RngStream) -> np.ndarray:
    return model.simulate(g, model.draw_exogenous(n, rng))


def sample_interventional(model: DeciModel, g, do: dict[int, float], n: int, rng: RngStream) -> np.ndarray:
    model.check_do(do)
    return model.simulate(g, model.draw_exogenous(n, rng), do)


def _require_continuous(model: DeciModel, nodes) -> None:
    for i in nodes:
        if model.specs[i].is_discrete:
            raise ValueError(f"noise inversion undefined for discrete variable {model.specs[i].name!r}")


def invert_to_noise(model: DeciModel, x, g) -> np.ndarray:
    """``z = x - f(x)`` for a fully continuous model on an acyclic ``g``."""
    _require_continuous(model, range(model.d))
    topological_order(g)
    x = np.asarray(x, dtype=np.float64)
    with no_grad():
        return x - model.predict(x, g).data[:, :, 0]


def simulate_from_noise(model: DeciModel, z: np.ndarray, g) -> np.ndarray:
    """Forward SEM evaluation from explicit continuous noise."""
    _require_continuous(model, range(model.d))
    ex = {"continuous": np.asarray(z, dtype=np.float64), "binary": None, "categorical": {}, "n": len(z)}
    return model.simulate(g, ex)


def intervened_log_density(model: DeciModel, x, do: dict[int, float], g) -> np.ndarray:
    """Per-sample ``log p(x_rest | do(x_T = a))``.

    ``x`` holds values for every node; treated columns are overwritten with the
    intervention values.
    """
    rest = [i for i in range(model.d) if i not in do]
    _require_continuous(model, rest)
    gm = mutilate(g, do.keys())
    topological_order(gm)
    x = np.array(x, dtype=np.float64, copy=True)
    for t, v in do.items():
        x[:, t] = v
    with no_grad():
        out = model.predict(x, gm).data
        z = x[:, model.continuous] - out[:, model.continuous, 0]
        logp = model.noise_log_prob(z).data
    keep = np.isin(model.continuous, rest)
    return logp[:, keep].sum(axis=1)


__all__ = [
    "CyclicGraph",
    "DeciModel",
    "intervened_log_density",
    "invert_to_noise",
    "log_likelihood",
    "predict",
    "sample_interventional",
    "sample_observational",
    "simulate_from_noise",
]
