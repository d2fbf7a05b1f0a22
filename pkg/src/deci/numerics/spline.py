"""Monotone rational-quadratic splines with identity tails.

``n`` independent scalar splines are stored together; inputs have a trailing
axis of length ``n``. Inside ``[-bound, bound]`` each spline is a piecewise
rational-quadratic map with ``bins`` bins; outside it is the identity, with
boundary derivatives pinned to one so the map is C1.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module

MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3

# softplus(x) + MIN_DERIVATIVE == 1 at this x
_IDENTITY_DERIV_LOGIT = float(np.log(np.expm1(1.0 - MIN_DERIVATIVE)))


class RqSpline(Module):
    def __init__(self, n: int, bins: int = 8, bound: float = 5.0, params: Tensor | None = None):
        self.n = n
        self.bins = bins
        self.bound = bound
        if params is None:
            init = np.zeros((n, 3 * bins - 1))
            init[:, 2 * bins :] = _IDENTITY_DERIV_LOGIT
            params = Tensor(init, requires_grad=True)
        if params.shape != (n, 3 * bins - 1):
            raise ValueError(f"spline params must have shape {(n, 3 * bins - 1)}, got {params.shape}")
        self.params = params

    # knots ---------------------------------------------------------------
    def _knots(self):
        k, b = self.bins, self.bound
        p = self.params
        widths = ad.softmax(p[:, :k], axis=-1) * (1.0 - MIN_BIN_WIDTH * k) + MIN_BIN_WIDTH
        heights = ad.softmax(p[:, k : 2 * k], axis=-1) * (1.0 - MIN_BIN_HEIGHT * k) + MIN_BIN_HEIGHT
        cw = ad.pad_last(ad.cumsum(widths, axis=-1)[:, :-1], 0.0, 1.0) * (2 * b) - b
        ch = ad.pad_last(ad.cumsum(heights, axis=-1)[:, :-1], 0.0, 1.0) * (2 * b) - b
        derivs = ad.pad_last(ad.softplus(p[:, 2 * k :]) + MIN_DERIVATIVE, 1.0, 1.0)
        return cw, ch, derivs

    def knots(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Knot x positions, y positions and derivatives, each (n, bins+1)."""
        with ad.no_grad():
            cw, ch, d = self._knots()
        return cw.data, ch.data, d.data

    @staticmethod
    def _bin_index(knots: np.ndarray, v: np.ndarray) -> np.ndarray:
        # knots: (n, K+1); v: (..., n) -> index in [0, K-1]
        inner = knots[:, 1:-1]
        idx = (v[..., None] >= inner).sum(axis=-1)
        return idx

    def _bin_params(self, idx, cw, ch, d):
        xk = ad.gather_rows(cw, idx)
        wk = ad.gather_rows(cw, idx + 1) - xk
        yk = ad.gather_rows(ch, idx)
        hk = ad.gather_rows(ch, idx + 1) - yk
        dk = ad.gather_rows(d, idx)
        dk1 = ad.gather_rows(d, idx + 1)
        return xk, wk, yk, hk, dk, dk1

    def forward(self, x) -> tuple[Tensor, Tensor]:
        """Return ``(y, log|dy/dx|)``, elementwise."""
        x = ad.as_tensor(x)
        cw, ch, d = self._knots()
        inside = np.abs(x.data) < self.bound
        xc = ad.where(inside, x, 0.0)
        idx = self._bin_index(cw.data, xc.data)
        xk, wk, yk, hk, dk, dk1 = self._bin_params(idx, cw, ch, d)
        delta = hk / wk
        theta = (xc - xk) / wk
        t1mt = theta * (1.0 - theta)
        num = hk * (delta * ad.square(theta) + dk * t1mt)
        den = delta + (dk + dk1 - 2.0 * delta) * t1mt
        y = yk + num / den
        dnum = ad.square(delta) * (dk1 * ad.square(theta) + 2.0 * delta * t1mt + dk * ad.square(1.0 - theta))
        logdet = ad.log(dnum) - 2.0 * ad.log(den)
        return ad.where(inside, y, x), ad.where(inside, logdet, 0.0)

    def inverse(self, y) -> tuple[Tensor, Tensor]:
        """Return ``(x, log|dx/dy|)`` with ``forward(x) == y``."""
        y = ad.as_tensor(y)
        cw, ch, d = self._knots()
        inside = np.abs(y.data) < self.bound
        yc = ad.where(inside, y, 0.0)
        idx = self._bin_index(ch.data, yc.data)
        xk, wk, yk, hk, dk, dk1 = self._bin_params(idx, cw, ch, d)
        delta = hk / wk
        dy = yc - yk
        s = dk + dk1 - 2.0 * delta
        a = hk * (delta - dk) + dy * s
        b = hk * dk - dy * s
        c = -delta * dy
        disc = ad.square(b) - 4.0 * a * c
        disc = ad.clamp(disc, 0.0, None)
        theta = (2.0 * c) / (-b - ad.sqrt(disc))
        x = theta * wk + xk
        t1mt = theta * (1.0 - theta)
        den = delta + s * t1mt
        dnum = ad.square(delta) * (dk1 * ad.square(theta) + 2.0 * delta * t1mt + dk * ad.square(1.0 - theta))
        logdet = 2.0 * ad.log(den) - ad.log(dnum)
        return ad.where(inside, x, y), ad.where(inside, logdet, 0.0)


def spline_forward(s: RqSpline, z):
    return s.forward(z)


def spline_inverse(s: RqSpline, x):
    return s.inverse(x)
