"""Missing-completely-at-random masks."""

from __future__ import annotations

import numpy as np

from ..data import Dataset
from ..numerics.rng import RngStream


def mcar_mask(shape: tuple[int, int], rate: float, rng: RngStream) -> np.ndarray:
    """1 = observed. Each cell is hidden independently with probability
    ``rate``; rows that come out fully hidden are redrawn."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("mask rate must lie in [0, 1)")
    n, d = shape
    mask = (rng.uniform(size=(n, d)) >= rate).astype(np.float64)
    empty = np.flatnonzero(mask.sum(axis=1) == 0)
    while empty.size:
        mask[empty] = (rng.uniform(size=(empty.size, d)) >= rate).astype(np.float64)
        empty = empty[mask[empty].sum(axis=1) == 0]
    return mask


def apply_mcar_mask(dataset: Dataset, rate: float, rng: RngStream, columns: list[int] | None = None) -> Dataset:
    """Hide cells completely at random. ``columns`` restricts masking to a
    subset of variables (the others stay fully observed)."""
    if columns is None or len(columns) == dataset.d:
        mask = mcar_mask(dataset.values.shape, rate, rng)
    else:
        # the untouched columns keep every row partly observed, so no redraws
        if not 0.0 <= rate < 1.0:
            raise ValueError("mask rate must lie in [0, 1)")
        mask = np.ones(dataset.values.shape)
        mask[:, columns] = (rng.uniform(size=(dataset.n, len(columns))) >= rate).astype(np.float64)
    if dataset.mask is not None:
        mask = mask * dataset.mask
    meta = {**dataset.meta, "mcar_rate": rate}
    return Dataset(dataset.specs, dataset.values, mask if np.any(mask == 0) else None, meta)
