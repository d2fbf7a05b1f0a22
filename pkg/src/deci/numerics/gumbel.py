from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import RngStream


def gumbel_softmax(logits, temperature: float, hard: bool, rng: RngStream) -> Tensor:
    """Relaxed categorical sample over the last axis.

    With ``hard`` the forward value is the one-hot argmax of the perturbed
    logits and the backward pass uses the gradient of the soft sample.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = ad.as_tensor(logits)
    noise = rng.gumbel(logits.shape)
    soft = ad.softmax((logits + noise) * (1.0 / temperature), axis=-1)
    if not hard:
        return soft
    winner = np.argmax(logits.data + noise, axis=-1)
    one_hot = np.zeros(logits.shape)
    np.put_along_axis(one_hot, winner[..., None], 1.0, axis=-1)
    return ad.straight_through(one_hot, soft)


def binary_gumbel_softmax(logits, temperature: float, hard: bool, rng: RngStream) -> Tensor:
    """Two-class special case returning the probability of the first class.

    Equivalent to ``gumbel_softmax(stack([l, 0]))[..., 0]``; the difference of
    two Gumbel draws is logistic noise.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = ad.as_tensor(logits)
    noise = rng.gumbel(logits.shape) - rng.gumbel(logits.shape)
    perturbed = logits + noise
    soft = ad.sigmoid(perturbed * (1.0 / temperature))
    if not hard:
        return soft
    return ad.straight_through((perturbed.data > 0).astype(np.float64), soft)
