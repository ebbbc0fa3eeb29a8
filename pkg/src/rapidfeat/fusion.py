"""Channel-wise attention fusion of voxel embeddings.

Voxel-wise embedding tensors (c, l, f_i) are concatenated along the channel
axis, squeezed to per-channel descriptors by global average pooling, passed
through a two-layer excitation gate, and rescaled channel by channel.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError


def concat_embeddings(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate (c, l, f_i) tensors along the channel axis in given order.

    Slicing the result at the cumulative widths recovers each part exactly.
    """
    if not parts:
        raise ContractError("need at least one embedding to concatenate")
    arrays = [np.asarray(p, dtype=np.float64) for p in parts]
    base = arrays[0].shape[:2]
    for a in arrays:
        if a.ndim != 3 or a.shape[:2] != base:
            raise ContractError("all parts must share voxel and latent dimensions")
    return np.concatenate(arrays, axis=2)


def squeeze(fused: np.ndarray) -> np.ndarray:
    """Global average pooling over voxel and latent axes, one value per channel."""
    e = np.asarray(fused, dtype=np.float64)
    if e.ndim != 3 or e.shape[0] * e.shape[1] == 0:
        raise ContractError("expected a nonempty (c, l, f) tensor")
    return np.add.reduce(np.add.reduce(e, axis=0), axis=0) / (e.shape[0] * e.shape[1])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def excite(z: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Two-layer gate sigmoid(W2 relu(W1 z)).

    Components are strictly inside (0, 1); float64 saturates to exactly 0 or
    1 only when a pre-activation magnitude exceeds ~36.
    """
    z = np.asarray(z, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if w1.ndim != 2 or w1.shape[1] != z.shape[0]:
        raise ContractError(f"W1 must be (hidden, {z.shape[0]})")
    if w2.shape != (z.shape[0], w1.shape[0]):
        raise ContractError(f"W2 must be ({z.shape[0]}, {w1.shape[0]})")
    return _sigmoid(w2 @ np.maximum(w1 @ z, 0.0))


def fuse(fused: np.ndarray, attention: np.ndarray) -> np.ndarray:
    """Rescale every channel by its attention weight."""
    e = np.asarray(fused, dtype=np.float64)
    a = np.asarray(attention, dtype=np.float64)
    if e.shape[-1] != a.shape[-1]:
        raise ContractError("attention width must match the channel count")
    return e * a


def gate_weights(
    f_star: int, ratio: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Random excitation weights with hidden width f_star // ratio (at least 1)."""
    hidden = max(1, f_star // ratio)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(f_star), size=(hidden, f_star))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(f_star, hidden))
    return w1, w2
