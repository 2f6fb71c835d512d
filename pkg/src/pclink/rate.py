"""Latent-element importance ranking and variable-rate masking.

The transmitter scores each latent element, drops the lowest-scoring
fraction, and sends only the survivors; the receiver knows the mask and
zero-fills the dropped positions before decoding. Gradient-based scores
differentiate the reconstruction loss of the clean decode with respect
to the latent vector itself.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensornet as tn
from .codec import Codec

IMPORTANCE_METHODS = ("value", "grad", "grad_value", "random", "drop_largest")


def latent_loss_grad(codec: Codec, latent: np.ndarray, occupancy: np.ndarray,
                     zeta: float = 3.0) -> np.ndarray:
    """d(loss)/d(latent) for a single cube's clean decode, float64."""
    z = tn.Tensor(np.asarray(latent, dtype=codec.dtype)[None].copy(), requires_grad=True)
    logits = codec.decode_graph(z)
    occ = np.asarray(occupancy)
    loss = tn.wbce_loss(logits, occ[None, None], zeta=zeta)
    loss.backward()
    return z.grad[0].astype(np.float64)


def importance(codec: Codec, latent: np.ndarray, occupancy: np.ndarray,
               method: str, per_channel: bool = False, seed: int = 0) -> np.ndarray:
    """Score latent elements; higher score = more important to keep.

    per_channel applies to "grad" only: elements of one latent feature
    channel share the magnitude of that channel's signed mean gradient.
    """
    if method not in IMPORTANCE_METHODS:
        raise ValueError(f"method must be one of {IMPORTANCE_METHODS}, got {method!r}")
    y = np.asarray(latent, dtype=np.float64)
    if y.shape != (codec.config.latent_length,):
        raise ValueError(f"latent must have shape ({codec.config.latent_length},)")
    if per_channel and method != "grad":
        raise ValueError("per_channel ranking is defined for the grad method only")

    if method == "value":
        return np.abs(y)
    if method == "drop_largest":
        return -np.abs(y)
    if method == "random":
        return np.random.default_rng(seed).random(y.size)

    g = latent_loss_grad(codec, y, occupancy)
    if method == "grad":
        if per_channel:
            per_ch = g.reshape(codec.config.latent_channels, -1).mean(axis=1)
            return np.repeat(np.abs(per_ch), y.size // per_ch.size)
        return np.abs(g)
    return np.abs(g * y)  # grad_value


def build_mask(scores: np.ndarray, drop_ratio: float) -> np.ndarray:
    """Keep-mask that zeroes exactly floor(n * drop_ratio) elements.

    The lowest scores are dropped; ties break toward dropping the lower
    index.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError("scores must be a flat vector")
    if not 0.0 <= drop_ratio <= 1.0:
        raise ValueError(f"drop_ratio must be in [0, 1], got {drop_ratio}")
    n_drop = math.floor(s.size * drop_ratio)
    mask = np.ones(s.size, dtype=bool)
    mask[np.argsort(s, kind="stable")[:n_drop]] = False
    return mask


def apply_mask(latent: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Compact the kept elements into the transmit vector."""
    y = np.asarray(latent)
    m = _check_mask(mask, y.size)
    return y[m]


def recover(kept: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero-fill dropped positions back to full latent length."""
    m = _check_mask(mask, mask.size)
    kept = np.asarray(kept)
    if kept.size != int(m.sum()):
        raise ValueError(f"kept has {kept.size} values, mask keeps {int(m.sum())}")
    out = np.zeros(m.size, dtype=kept.dtype)
    out[m] = kept
    return out


def _check_mask(mask: np.ndarray, expect: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != bool or m.ndim != 1 or m.size != expect:
        raise ValueError("mask must be a flat bool array matching the latent length")
    return m


def cbr(mask: np.ndarray, cube_side: int) -> float:
    """Channel uses (kept reals) per source voxel."""
    m = _check_mask(mask, np.asarray(mask).size)
    return float(m.sum()) / cube_side ** 3


def mask_to_bytes(mask: np.ndarray) -> bytes:
    return np.packbits(_check_mask(mask, np.asarray(mask).size)).tobytes()


def mask_from_bytes(data: bytes, length: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits.size < length:
        raise ValueError(f"mask bytes hold {bits.size} bits, need {length}")
    return bits[:length].astype(bool)
