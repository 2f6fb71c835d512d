"""Two-user transmission with partial latent superposition.

Both users' cubes are encoded and power normalized; at the latent
positions where the two normalized vectors agree most (smallest
absolute difference), a single superposed value carries both users.
The remaining positions are sent privately per user, so a sharing
ratio of sor spends (2 - sor)/2 of the two-user bandwidth. Receivers
split a shared value evenly, which at zero noise leaves each user an
error of exactly half the latent difference at that position.

The same computation serves both link directions: uplink assumes the
receiver can form the superposition from both users' signals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import tensornet as tn
from .channel import ChannelConfig, normalize_power, transmit
from .codec import Codec
from .voxel import binarize_topk

SLOT_SHARED, SLOT_USER1, SLOT_USER2 = 0, 1, 2


def latent_difference(n1: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Elementwise |n1 - n2| of two equal-length normalized latents."""
    a, b = np.asarray(n1, dtype=np.float64), np.asarray(n2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("latents must be flat vectors of equal length")
    return np.abs(a - b)


def split_shared(n1: np.ndarray, n2: np.ndarray, sor: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices to share vs send privately; (shared, private), both sorted.

    The floor(L * sor) positions with the smallest latent difference are
    shared; ties go to the lower index.
    """
    if not 0.0 <= sor <= 1.0:
        raise ValueError(f"sor must be in [0, 1], got {sor}")
    diff = latent_difference(n1, n2)
    m = math.floor(diff.size * sor)
    order = np.argsort(diff, kind="stable")
    return np.sort(order[:m]), np.sort(order[m:])


def extract_shared(received: np.ndarray) -> np.ndarray:
    """Each user's estimate of its own component: an even split."""
    return np.asarray(received) / 2.0


def bandwidth_occupancy(sor: float) -> float:
    """Fraction of the two-user symbol budget actually transmitted."""
    return (2.0 - sor) / 2.0


def shared_budget_fraction(sor: float) -> float:
    """Fraction of the total budget carried by superposed symbols."""
    return sor / 2.0


def sigma_at_sor(n1: np.ndarray, n2: np.ndarray, sor: float) -> float:
    """Latent difference at the sharing cutoff rank (clamped to the top)."""
    if not 0.0 <= sor <= 1.0:
        raise ValueError(f"sor must be in [0, 1], got {sor}")
    diff = np.sort(latent_difference(n1, n2))
    rank = min(math.floor(diff.size * sor), diff.size - 1)
    return float(diff[rank])


def shared_count(n1: np.ndarray, n2: np.ndarray, threshold: float = 0.001) -> int:
    """How many latent positions differ by strictly less than threshold."""
    return int(np.sum(latent_difference(n1, n2) < threshold))


@dataclass(frozen=True)
class MdmaFrame:
    """Pre-channel slot contents for one two-user transmission."""

    shared_idx: np.ndarray
    private_idx: np.ndarray
    shared_values: np.ndarray     # n1 + n2 at shared positions, unrescaled
    private1_values: np.ndarray
    private2_values: np.ndarray

    @property
    def n_symbols(self) -> int:
        return self.shared_idx.size + 2 * self.private_idx.size


def build_frame(n1: np.ndarray, n2: np.ndarray, sor: float) -> MdmaFrame:
    shared_idx, private_idx = split_shared(n1, n2, sor)
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    return MdmaFrame(
        shared_idx=shared_idx,
        private_idx=private_idx,
        shared_values=n1[shared_idx] + n2[shared_idx],
        private1_values=n1[private_idx],
        private2_values=n2[private_idx],
    )


@dataclass(frozen=True)
class LinkResult:
    occupancy1: np.ndarray
    occupancy2: np.ndarray
    latent1: np.ndarray
    latent2: np.ndarray
    n_shared: int
    n_symbols: int
    bandwidth_occupancy: float


def relay_latents(n1: np.ndarray, s1: float, n2: np.ndarray, s2: float,
                  sor: float, cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray, MdmaFrame]:
    """Channel round trip on normalized latents; rescaled estimates.

    Each slot draws noise from seed ^ slot index, so sor = 0 reproduces
    two independent single-user transmissions at seeds seed^1 and
    seed^2. Empty slots are skipped.
    """
    frame = build_frame(n1, n2, sor)

    def send(values, slot):
        if values.size == 0:
            return values
        return transmit(values, replace(cfg, seed=cfg.seed ^ slot))

    r_shared = send(frame.shared_values, SLOT_SHARED)
    r_p1 = send(frame.private1_values, SLOT_USER1)
    r_p2 = send(frame.private2_values, SLOT_USER2)

    def reassemble(r_private, scale):
        est = np.empty(np.asarray(n1).size)
        est[frame.shared_idx] = extract_shared(r_shared)
        est[frame.private_idx] = r_private
        return est * scale

    return reassemble(r_p1, s1), reassemble(r_p2, s2), frame


def downlink(codec: Codec, occ1: np.ndarray, occ2: np.ndarray, sor: float,
             cfg: ChannelConfig) -> LinkResult:
    """Full two-user round trip: encode, relay, decode, re-binarize."""
    y1, y2 = codec.encode(occ1), codec.encode(occ2)
    n1, s1 = normalize_power(y1)
    n2, s2 = normalize_power(y2)
    latent1, latent2, frame = relay_latents(n1, s1, n2, s2, sor, cfg)

    def as_cube(latent, occ):
        probs = tn.sigmoid_values(codec.decode(latent.astype(codec.dtype)))
        return binarize_topk(probs, int(np.asarray(occ).sum()))

    return LinkResult(
        occupancy1=as_cube(latent1, occ1),
        occupancy2=as_cube(latent2, occ2),
        latent1=latent1,
        latent2=latent2,
        n_shared=int(frame.shared_idx.size),
        n_symbols=frame.n_symbols,
        bandwidth_occupancy=bandwidth_occupancy(sor),
    )


def uplink(codec: Codec, occ1: np.ndarray, occ2: np.ndarray, sor: float,
           cfg: ChannelConfig) -> LinkResult:
    """Reverse link; identical arithmetic given ideal superposition."""
    return downlink(codec, occ1, occ2, sor, cfg)
