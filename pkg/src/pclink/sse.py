"""Sharing-ratio selection from a measured two-user quality table.

A gain table holds mean reconstruction PSNR of the two-user link on a
grid of sharing ratios (rows) and channel SNRs (columns). Efficiency
of a cell divides quality by the bandwidth actually spent:

    phi = info_fraction * gain / (2 - sor)

The optimizer looks at the column nearest the operating SNR and picks
the feasible cell (gain and phi above their thresholds, sharing ratio
at most a cap) with the highest phi, preferring the smaller sharing
ratio on ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelConfig, normalize_power
from .codec import Codec
from .mdma import relay_latents
from .metrics import mse_c2c, psnr
from .voxel import binarize_topk

DEFAULT_SOR_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DEFAULT_SNR_GRID = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
SOR_CAP_DEFAULT = 0.8


@dataclass
class GTable:
    """Mean PSNR per (sharing ratio, SNR) grid cell."""

    sor_values: np.ndarray
    snr_values: np.ndarray
    gains: np.ndarray

    def __post_init__(self):
        self.sor_values = np.asarray(self.sor_values, dtype=np.float64)
        self.snr_values = np.asarray(self.snr_values, dtype=np.float64)
        self.gains = np.asarray(self.gains, dtype=np.float64)
        if self.sor_values.ndim != 1 or self.snr_values.ndim != 1:
            raise ValueError("grid axes must be one dimensional")
        if np.any(np.diff(self.sor_values) <= 0) or np.any(np.diff(self.snr_values) <= 0):
            raise ValueError("grid axes must be strictly increasing")
        if np.any(self.sor_values < 0) or np.any(self.sor_values > 1):
            raise ValueError("sharing ratios must lie in [0, 1]")
        if self.gains.shape != (self.sor_values.size, self.snr_values.size):
            raise ValueError(
                f"gains shape {self.gains.shape} does not match grid "
                f"({self.sor_values.size}, {self.snr_values.size})")

    def nearest_snr_column(self, snr_db: float) -> int:
        """Column index closest to snr_db; ties go to the lower SNR."""
        return int(np.argmin(np.abs(self.snr_values - snr_db)))

    def to_csv(self) -> str:
        lines = ["sor," + ",".join(repr(float(v)) for v in self.snr_values)]
        for sor, row in zip(self.sor_values, self.gains):
            lines.append(repr(float(sor)) + "," + ",".join(repr(float(g)) for g in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "GTable":
        rows = [line.split(",") for line in text.splitlines() if line.strip()]
        if not rows or rows[0][0] != "sor":
            raise ValueError("gain table csv must start with a 'sor' header row")
        snr_values = [float(v) for v in rows[0][1:]]
        sor_values, gains = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != len(snr_values) + 1:
                raise ValueError(f"line {lineno}: expected {len(snr_values) + 1} fields, got {len(row)}")
            sor_values.append(float(row[0]))
            gains.append([float(v) for v in row[1:]])
        return cls(np.array(sor_values), np.array(snr_values), np.array(gains))


def phi(gain: float, sor: float, info_fraction: float = 1.0) -> float:
    """Quality per unit of spent two-user bandwidth."""
    if not 0.0 <= sor <= 1.0:
        raise ValueError(f"sharing ratio must lie in [0, 1], got {sor}")
    return info_fraction * gain / (2.0 - sor)


@dataclass(frozen=True)
class OptimizeResult:
    feasible: bool
    sor: float
    gain: float
    phi: float
    snr_db: float


def optimize(table: GTable, snr_db: float, gain_threshold: float,
             phi_threshold: float, info_fraction: float = 1.0,
             sor_cap: float = SOR_CAP_DEFAULT) -> OptimizeResult:
    """Best feasible sharing ratio in the column nearest snr_db.

    Feasible cells satisfy gain >= gain_threshold, phi >= phi_threshold
    and sor <= sor_cap (with a 1e-12 slack for grid round-off). Among
    them the highest phi wins; exact ties keep the smaller sor. When no
    cell qualifies the result carries feasible=False and NaN values.
    """
    col = table.nearest_snr_column(snr_db)
    best = None
    for i, sor in enumerate(table.sor_values):
        if sor > sor_cap + 1e-12:
            continue
        g = float(table.gains[i, col])
        p = phi(g, float(sor), info_fraction)
        if g < gain_threshold or p < phi_threshold:
            continue
        if best is None or p > best[0]:
            best = (p, float(sor), g)
    snr_used = float(table.snr_values[col])
    if best is None:
        return OptimizeResult(False, math.nan, math.nan, math.nan, snr_used)
    return OptimizeResult(True, best[1], best[2], best[0], snr_used)


def _run_seed(base_seed: int, pair_index: int, rep: int) -> int:
    return int(np.random.SeedSequence((base_seed, pair_index, rep)).generate_state(1)[0])


def build_g_table(codec: Codec, pairs: Sequence[tuple[np.ndarray, np.ndarray]],
                  sor_values: Sequence[float] = DEFAULT_SOR_GRID,
                  snr_values: Sequence[float] = DEFAULT_SNR_GRID,
                  n_reps: int = 3, base_seed: int = 0, fading: str = "awgn",
                  psnr_cap_db: float = 100.0) -> GTable:
    """Measure the gain table by running the two-user link on cube pairs.

    Every grid cell averages the cube-local PSNR over all pairs, noise
    repetitions and both users. Exact reconstructions (infinite PSNR)
    are clamped to psnr_cap_db so cell means stay finite. Channel seeds
    depend only on (base_seed, pair, rep), so all cells see common
    random noise.
    """
    side = codec.config.cube_side
    if side & (side - 1):
        raise ValueError("cube side must be a power of two for cube-local psnr")
    bits = side.bit_length() - 1

    encoded, points, counts = [], [], []
    for occ1, occ2 in pairs:
        ks = (int(occ1.sum()), int(occ2.sum()))
        if min(ks) < 1:
            raise ValueError("gain table pairs must be non-empty cubes")
        n1, s1 = normalize_power(codec.encode(occ1))
        n2, s2 = normalize_power(codec.encode(occ2))
        encoded.append((n1, s1, n2, s2))
        points.append((np.argwhere(occ1), np.argwhere(occ2)))
        counts.append(ks)

    gains = np.empty((len(sor_values), len(snr_values)))
    for i, sor in enumerate(sor_values):
        for j, snr in enumerate(snr_values):
            latents = []
            for p_idx, (n1, s1, n2, s2) in enumerate(encoded):
                for rep in range(n_reps):
                    cfg = ChannelConfig(snr_db=float(snr), fading=fading,
                                        seed=_run_seed(base_seed, p_idx, rep))
                    l1, l2, _ = relay_latents(n1, s1, n2, s2, float(sor), cfg)
                    latents.extend((l1, l2))
            logits = codec.decode(np.stack(latents))
            run, cell = 0, []
            for p_idx in range(len(encoded)):
                for _ in range(n_reps):
                    for user in (0, 1):
                        occ_hat = binarize_topk(logits[run], counts[p_idx][user])
                        run += 1
                        mse = mse_c2c(points[p_idx][user], np.argwhere(occ_hat))
                        cell.append(min(psnr(mse, bits), psnr_cap_db))
            gains[i, j] = float(np.mean(cell))
    return GTable(np.asarray(sor_values, dtype=np.float64),
                  np.asarray(snr_values, dtype=np.float64), gains)
