"""Experiment drivers: corpora, link round trips and quality sweeps.

Sweeps operate on held-out evaluation shapes. Per-cube channel seeds
mix a base seed with the cube's global ordinal and never depend on the
swept quantity, so every grid point of a sweep sees common random
noise realizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import mdma, rate, sse
from .channel import ChannelConfig, DigitalConfig, digital_transmit, normalize_power, transmit
from .codec import Codec
from .metrics import QualityReport, compare, estimate_normals, psnr
from .pointcloud_io import SHAPE_KINDS, PointCloud, gen_shape
from .voxel import Cube, binarize_topk, merge, partition

TRAIN_SEEDS = (0, 1, 2, 3, 4)
EVAL_SEEDS = (900,)


@dataclass(frozen=True)
class CorpusConfig:
    """How to sample shapes and slice them into codec-sized cubes."""

    kinds: tuple[str, ...] = SHAPE_KINDS
    seeds: tuple[int, ...] = TRAIN_SEEDS
    precision_b: int = 6
    points_per_shape: int = 40000
    cube_side: int = 16
    min_occupied: int = 16
    max_cubes: int | None = 512

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {kind!r}")


def _shape_cubes(cfg: CorpusConfig, kind: str, seed: int) -> list[Cube]:
    cloud = gen_shape(kind, cfg.points_per_shape, cfg.precision_b, seed)
    return [c for c in partition(cloud, cfg.cube_side)
            if c.k_occupied >= cfg.min_occupied]


def _even_subset(n: int, cap: int | None) -> np.ndarray:
    if cap is None or n <= cap:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, cap).round().astype(int))


def training_occupancy(cfg: CorpusConfig = CorpusConfig()) -> np.ndarray:
    """Stacked binary cubes from every (kind, seed) shape, capped evenly."""
    cubes = [c for kind in cfg.kinds for seed in cfg.seeds
             for c in _shape_cubes(cfg, kind, seed)]
    if not cubes:
        raise ValueError("corpus configuration produced no cubes")
    keep = _even_subset(len(cubes), cfg.max_cubes)
    return np.stack([cubes[i].occupancy for i in keep])


@dataclass
class EvalShape:
    """A held-out shape restricted to the cubes the link will carry."""

    kind: str
    seed: int
    cloud: PointCloud
    cubes: list[Cube]
    _normals: np.ndarray | None = field(default=None, repr=False)

    def source_normals(self) -> np.ndarray:
        if self._normals is None:
            self._normals = estimate_normals(self.cloud.points)
        return self._normals


def eval_shapes(kinds: Sequence[str] = SHAPE_KINDS, seeds: Sequence[int] = EVAL_SEEDS,
                precision_b: int = 6, points_per_shape: int = 40000,
                cube_side: int = 16, min_occupied: int = 32,
                max_cubes_per_shape: int | None = 24) -> list[EvalShape]:
    """Held-out shapes; each reference cloud is the union of kept cubes."""
    cfg = CorpusConfig(kinds=tuple(kinds), seeds=tuple(seeds),
                       precision_b=precision_b, points_per_shape=points_per_shape,
                       cube_side=cube_side, min_occupied=min_occupied,
                       max_cubes=None)
    shapes = []
    for kind in cfg.kinds:
        for seed in cfg.seeds:
            cubes = _shape_cubes(cfg, kind, seed)
            if not cubes:
                continue
            cubes = [cubes[i] for i in _even_subset(len(cubes), max_cubes_per_shape)]
            shapes.append(EvalShape(kind, seed, merge(cubes, precision_b), cubes))
    if not shapes:
        raise ValueError("evaluation configuration produced no shapes")
    return shapes


def reconstruct_cubes(codec: Codec, cubes: Sequence[Cube], channel_cfg: ChannelConfig,
                      *, drop_ratio: float = 0.0, method: str = "value",
                      per_channel: bool = False, importance_seed: int = 0,
                      ordinal_base: int = 0) -> tuple[list[Cube], int]:
    """Analog link round trip for a batch of cubes.

    Optionally drops the least important latent fraction before the
    channel; the receiver zero-fills dropped positions. Returns the
    reconstructed cubes and the total number of transmitted values.
    """
    occs = np.stack([c.occupancy for c in cubes])
    latent = codec.encode(occs)
    estimates = np.empty_like(latent, dtype=np.float64)
    n_symbols = 0
    for i, cube in enumerate(cubes):
        ordinal = ordinal_base + i
        y = latent[i]
        mask = None
        if drop_ratio > 0.0:
            scores = rate.importance(codec, y, cube.occupancy, method,
                                     per_channel=per_channel,
                                     seed=importance_seed ^ ordinal)
            mask = rate.build_mask(scores, drop_ratio)
            y = rate.apply_mask(y, mask)
        normed, scale = normalize_power(y)
        received = transmit(normed, replace(channel_cfg, seed=channel_cfg.seed ^ ordinal))
        received = received * scale
        estimates[i] = received if mask is None else rate.recover(received, mask)
        n_symbols += y.size
    logits = codec.decode(estimates)
    recon = [Cube(c.index, binarize_topk(logits[i], c.k_occupied), c.side)
             for i, c in enumerate(cubes)]
    return recon, n_symbols


def reconstruct_cubes_digital(codec: Codec, cubes: Sequence[Cube], dig_cfg: DigitalConfig,
                              *, ordinal_base: int = 0) -> tuple[list[Cube], int]:
    """Quantize/code/modulate baseline round trip for a batch of cubes."""
    occs = np.stack([c.occupancy for c in cubes])
    latent = codec.encode(occs)
    estimates = np.empty_like(latent, dtype=np.float64)
    n_symbols = 0
    for i, cube in enumerate(cubes):
        res = digital_transmit(latent[i],
                               replace(dig_cfg, seed=dig_cfg.seed ^ (ordinal_base + i)))
        estimates[i] = res.values
        n_symbols += res.n_symbols
    logits = codec.decode(estimates)
    recon = [Cube(c.index, binarize_topk(logits[i], c.k_occupied), c.side)
             for i, c in enumerate(cubes)]
    return recon, n_symbols


def shape_quality(shape: EvalShape, recon_cubes: Sequence[Cube],
                  direction: str = "a_to_b") -> QualityReport:
    rec = merge(list(recon_cubes), shape.cloud.precision_b)
    return compare(shape.cloud, rec, direction, normals_a=shape.source_normals())


def pooled_quality(reports: Sequence[QualityReport], precision_b: int) -> dict:
    """Per-point pooled squared error across shapes, then PSNR.

    Weighted by the original cloud sizes, so for the a_to_b direction
    this is exactly the mean over all source points.
    """
    weights = np.array([r.n_a for r in reports], dtype=np.float64)
    mse_c2c = float(np.dot(weights, [r.mse_c2c for r in reports]) / weights.sum())
    mse_c2p = float(np.dot(weights, [r.mse_c2p for r in reports]) / weights.sum())
    return {
        "mse_c2c": mse_c2c,
        "mse_c2p": mse_c2p,
        "psnr_c2c": psnr(mse_c2c, precision_b),
        "psnr_c2p": psnr(mse_c2p, precision_b),
    }


def _link_rows(shapes, precision_b, direction, run_one, extra):
    reports, symbols, ordinal = [], 0, 0
    for shape in shapes:
        recon, ns = run_one(shape, ordinal)
        ordinal += len(shape.cubes)
        symbols += ns
        reports.append(shape_quality(shape, recon, direction))
    row = dict(extra)
    row.update(pooled_quality(reports, precision_b))
    row["n_symbols"] = symbols
    return row


def snr_sweep(codec: Codec, shapes: Sequence[EvalShape], snr_grid: Sequence[float],
              fading: str = "awgn", seed: int = 0, direction: str = "a_to_b",
              digital: DigitalConfig | None = None) -> list[dict]:
    """Quality vs channel SNR for the analog link and an optional baseline."""
    precision_b = shapes[0].cloud.precision_b
    rows = []
    for snr_db in snr_grid:
        cfg = ChannelConfig(snr_db=float(snr_db), fading=fading, seed=seed)
        rows.append(_link_rows(
            shapes, precision_b, direction,
            lambda shape, o: reconstruct_cubes(codec, shape.cubes, cfg, ordinal_base=o),
            {"link": "jscc", "snr_db": float(snr_db)}))
    if digital is not None:
        label = f"digital-{digital.modulation}-{digital.coding}"
        for snr_db in snr_grid:
            dig = replace(digital, snr_db=float(snr_db), seed=seed)
            rows.append(_link_rows(
                shapes, precision_b, direction,
                lambda shape, o: reconstruct_cubes_digital(codec, shape.cubes, dig,
                                                           ordinal_base=o),
                {"link": label, "snr_db": float(snr_db)}))
    return rows


def rate_sweep(codec: Codec, shapes: Sequence[EvalShape], drop_ratios: Sequence[float],
               method: str = "value", per_channel: bool = False, snr_db: float = 10.0,
               fading: str = "awgn", seed: int = 0,
               direction: str = "a_to_b") -> list[dict]:
    """Quality vs latent drop ratio at a fixed channel operating point."""
    precision_b = shapes[0].cloud.precision_b
    cfg = ChannelConfig(snr_db=float(snr_db), fading=fading, seed=seed)
    length = codec.config.latent_length
    rows = []
    for drop in drop_ratios:
        kept = length - int(length * float(drop))
        rows.append(_link_rows(
            shapes, precision_b, direction,
            lambda shape, o: reconstruct_cubes(
                codec, shape.cubes, cfg, drop_ratio=float(drop), method=method,
                per_channel=per_channel, importance_seed=seed, ordinal_base=o),
            {"method": method, "drop_ratio": float(drop),
             "cbr": kept / codec.config.cube_side ** 3, "snr_db": float(snr_db)}))
    return rows


def cube_pairs(shapes: Sequence[EvalShape], n_pairs: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic two-user pairings drawn evenly from the eval cubes."""
    occs = [c.occupancy for shape in shapes for c in shape.cubes]
    if len(occs) < 2 * n_pairs:
        raise ValueError(f"need {2 * n_pairs} cubes for {n_pairs} pairs, have {len(occs)}")
    keep = _even_subset(len(occs), 2 * n_pairs)
    return [(occs[keep[2 * i]], occs[keep[2 * i + 1]]) for i in range(n_pairs)]


def mdma_sweep(codec: Codec, pairs: Sequence[tuple[np.ndarray, np.ndarray]],
               sor_grid: Sequence[float], snr_db: float = 10.0, fading: str = "awgn",
               seed: int = 0, n_reps: int = 3) -> list[dict]:
    """Two-user quality and latent-agreement stats per sharing ratio."""
    table = sse.build_g_table(codec, pairs, sor_values=tuple(sor_grid),
                              snr_values=(float(snr_db),), n_reps=n_reps,
                              base_seed=seed, fading=fading)
    normed = []
    for occ1, occ2 in pairs:
        n1, _ = normalize_power(codec.encode(occ1))
        n2, _ = normalize_power(codec.encode(occ2))
        normed.append((n1, n2))
    rows = []
    for i, sor in enumerate(sor_grid):
        sor = float(sor)
        sigma = float(np.mean([mdma.sigma_at_sor(n1, n2, sor) for n1, n2 in normed]))
        rows.append({
            "sor": sor,
            "snr_db": float(snr_db),
            "psnr_db": float(table.gains[i, 0]),
            "sigma": sigma,
            "bandwidth_occupancy": mdma.bandwidth_occupancy(sor),
            "shared_budget_fraction": mdma.shared_budget_fraction(sor),
        })
    return rows
