"""Voxel-occupancy autoencoder and its noisy-transmit training loop.

The encoder maps a binary occupancy cube (side divisible by 4) through
two stride-2 stages to a real latent vector; the decoder mirrors it
back to per-voxel logits. Training simulates the analog link in-graph:
the latent is power normalized, channel noise is added as a constant,
the original scale is multiplied back, and the weighted occupancy
cross-entropy is minimized end to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensornet as tn

TRAIN_CHANNELS = ("awgn", "rayleigh", "none")


@dataclass(frozen=True)
class CodecConfig:
    cube_side: int = 16
    widths: tuple[int, int, int] = (8, 16, 32)
    latent_channels: int = 4
    vrn_per_stage: int = 1

    def __post_init__(self):
        if self.cube_side < 4 or self.cube_side % 4 != 0:
            raise ValueError("cube_side must be a positive multiple of 4")
        if len(self.widths) != 3 or any(w % 4 != 0 or w <= 0 for w in self.widths):
            raise ValueError("widths must be three positive multiples of 4")
        if self.latent_channels < 1:
            raise ValueError("latent_channels must be >= 1")
        if self.vrn_per_stage < 0:
            raise ValueError("vrn_per_stage must be >= 0")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def latent_side(self) -> int:
        return self.cube_side // 4

    @property
    def latent_length(self) -> int:
        return self.latent_channels * self.latent_side ** 3

    @property
    def compression_ratio(self) -> float:
        """Latent reals per input voxel."""
        return self.latent_length / self.cube_side ** 3

    def to_dict(self) -> dict:
        return {
            "cube_side": self.cube_side,
            "widths": list(self.widths),
            "latent_channels": self.latent_channels,
            "vrn_per_stage": self.vrn_per_stage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(
            cube_side=int(d["cube_side"]),
            widths=tuple(int(w) for w in d["widths"]),
            latent_channels=int(d["latent_channels"]),
            vrn_per_stage=int(d["vrn_per_stage"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    snr_db: float = 10.0
    channel: str = "awgn"
    zeta: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.channel not in TRAIN_CHANNELS:
            raise ValueError(f"channel must be one of {TRAIN_CHANNELS}, got {self.channel!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class Codec:
    """Symmetric conv autoencoder over occupancy cubes.

    Parameters live in `params`, name -> Tensor, in a stable order so
    checkpoints round-trip byte exactly.
    """

    def __init__(self, config: CodecConfig, seed: int = 0):
        self.config = config
        self.dtype = np.float32
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.params: dict[str, tn.Tensor] = {}
        c0, c1, c2 = config.widths
        f = config.latent_channels
        n = config.vrn_per_stage

        self._conv_param(rng, "enc.in", c0, 1)
        self._enc_vrn0 = self._vrn_stack(rng, "enc.s0", c0, n)
        self._conv_param(rng, "enc.down1", c1, c0)
        self._enc_vrn1 = self._vrn_stack(rng, "enc.s1", c1, n)
        self._conv_param(rng, "enc.down2", c2, c1)
        self._enc_vrn2 = self._vrn_stack(rng, "enc.s2", c2, n)
        self._conv_param(rng, "enc.mid", c0, c2)
        self._conv_param(rng, "enc.out", f, c0, gain=0.25)

        self._conv_param(rng, "dec.in", c0, f)
        self._conv_param(rng, "dec.expand", c2, c0)
        self._dec_vrn2 = self._vrn_stack(rng, "dec.s2", c2, n)
        self._conv_param(rng, "dec.up1", c1, c2, transpose=True)
        self._dec_vrn1 = self._vrn_stack(rng, "dec.s1", c1, n)
        self._conv_param(rng, "dec.up2", c0, c1, transpose=True)
        self._dec_vrn0 = self._vrn_stack(rng, "dec.s0", c0, n)
        self._conv_param(rng, "dec.out", 1, c0, gain=0.25)

    def _conv_param(self, rng, name, c_out, c_in, gain=1.0, transpose=False):
        # transpose conv weights are stored (c_in, c_out, 3, 3, 3)
        shape = (c_in, c_out, 3, 3, 3) if transpose else (c_out, c_in, 3, 3, 3)
        self.params[name + ".w"] = tn.Tensor(
            tn.he_uniform(rng, shape, self.dtype, gain=gain), requires_grad=True
        )
        self.params[name + ".b"] = tn.Tensor(
            np.zeros(c_out, dtype=self.dtype), requires_grad=True
        )

    def _vrn_stack(self, rng, prefix, channels, count):
        blocks = []
        for i in range(count):
            blk = tn.VrnBlock(channels, rng, prefix=f"{prefix}.vrn{i}", dtype=self.dtype)
            self.params.update(blk.params)
            blocks.append(blk)
        return blocks

    @property
    def n_parameters(self) -> int:
        return sum(p.values.size for p in self.params.values())

    def _pb(self, name):
        return self.params[name + ".w"], self.params[name + ".b"]

    # graph builders ---------------------------------------------------

    def encode_graph(self, x: tn.Tensor) -> tn.Tensor:
        """(B, 1, S, S, S) occupancy tensor -> (B, L) latent tensor."""
        w, b = self._pb("enc.in")
        h = tn.conv3d(x, w, b)
        for blk in self._enc_vrn0:
            h = blk(h)
        w, b = self._pb("enc.down1")
        h = tn.conv3d(h, w, b, stride=2)
        for blk in self._enc_vrn1:
            h = blk(h)
        w, b = self._pb("enc.down2")
        h = tn.conv3d(h, w, b, stride=2)
        for blk in self._enc_vrn2:
            h = blk(h)
        w, b = self._pb("enc.mid")
        h = tn.relu(tn.conv3d(tn.relu(h), w, b))
        w, b = self._pb("enc.out")
        y = tn.conv3d(h, w, b)
        return y.reshape((x.values.shape[0], self.config.latent_length))

    def decode_graph(self, z: tn.Tensor) -> tn.Tensor:
        """(B, L) latent tensor -> (B, 1, S, S, S) logits tensor."""
        cfg = self.config
        ls = cfg.latent_side
        h = z.reshape((z.values.shape[0], cfg.latent_channels, ls, ls, ls))
        w, b = self._pb("dec.in")
        h = tn.conv3d(h, w, b)
        w, b = self._pb("dec.expand")
        h = tn.conv3d(tn.relu(h), w, b)
        for blk in self._dec_vrn2:
            h = blk(h)
        w, b = self._pb("dec.up1")
        h = tn.conv_transpose3d(h, w, b, stride=2, padding=1)
        for blk in self._dec_vrn1:
            h = blk(h)
        w, b = self._pb("dec.up2")
        h = tn.conv_transpose3d(h, w, b, stride=2, padding=1)
        for blk in self._dec_vrn0:
            h = blk(h)
        w, b = self._pb("dec.out")
        return tn.conv3d(tn.relu(h), w, b)

    # array-in / array-out inference ------------------------------------

    def _as_batch(self, occupancy: np.ndarray) -> tuple[np.ndarray, bool]:
        occ = np.asarray(occupancy)
        single = occ.ndim == 3
        if single:
            occ = occ[None]
        s = self.config.cube_side
        if occ.ndim != 4 or occ.shape[1:] != (s, s, s):
            raise ValueError(f"occupancy must be (batch, {s}, {s}, {s}) or a single cube")
        if not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupancy must be binary")
        return occ.astype(self.dtype), single

    def encode(self, occupancy: np.ndarray) -> np.ndarray:
        """Binary occupancy (B, S, S, S) -> latent (B, L) float32."""
        occ, single = self._as_batch(occupancy)
        y = self.encode_graph(tn.Tensor(occ[:, None])).values
        return y[0] if single else y

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """Latent (B, L) -> occupancy logits (B, S, S, S) float32."""
        z = np.asarray(latent, dtype=self.dtype)
        single = z.ndim == 1
        if single:
            z = z[None]
        if z.ndim != 2 or z.shape[1] != self.config.latent_length:
            raise ValueError(f"latent must have length {self.config.latent_length}")
        logits = self.decode_graph(tn.Tensor(z)).values[:, 0]
        return logits[0] if single else logits

    # training -----------------------------------------------------------

    def train(self, occupancy: np.ndarray, cfg: TrainConfig) -> list[float]:
        """Optimize in place on (N, S, S, S) binary cubes; per-step losses."""
        occ, _ = self._as_batch(occupancy)
        if occ.shape[0] < 1:
            raise ValueError("empty training set")
        order_rng, noise_rng = (
            np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)
        )
        opt = tn.AdamState.init(self.params, lr=cfg.lr)
        sigma = 0.0 if math.isinf(cfg.snr_db) else 10.0 ** (-cfg.snr_db / 20.0)
        add_noise = cfg.channel != "none" and sigma > 0.0
        history: list[float] = []
        for _ in range(cfg.epochs):
            order = order_rng.permutation(occ.shape[0])
            for start in range(0, occ.shape[0], cfg.batch_size):
                batch = occ[order[start:start + cfg.batch_size]]
                x = tn.Tensor(batch[:, None])
                y = self.encode_graph(x)
                sent = tn.normalize_rows(y)
                scale = tn.rms_rows(y)
                if add_noise:
                    noise = noise_rng.normal(0.0, sigma, size=sent.values.shape)
                    if cfg.channel == "rayleigh":
                        # equalized block fading: n / h with |h|^2 ~ Exp(1)
                        h2 = noise_rng.standard_exponential(size=(batch.shape[0], 1))
                        noise = noise / np.sqrt(h2)
                    sent = tn.add(sent, noise.astype(self.dtype))
                logits = self.decode_graph(tn.mul(sent, scale))
                loss = tn.wbce_loss(logits, batch[:, None], zeta=cfg.zeta, batch_axis=0)
                for p in self.params.values():
                    p.zero_grad()
                loss.backward()
                tn.adam_step(self.params, opt)
                history.append(loss.item())
        return history

    # persistence ----------------------------------------------------------

    def save(self) -> bytes:
        return tn.write_checkpoint(
            self.config.to_dict(), {k: t.values for k, t in self.params.items()}
        )

    @classmethod
    def load(cls, blob: bytes) -> "Codec":
        cfg_dict, arrays = tn.read_checkpoint(blob)
        codec = cls(CodecConfig.from_dict(cfg_dict))
        missing = set(codec.params) - set(arrays)
        extra = set(arrays) - set(codec.params)
        if missing or extra:
            raise ValueError(f"checkpoint parameter mismatch: missing={sorted(missing)} "
                             f"extra={sorted(extra)}")
        for name, p in codec.params.items():
            arr = arrays[name]
            if arr.shape != p.values.shape:
                raise ValueError(f"parameter {name!r} has shape {arr.shape}, "
                                 f"expected {p.values.shape}")
            p.values = arr.astype(codec.dtype)
        return codec
