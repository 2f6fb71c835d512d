"""Analog and digital channel models.

Real vectors are carried as complex baseband symbols (two reals per
symbol). SNR in dB is signal power over noise power: for the analog
path the per-real noise variance is 10^(-snr/10) times the input's
mean square, so the ratio holds at any input scale; for the digital
path constellations have unit average symbol energy and the complex
noise variance per symbol is 10^(-snr/10).

Rayleigh fading draws h ~ CN(0, 1) per block or per symbol and the
receiver equalizes with perfect channel knowledge, so fading shows up
as noise amplification 1/|h|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FADING_MODES = ("awgn", "rayleigh")
CODING_MODES = ("none", "hamming74")
MODULATIONS = ("bpsk", "qpsk", "qam16")


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    fading: str = "awgn"
    block_fading: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.fading not in FADING_MODES:
            raise ValueError(f"fading must be one of {FADING_MODES}, got {self.fading!r}")


def normalize_power(z: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a real vector to unit mean square; returns (scaled, scale).

    The all-zero vector is returned unchanged with scale 1 so that
    multiplying back is always the identity.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("normalize_power expects a flat vector")
    scale = math.sqrt(float(np.mean(np.square(z)))) if z.size else 0.0
    if scale == 0.0:
        return z.copy(), 1.0
    return z / scale, scale


def _reals_to_symbols(z: np.ndarray) -> np.ndarray:
    if z.size % 2:
        z = np.concatenate([z, [0.0]])
    return z[0::2] + 1j * z[1::2]


def _symbols_to_reals(s: np.ndarray, n: int) -> np.ndarray:
    out = np.empty(s.size * 2)
    out[0::2] = s.real
    out[1::2] = s.imag
    return out[:n]


def transmit(z: np.ndarray, cfg: ChannelConfig,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Send a real vector through the configured noisy channel."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("transmit expects a flat vector")
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        return z.copy()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    var_real = float(np.mean(np.square(z))) * 10.0 ** (-cfg.snr_db / 10.0)
    sym = _reals_to_symbols(z)
    n = sym.size
    noise = rng.normal(0.0, math.sqrt(var_real), size=(n, 2)) @ np.array([1.0, 1j])
    if cfg.fading == "rayleigh":
        h_shape = 1 if cfg.block_fading else n
        h = (rng.normal(size=(h_shape, 2)) @ np.array([1.0, 1j])) / math.sqrt(2.0)
        received = sym + noise / h  # (h*sym + noise) / h with perfect equalization
    else:
        received = sym + noise
    return _symbols_to_reals(received, z.size)


# ---------------------------------------------------------------------------
# scalar quantizer


def quantize_uniform(values: np.ndarray, bits: int) -> tuple[np.ndarray, float, float]:
    """Uniform quantization over the observed range; (indices, lo, hi)."""
    if not 1 <= bits <= 16:
        raise ValueError("bits must be in 1..16")
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros(v.shape, dtype=np.uint16), lo, hi
    levels = (1 << bits) - 1
    idx = np.rint((v - lo) / (hi - lo) * levels)
    return idx.astype(np.uint16), lo, hi


def dequantize_uniform(indices: np.ndarray, bits: int, lo: float, hi: float) -> np.ndarray:
    if hi == lo:
        return np.full(np.asarray(indices).shape, lo)
    levels = (1 << bits) - 1
    return lo + np.asarray(indices, dtype=np.float64) / levels * (hi - lo)


def pack_bits(indices: np.ndarray, bits: int) -> np.ndarray:
    """Indices to an MSB-first flat bit array."""
    idx = np.asarray(indices, dtype=np.uint16)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint16)
    return ((idx[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def unpack_bits(bit_array: np.ndarray, bits: int) -> np.ndarray:
    b = np.asarray(bit_array, dtype=np.uint16).reshape(-1, bits)
    shifts = np.arange(bits - 1, -1, -1, dtype=np.uint16)
    return (b << shifts).sum(axis=1).astype(np.uint16)


# ---------------------------------------------------------------------------
# Hamming(7,4), systematic

_HAMMING_P = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], dtype=np.uint8)
# syndrome integer (4*s0 + 2*s1 + s2) -> codeword bit to flip
_SYNDROME_POS = np.zeros(8, dtype=np.int64)
for _i in range(4):
    _SYNDROME_POS[int(_HAMMING_P[_i] @ [4, 2, 1])] = _i
for _i in range(3):
    _SYNDROME_POS[4 >> _i] = 4 + _i


def hamming74_encode(data_bits: np.ndarray) -> np.ndarray:
    d = np.asarray(data_bits, dtype=np.uint8).reshape(-1, 4)
    parity = (d @ _HAMMING_P) % 2
    return np.concatenate([d, parity], axis=1).ravel()


def hamming74_decode(code_bits: np.ndarray) -> np.ndarray:
    """Correct up to one flipped bit per 7-bit block, return data bits."""
    c = np.asarray(code_bits, dtype=np.uint8).reshape(-1, 7).copy()
    syndrome = (c[:, :4] @ _HAMMING_P + c[:, 4:]) % 2
    syn_int = syndrome @ np.array([4, 2, 1])
    bad = syn_int != 0
    rows = np.nonzero(bad)[0]
    c[rows, _SYNDROME_POS[syn_int[rows]]] ^= 1
    return c[:, :4].ravel()


# ---------------------------------------------------------------------------
# modulation, Gray-labelled, unit average energy

_QAM16_AXIS = np.array([-3.0, -1.0, 1.0, 3.0]) / math.sqrt(10.0)
# per-axis bit pairs in Gray order: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
_QAM16_LEVEL_OF_PAIR = {(0, 0): 0, (0, 1): 1, (1, 1): 2, (1, 0): 3}
_QAM16_PAIR_OF_LEVEL = {v: k for k, v in _QAM16_LEVEL_OF_PAIR.items()}

_BITS_PER_SYMBOL = {"bpsk": 1, "qpsk": 2, "qam16": 4}


def _pad_bits(bits: np.ndarray, multiple: int) -> np.ndarray:
    extra = -bits.size % multiple
    if extra:
        bits = np.concatenate([bits, np.zeros(extra, dtype=bits.dtype)])
    return bits


def modulate(bits: np.ndarray, scheme: str) -> np.ndarray:
    """Bits to complex symbols; input padded with zeros to a full symbol."""
    if scheme not in MODULATIONS:
        raise ValueError(f"modulation must be one of {MODULATIONS}, got {scheme!r}")
    bits = np.asarray(bits, dtype=np.uint8)
    bits = _pad_bits(bits, _BITS_PER_SYMBOL[scheme])
    if scheme == "bpsk":
        return (1.0 - 2.0 * bits).astype(np.complex128)
    if scheme == "qpsk":
        pairs = bits.reshape(-1, 2)
        return ((1.0 - 2.0 * pairs[:, 0]) + 1j * (1.0 - 2.0 * pairs[:, 1])) / math.sqrt(2.0)
    quads = bits.reshape(-1, 4)
    i_level = np.array([_QAM16_LEVEL_OF_PAIR[(a, b)] for a, b in zip(quads[:, 0], quads[:, 1])])
    q_level = np.array([_QAM16_LEVEL_OF_PAIR[(a, b)] for a, b in zip(quads[:, 2], quads[:, 3])])
    return _QAM16_AXIS[i_level] + 1j * _QAM16_AXIS[q_level]


def _qam16_axis_bits(x: np.ndarray) -> np.ndarray:
    level = np.clip(np.searchsorted(_QAM16_AXIS[:-1] + np.diff(_QAM16_AXIS) / 2, x), 0, 3)
    return np.array([_QAM16_PAIR_OF_LEVEL[int(l)] for l in level], dtype=np.uint8)


def demodulate(symbols: np.ndarray, scheme: str) -> np.ndarray:
    """Hard-decision detection back to bits (padding bits included)."""
    if scheme not in MODULATIONS:
        raise ValueError(f"modulation must be one of {MODULATIONS}, got {scheme!r}")
    s = np.asarray(symbols, dtype=np.complex128)
    if scheme == "bpsk":
        return (s.real < 0).astype(np.uint8)
    if scheme == "qpsk":
        out = np.empty((s.size, 2), dtype=np.uint8)
        out[:, 0] = s.real < 0
        out[:, 1] = s.imag < 0
        return out.ravel()
    return np.concatenate(
        [_qam16_axis_bits(s.real), _qam16_axis_bits(s.imag)], axis=0
    ).reshape(2, -1, 2).transpose(1, 0, 2).reshape(-1)


# ---------------------------------------------------------------------------
# digital end-to-end baseline


@dataclass(frozen=True)
class DigitalConfig:
    bits_per_value: int = 8
    coding: str = "none"
    modulation: str = "qpsk"
    snr_db: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.coding not in CODING_MODES:
            raise ValueError(f"coding must be one of {CODING_MODES}, got {self.coding!r}")
        if self.modulation not in MODULATIONS:
            raise ValueError(f"modulation must be one of {MODULATIONS}")
        if not 1 <= self.bits_per_value <= 16:
            raise ValueError("bits_per_value must be in 1..16")


@dataclass(frozen=True)
class DigitalResult:
    values: np.ndarray
    n_symbols: int


def digital_transmit(values: np.ndarray, cfg: DigitalConfig,
                     rng: np.random.Generator | None = None) -> DigitalResult:
    """Quantize, (optionally) code, modulate, add noise, hard-decode."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("digital_transmit expects a flat vector")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    idx, lo, hi = quantize_uniform(v, cfg.bits_per_value)
    bits = pack_bits(idx, cfg.bits_per_value)
    n_data_bits = bits.size
    if cfg.coding == "hamming74":
        bits = hamming74_encode(_pad_bits(bits, 4))
    sym = modulate(bits, cfg.modulation)
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        received = sym
    else:
        var_sym = 10.0 ** (-cfg.snr_db / 10.0)
        noise = rng.normal(0.0, math.sqrt(var_sym / 2.0), size=(sym.size, 2))
        received = sym + noise @ np.array([1.0, 1j])
    hat = demodulate(received, cfg.modulation)
    if cfg.coding == "hamming74":
        hat = hamming74_decode(hat)
    hat = hat[:n_data_bits]
    out = dequantize_uniform(unpack_bits(hat, cfg.bits_per_value), cfg.bits_per_value, lo, hi)
    return DigitalResult(values=out, n_symbols=sym.size)
