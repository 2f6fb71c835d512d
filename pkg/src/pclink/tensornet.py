"""Minimal reverse-mode differentiation engine on numpy arrays.

Implements exactly the kernels the voxel codec needs: 3x3x3 convolution
and its transpose over (batch, channel, d, h, w) arrays, ReLU, sigmoid,
elementwise add/mul, channel concatenation, per-row power normalization,
the weighted occupancy cross-entropy, and Adam. Everything is
deterministic; default arithmetic is single precision with float64
reserved for reductions and test oracles.

Gradients are accumulated into Tensor.grad by `backward()` on a scalar
loss; repeated backward calls without `zero_grad()` keep accumulating.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

KERNEL = 3  # the only spatial kernel size used by the codec


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def item(self) -> float:
        return float(self.values)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every tensor this scalar depends on."""
        if self.values.size != 1:
            raise ValueError("backward requires a scalar loss")
        if not self._parents:
            raise RuntimeError("backward called on a tensor with no recorded graph")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(np.ones_like(self.values))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # small conveniences used by tests
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def sum(self):
        return tensor_sum(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _make(values, parents, backward_fn) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _as_const(x, dtype):
    return np.asarray(x, dtype=dtype)


# ---------------------------------------------------------------------------
# convolution kernels (shared by forward, backward, and transpose paths)


def _pad_spatial(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _im2col(xp: np.ndarray, stride: int) -> np.ndarray:
    """Patch matrix (C, 27, A, OD, OH, OW) of a padded input.

    Built offset by offset so every copy moves large contiguous rows;
    a sliding-window view fed to a matmul would be copied in 3-element
    chunks instead, which is several times slower.
    """
    a, c = xp.shape[:2]
    od, oh, ow = ((s - KERNEL) // stride + 1 for s in xp.shape[2:])
    cols = np.empty((c, KERNEL ** 3, a, od, oh, ow), dtype=xp.dtype)
    off = 0
    for dz in range(KERNEL):
        for dy in range(KERNEL):
            for dx in range(KERNEL):
                blk = xp[:, :,
                         dz:dz + stride * od:stride,
                         dy:dy + stride * oh:stride,
                         dx:dx + stride * ow:stride]
                cols[:, off] = blk.transpose(1, 0, 2, 3, 4)
                off += 1
    return cols


def _conv3d_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                return_cols: bool = False):
    """Cross-correlation of (A,C,D,H,W) with (F,C,3,3,3) as one matmul."""
    cols = _im2col(_pad_spatial(x, padding), stride)
    c, _, a, od, oh, ow = cols.shape
    f = w.shape[0]
    out = w.reshape(f, -1) @ cols.reshape(c * KERNEL ** 3, -1)
    out = np.ascontiguousarray(out.reshape(f, a, od, oh, ow).transpose(1, 0, 2, 3, 4))
    return (out, cols) if return_cols else out


def _conv3d_grad_weight(x: np.ndarray, gout: np.ndarray, stride: int, padding: int,
                        cols: np.ndarray | None = None) -> np.ndarray:
    if cols is None:
        cols = _im2col(_pad_spatial(x, padding), stride)
    f = gout.shape[1]
    g2 = gout.transpose(1, 0, 2, 3, 4).reshape(f, -1)
    gw = g2 @ cols.reshape(cols.shape[0] * KERNEL ** 3, -1).T
    return gw.reshape(f, cols.shape[0], KERNEL, KERNEL, KERNEL)


def _conv3d_grad_input(gout: np.ndarray, w: np.ndarray, stride: int, padding: int,
                       in_spatial: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of _conv3d_fwd with respect to its input.

    Stride 1 with same-padding is a plain convolution of the output
    gradient with the flipped, channel-swapped kernel, which beats the
    scatter path. Strided convs fall back to col2im: one matmul makes
    the 27 per-offset contributions of every output position, which are
    scatter-added onto the padded input grid (non-overlapping slices
    per offset).
    """
    if stride == 1 and padding == 1 and gout.shape[2:] == in_spatial:
        wt = np.ascontiguousarray(w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        return _conv3d_fwd(gout, wt, stride=1, padding=1)
    a, f = gout.shape[:2]
    c = w.shape[1]
    od, oh, ow = gout.shape[2:]
    g2 = gout.transpose(0, 2, 3, 4, 1).reshape(-1, f)
    cols = (g2 @ w.reshape(f, -1)).reshape(a, od, oh, ow, c, KERNEL, KERNEL, KERNEL)
    pd, ph, pw = (s + 2 * padding for s in in_spatial)
    gxp = np.zeros((a, c, pd, ph, pw), dtype=gout.dtype)
    for dz in range(KERNEL):
        for dy in range(KERNEL):
            for dx in range(KERNEL):
                gxp[:, :,
                    dz:dz + stride * od:stride,
                    dy:dy + stride * oh:stride,
                    dx:dx + stride * ow:stride] += cols[..., dz, dy, dx].transpose(0, 4, 1, 2, 3)
    if padding == 0:
        return gxp
    p = padding
    return gxp[:, :, p:p + in_spatial[0], p:p + in_spatial[1], p:p + in_spatial[2]]


def conv_out_side(in_side: int, stride: int, padding: int) -> int:
    return (in_side + 2 * padding - KERNEL) // stride + 1


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 1) -> Tensor:
    """3x3x3 convolution (cross-correlation) over (batch, ch, d, h, w)."""
    if x.values.ndim != 5:
        raise ValueError("conv3d input must have shape (batch, ch, d, h, w)")
    if weight.values.ndim != 5 or weight.values.shape[2:] != (KERNEL,) * 3:
        raise ValueError("conv3d weight must have shape (out_ch, in_ch, 3, 3, 3)")
    if weight.values.shape[1] != x.values.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.values.shape[1]}, weight expects {weight.values.shape[1]}"
        )
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    out, cols = _conv3d_fwd(x.values, weight.values, stride, padding, return_cols=True)
    if bias is not None:
        out = out + bias.values.reshape(1, -1, 1, 1, 1)
    in_spatial = x.values.shape[2:]
    parents = (x, weight) if bias is None else (x, weight, bias)
    # keep the patch matrix for the weight gradient only while training
    cols_box = [cols] if weight.requires_grad else [None]
    del cols

    def bwd(g):
        if weight.requires_grad:
            weight.accumulate_grad(
                _conv3d_grad_weight(x.values, g, stride, padding, cols=cols_box[0]))
            cols_box[0] = None
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            x.accumulate_grad(_conv3d_grad_input(g, weight.values, stride, padding, in_spatial))

    return _make(out, parents, bwd)


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 1) -> Tensor:
    """Adjoint of conv3d; weight layout is (in_ch, out_ch, 3, 3, 3).

    Output spatial side is in_side * stride - 2 * padding + 2, i.e. the
    implicit output padding is stride - 1 so that stride 2 with padding 1
    exactly doubles each side.
    """
    if x.values.ndim != 5:
        raise ValueError("conv_transpose3d input must have shape (batch, ch, d, h, w)")
    if weight.values.ndim != 5 or weight.values.shape[2:] != (KERNEL,) * 3:
        raise ValueError("conv_transpose3d weight must have shape (in_ch, out_ch, 3, 3, 3)")
    if weight.values.shape[0] != x.values.shape[1]:
        raise ValueError(
            f"channel mismatch: input has {x.values.shape[1]}, weight expects {weight.values.shape[0]}"
        )
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    out_spatial = tuple(s * stride - 2 * padding + 2 for s in x.values.shape[2:])
    out = _conv3d_grad_input(x.values, weight.values, stride, padding, out_spatial)
    if bias is not None:
        out = out + bias.values.reshape(1, -1, 1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bwd(g):
        if weight.requires_grad:
            # <g, convT(x, w)> = <conv3d(g, w), x>, linear in w
            weight.accumulate_grad(_conv3d_grad_weight(g, x.values, stride, padding))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            x.accumulate_grad(_conv3d_fwd(g, weight.values, stride, padding))

    return _make(out, parents, bwd)


# ---------------------------------------------------------------------------
# pointwise and shape ops


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.values, 0)

    def bwd(g):
        x.accumulate_grad(g * (x.values > 0))

    return _make(out, (x,), bwd)


def sigmoid_values(v: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a plain array."""
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_values(x.values)

    def bwd(g):
        x.accumulate_grad(g * s * (1.0 - s))

    return _make(s, (x,), bwd)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out = a.values + b.values

        def bwd(g):
            a.accumulate_grad(_unbroadcast(g, a.values.shape))
            b.accumulate_grad(_unbroadcast(g, b.values.shape))

        return _make(out, (a, b), bwd)
    const = _as_const(b, a.values.dtype)
    out = a.values + const

    def bwd_const(g):
        a.accumulate_grad(_unbroadcast(g, a.values.shape))

    return _make(out, (a,), bwd_const)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        out = a.values * b.values

        def bwd(g):
            a.accumulate_grad(_unbroadcast(g * b.values, a.values.shape))
            b.accumulate_grad(_unbroadcast(g * a.values, b.values.shape))

        return _make(out, (a, b), bwd)
    const = _as_const(b, a.values.dtype)
    out = a.values * const

    def bwd_const(g):
        a.accumulate_grad(_unbroadcast(g * const, a.values.shape))

    return _make(out, (a,), bwd_const)


def concat_channels(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.values for p in parts], axis=1)
    splits = np.cumsum([p.values.shape[1] for p in parts])[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=1)):
            p.accumulate_grad(piece)

    return _make(out, tuple(parts), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.values.reshape(shape)

    def bwd(g):
        x.accumulate_grad(g.reshape(x.values.shape))

    return _make(out, (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.values.sum(), dtype=x.values.dtype)

    def bwd(g):
        x.accumulate_grad(np.broadcast_to(g, x.values.shape).astype(x.values.dtype))

    return _make(out, (x,), bwd)


def normalize_rows(x: Tensor) -> Tensor:
    """Scale each row of a (batch, n) tensor to unit mean square.

    All-zero rows pass through unchanged. The scale is part of the
    graph: gradients account for the dependence of the norm on x.
    """
    if x.values.ndim != 2:
        raise ValueError("normalize_rows expects a (batch, n) tensor")
    n = x.values.shape[1]
    ms = np.mean(np.square(x.values, dtype=np.float64), axis=1, keepdims=True)
    s = np.sqrt(ms)
    safe = np.where(s == 0.0, 1.0, s).astype(x.values.dtype)
    out = x.values / safe

    def bwd(g):
        dot = np.sum(g.astype(np.float64) * x.values, axis=1, keepdims=True)
        corr = x.values * (dot / (n * np.where(s == 0.0, 1.0, s) ** 3))
        x.accumulate_grad((g / safe - corr.astype(g.dtype)).astype(x.values.dtype))

    return _make(out, (x,), bwd)


def rms_rows(x: Tensor) -> Tensor:
    """Root mean square of each row of a (batch, n) tensor, shape (batch, 1).

    Zero rows report scale 1 so that multiplying back is the identity.
    """
    if x.values.ndim != 2:
        raise ValueError("rms_rows expects a (batch, n) tensor")
    n = x.values.shape[1]
    ms = np.mean(np.square(x.values, dtype=np.float64), axis=1, keepdims=True)
    s = np.sqrt(ms)
    out = np.where(s == 0.0, 1.0, s).astype(x.values.dtype)

    def bwd(g):
        scale = np.where(s == 0.0, np.inf, s * n)
        x.accumulate_grad((g * x.values / scale).astype(x.values.dtype))

    return _make(out, (x,), bwd)


def _softplus(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def wbce_loss(logits: Tensor, target: np.ndarray, zeta: float = 3.0,
              batch_axis: int | None = None) -> Tensor:
    """Class-weighted binary cross-entropy on occupancy logits.

    Occupied voxels contribute mean(-log p) and empty ones
    zeta * mean(-log(1 - p)), p = sigmoid(logit), natural log. A class
    with no voxels contributes 0. With batch_axis=0 the loss is the mean
    of per-sample losses along the first axis.
    """
    t = np.asarray(target)
    if t.shape != logits.values.shape:
        raise ValueError(f"target shape {t.shape} != logits shape {logits.values.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("target must be binary occupancy")
    if batch_axis not in (None, 0):
        raise ValueError("batch_axis must be None or 0")

    x = logits.values
    occ = t.astype(bool)
    nb = x.shape[0] if batch_axis == 0 else 1
    flat = x.reshape(nb, -1)
    occ_flat = occ.reshape(nb, -1)
    n_occ = occ_flat.sum(axis=1)
    n_emp = occ_flat.shape[1] - n_occ

    # -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
    sp_neg = _softplus(-flat)
    sp_pos = _softplus(flat)
    occ_sum = np.sum(sp_neg * occ_flat, axis=1, dtype=np.float64)
    emp_sum = np.sum(sp_pos * ~occ_flat, axis=1, dtype=np.float64)
    per_sample = (
        np.divide(occ_sum, n_occ, out=np.zeros(nb), where=n_occ > 0)
        + zeta * np.divide(emp_sum, n_emp, out=np.zeros(nb), where=n_emp > 0)
    )
    loss = np.asarray(per_sample.mean(), dtype=x.dtype)

    def bwd(g):
        p = sigmoid_values(flat)
        w_occ = np.divide(1.0, n_occ, out=np.zeros(nb), where=n_occ > 0) / nb
        w_emp = np.divide(zeta, n_emp, out=np.zeros(nb), where=n_emp > 0) / nb
        grad = np.where(occ_flat, (p - 1.0) * w_occ[:, None], p * w_emp[:, None])
        logits.accumulate_grad((float(g) * grad).reshape(x.shape).astype(x.dtype))

    return _make(loss, (logits,), bwd)


# ---------------------------------------------------------------------------
# parameter initialization and blocks


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...],
               dtype=np.float32, gain: float = 1.0) -> np.ndarray:
    """Fan-in scaled uniform init for conv weights."""
    fan_in = int(np.prod(shape[1:]))
    bound = gain * np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class VrnBlock:
    """Pre-activation residual block with two parallel conv paths.

    A bottleneck path (c -> c/4 -> c/4 -> c/2) and a basic path
    (c -> c/2 -> c/2), all 3x3x3 with padding 1, concatenated back to c
    channels and added to the input. Channel count must be divisible
    by 4.
    """

    def __init__(self, channels: int, rng: np.random.Generator,
                 prefix: str = "vrn", dtype=np.float32):
        if channels % 4 != 0:
            raise ValueError(f"VrnBlock channels must be divisible by 4, got {channels}")
        c4, c2 = channels // 4, channels // 2
        self.channels = channels
        self.prefix = prefix
        shapes = {
            "narrow1": (c4, channels), "narrow2": (c4, c4), "narrow3": (c2, c4),
            "wide1": (c2, channels), "wide2": (c2, c2),
        }
        self.params: dict[str, Tensor] = {}
        for name, (fo, fi) in shapes.items():
            w = Tensor(he_uniform(rng, (fo, fi, KERNEL, KERNEL, KERNEL), dtype), requires_grad=True)
            b = Tensor(np.zeros(fo, dtype=dtype), requires_grad=True)
            self.params[f"{prefix}.{name}.w"] = w
            self.params[f"{prefix}.{name}.b"] = b

    def _p(self, name):
        return self.params[f"{self.prefix}.{name}.w"], self.params[f"{self.prefix}.{name}.b"]

    def __call__(self, x: Tensor) -> Tensor:
        a = relu(x)
        w, b = self._p("narrow1")
        n = conv3d(a, w, b)
        w, b = self._p("narrow2")
        n = conv3d(relu(n), w, b)
        w, b = self._p("narrow3")
        n = conv3d(relu(n), w, b)
        w, b = self._p("wide1")
        m = conv3d(a, w, b)
        w, b = self._p("wide2")
        m = conv3d(relu(m), w, b)
        return add(x, concat_channels([n, m]))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, Tensor], lr: float = 1e-3,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        return state


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One Adam update in place; every parameter must carry a gradient."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.values -= (state.lr * update).astype(p.values.dtype)


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_MAGIC = b"PCSC"
CHECKPOINT_VERSION = 1


def write_checkpoint(config: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Little-endian container: magic, version, JSON config, named arrays."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
           struct.pack("<I", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        enc = name.encode("utf-8")
        a = np.ascontiguousarray(arr)
        if a.dtype == np.float32:
            a = a.astype("<f4", copy=False)
        elif a.dtype == np.float64:
            a = a.astype("<f8", copy=False)
        else:
            raise ValueError(f"unsupported parameter dtype {a.dtype}")
        out.append(struct.pack("<I", len(enc)))
        out.append(enc)
        out.append(struct.pack("<B", 1 if a.dtype == np.dtype("<f8") else 0))
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def read_checkpoint(data: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of write_checkpoint; round-trips values bit exactly."""
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"checkpoint truncated at byte {len(data)}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode("utf-8"))
    (n_arrays,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (wide,) = struct.unpack("<B", take(1))
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        dt = np.dtype("<f8" if wide else "<f4")
        count = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(take(count * dt.itemsize), dtype=dt).reshape(shape).copy()
    return config, arrays
