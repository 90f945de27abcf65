"""Reverse-mode automatic differentiation over dense float tensors.

Scoped to the operations the calibration networks and consistency losses
need; no broadcasting beyond bias-add, no dynamic graph optimization.

Usage: run the forward pass inside a ``with Tape() as tape:`` block, then
``grads = tape.backward(loss)``; ``grads`` maps node ids to numpy arrays and
every watched leaf is present (zero if untouched). A tensor used without an
active tape computes plain numpy values, which is how inference runs.

Tensors store float32 by default (network weights and activations); every
op preserves float64 inputs so gradient checks can run in double precision.
Reductions accumulate in double regardless of storage dtype. Any op that
produces a non-finite value raises NumericError immediately.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class TapeError(RuntimeError):
    pass


_ACTIVE_TAPES: list["Tape"] = []


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.tape = None
        self.node_id = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Ordered record of operations; backward walks it in strict reverse.

    One tape per training step, confined to a single thread from first
    record to backward completion.
    """

    def __init__(self):
        self._records = []  # (out_node_id, backward_fn)
        self._leaves = {}   # node_id -> (shape, dtype)
        self._count = 0

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def _fresh_id(self) -> int:
        nid = self._count
        self._count += 1
        return nid

    def watch(self, t: Tensor) -> int:
        """Register t as a leaf of this tape (idempotent); returns its node id."""
        if t.tape is self and t.node_id is not None:
            return t.node_id
        t.tape = self
        t.node_id = self._fresh_id()
        self._leaves[t.node_id] = (t.data.shape, t.data.dtype)
        return t.node_id

    def record(self, out: Tensor, backward_fn) -> None:
        """Mark out as produced on this tape; backward_fn(grad_out, accumulate)
        must push gradients to the op's input node ids via accumulate(nid, g)."""
        out.tape = self
        out.node_id = self._fresh_id()
        self._records.append((out.node_id, backward_fn))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of the scalar loss w.r.t. every node; leaves always present."""
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if loss.tape is not self or loss.node_id is None:
            raise TapeError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}

        def accumulate(nid, g):
            if nid is None:
                return
            cur = grads.get(nid)
            grads[nid] = g if cur is None else cur + g

        for out_id, backward_fn in reversed(self._records):
            g = grads.get(out_id)
            if g is None:
                continue
            backward_fn(g, accumulate)
        for nid, (shape, dtype) in self._leaves.items():
            if nid not in grads:
                grads[nid] = np.zeros(shape, dtype=dtype)
        return grads


def _nid(tape: Tape, t: Tensor):
    """Node id of t on the active tape, watching it as a leaf on first touch."""
    if t.tape is tape and t.node_id is not None:
        return t.node_id
    return tape.watch(t)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} produced non-finite values")


def _make(name: str, data: np.ndarray) -> Tensor:
    _check_finite(name, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.tape = None
    out.node_id = None
    return out


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shape mismatch {a.data.shape} vs {b.data.shape}")


# --- elementwise and structural ops ------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    out = _make("add", a.data + b.data)
    tape = active_tape()
    if tape is not None:
        ia, ib = _nid(tape, a), _nid(tape, b)
        tape.record(out, lambda g, acc: (acc(ia, g), acc(ib, g)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    out = _make("sub", a.data - b.data)
    tape = active_tape()
    if tape is not None:
        ia, ib = _nid(tape, a), _nid(tape, b)
        tape.record(out, lambda g, acc: (acc(ia, g), acc(ib, -g)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    out = _make("mul", a.data * b.data)
    tape = active_tape()
    if tape is not None:
        ia, ib = _nid(tape, a), _nid(tape, b)
        ad, bd = a.data, b.data
        tape.record(out, lambda g, acc: (acc(ia, g * bd), acc(ib, g * ad)))
    return out


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _make("scalar_mul", a.data * s)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        tape.record(out, lambda g, acc: acc(ia, g * s))
    return out


def relu(a: Tensor) -> Tensor:
    out = _make("relu", np.maximum(a.data, 0))
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        mask = a.data > 0
        tape.record(out, lambda g, acc: acc(ia, g * mask))
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _make("sigmoid", y)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        tape.record(out, lambda g, acc: acc(ia, g * y * (1.0 - y)))
    return out


def absolute(a: Tensor) -> Tensor:
    out = _make("absolute", np.abs(a.data))
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        s = np.sign(a.data)
        tape.record(out, lambda g, acc: acc(ia, g * s))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}") from e
    out = _make("reshape", data)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        orig = a.data.shape
        tape.record(out, lambda g, acc: acc(ia, g.reshape(orig)))
    return out


def transpose_last_two(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose_last_two: need rank >= 2, got shape {a.data.shape}")
    out = _make("transpose_last_two", np.ascontiguousarray(a.data.swapaxes(-1, -2)))
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        tape.record(out, lambda g, acc: acc(ia, g.swapaxes(-1, -2)))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = _make("concat", np.concatenate([t.data for t in tensors], axis=axis))
    tape = active_tape()
    if tape is not None:
        ids = [_nid(tape, t) for t in tensors]
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g, acc):
            for nid, piece in zip(ids, np.split(g, splits, axis=axis)):
                acc(nid, piece)

        tape.record(out, backward)
    return out


def tile_batch(a: Tensor, batch: int) -> Tensor:
    """Prepend a batch axis by repetition: (...) -> (batch, ...)."""
    out = _make("tile_batch", np.broadcast_to(a.data, (batch,) + a.data.shape).copy())
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        tape.record(out, lambda g, acc: acc(ia, g.sum(axis=0)))
    return out


def take_batch(a: Tensor, index: int) -> Tensor:
    """Select one row along axis 0: (B, ...) -> (...)."""
    b = a.data.shape[0]
    if not 0 <= index < b:
        raise ShapeError(f"take_batch: index {index} out of range for batch {b}")
    out = _make("take_batch", a.data[index].copy())
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        shape, dtype, idx = a.data.shape, a.data.dtype, index

        def backward(g, acc):
            full = np.zeros(shape, dtype=dtype)
            full[idx] = g
            acc(ia, full)

        tape.record(out, backward)
    return out


# --- reductions (double-precision accumulation) -------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis, dtype=np.float64).astype(a.data.dtype)
    out = _make("sum", data)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        shape = a.data.shape

        def backward(g, acc):
            if axis is None:
                acc(ia, np.broadcast_to(g, shape).copy())
            else:
                acc(ia, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

        tape.record(out, backward)
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    data = a.data.mean(axis=axis, dtype=np.float64).astype(a.data.dtype)
    out = _make("mean", data)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        shape = a.data.shape
        n = a.data.size if axis is None else a.data.shape[axis]

        def backward(g, acc):
            if axis is None:
                acc(ia, np.broadcast_to(g / n, shape).copy())
            else:
                acc(ia, np.broadcast_to(np.expand_dims(g / n, axis), shape).copy())

        tape.record(out, backward)
    return out


# --- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Either both operands share identical leading (batch) dims, or b is a
    plain 2-D matrix applied to every batch row of a.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: need rank >= 2, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {ad.shape} vs {bd.shape}")
    b_is_matrix = bd.ndim == 2
    if not b_is_matrix and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {ad.shape} vs {bd.shape}")
    out = _make("matmul", ad @ bd)
    tape = active_tape()
    if tape is not None:
        ia, ib = _nid(tape, a), _nid(tape, b)

        def backward(g, acc):
            acc(ia, g @ bd.swapaxes(-1, -2))
            if b_is_matrix and ad.ndim > 2:
                acc(ib, ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                acc(ib, ad.swapaxes(-1, -2) @ g)

        tape.record(out, backward)
    return out


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ w + bias, over the last axis (w: (in, out), bias: (out,))."""
    xd, wd = x.data, w.data
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    y = xd @ wd
    if bias is not None:
        if bias.data.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias {bias.data.shape} vs weight {wd.shape}")
        y = y + bias.data
    out = _make("linear", y)
    tape = active_tape()
    if tape is not None:
        ix, iw = _nid(tape, x), _nid(tape, w)
        ibias = _nid(tape, bias) if bias is not None else None

        def backward(g, acc):
            acc(ix, g @ wd.T)
            acc(iw, xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            if ibias is not None:
                acc(ibias, g.reshape(-1, g.shape[-1]).sum(axis=0))

        tape.record(out, backward)
    return out


def softmax_last_dim(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _make("softmax_last_dim", y)
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)

        def backward(g, acc):
            dot = (g * y).sum(axis=-1, keepdims=True)
            acc(ia, y * (g - dot))

        tape.record(out, backward)
    return out


# --- convolution and spatial ops ----------------------------------------------

def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution, NCHW layout, weight (Cout, Cin, kh, kw)."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D input and weight, got {xd.shape} and {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, input {xd.shape} vs weight {wd.shape}")
    if xd.dtype != wd.dtype:
        raise ShapeError(f"conv2d: dtype mismatch, {xd.dtype} vs {wd.dtype}")
    h_out = (xd.shape[2] + 2 * padding - wd.shape[2]) // stride + 1
    w_out = (xd.shape[3] + 2 * padding - wd.shape[3]) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d: kernel {wd.shape} does not fit input {xd.shape} "
                         f"(stride={stride}, padding={padding})")
    xd = np.ascontiguousarray(xd)
    wd = np.ascontiguousarray(wd)
    y = kernels.conv2d_forward(xd, wd, stride, padding)
    if bias is not None:
        if bias.data.shape != (wd.shape[0],):
            raise ShapeError(f"conv2d: bias {bias.data.shape} vs weight {wd.shape}")
        y = y + bias.data[None, :, None, None]
    out = _make("conv2d", y)
    tape = active_tape()
    if tape is not None:
        ix, iw = _nid(tape, x), _nid(tape, w)
        ibias = _nid(tape, bias) if bias is not None else None

        def backward(g, acc):
            g = np.ascontiguousarray(g)
            acc(ix, kernels.conv2d_grad_input(g, wd, xd.shape[2], xd.shape[3], stride, padding))
            acc(iw, kernels.conv2d_grad_weight(g, xd, wd.shape[2], wd.shape[3], stride, padding))
            if ibias is not None:
                acc(ibias, g.sum(axis=(0, 2, 3)))

        tape.record(out, backward)
    return out


def nearest_upsample2x(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise ShapeError(f"nearest_upsample2x: need 4-D input, got {a.data.shape}")
    out = _make("nearest_upsample2x", a.data.repeat(2, axis=2).repeat(2, axis=3))
    tape = active_tape()
    if tape is not None:
        ia = _nid(tape, a)
        b, c, h, w = a.data.shape
        tape.record(out, lambda g, acc: acc(ia, g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))))
    return out


def bilinear_sample(image: Tensor, coords: Tensor) -> Tensor:
    """Sample image (C,H,W) at continuous pixel coords (N,2) as (u,v) -> (N,C).

    Pixel (i,j) covers [j,j+1)x[i,i+1) with center (j+0.5, i+0.5); coordinates
    are clamped to the interpolation domain, and the coordinate gradient is
    exactly zero on any axis where the clamp engaged. Differentiable w.r.t.
    both the image values and the coordinates.
    """
    img = image.data
    uv = coords.data
    if img.ndim != 3:
        raise ShapeError(f"bilinear_sample: image must be (C,H,W), got {img.shape}")
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ShapeError(f"bilinear_sample: coords must be (N,2), got {uv.shape}")
    c, h, w = img.shape
    x = uv[:, 0] - 0.5
    y = uv[:, 1] - 0.5
    x_in = (x > 0) & (x < w - 1)  # clamp-inactive masks (grad flows only here)
    y_in = (y > 0) & (y < h - 1)
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x), w - 2 if w > 1 else 0).astype(np.int64)
    y0 = np.minimum(np.floor(y), h - 2 if h > 1 else 0).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (x - x0).astype(img.dtype)
    wy = (y - y0).astype(img.dtype)

    i00 = img[:, y0, x0]  # (C,N)
    i01 = img[:, y0, x1]
    i10 = img[:, y1, x0]
    i11 = img[:, y1, x1]
    top = i00 * (1 - wx) + i01 * wx
    bot = i10 * (1 - wx) + i11 * wx
    out = _make("bilinear_sample", (top * (1 - wy) + bot * wy).T.copy())

    tape = active_tape()
    if tape is not None:
        ii = _nid(tape, image)
        ic = _nid(tape, coords)

        def backward(g, acc):
            gt = g.T  # (C,N)
            dimg = np.zeros_like(img)
            np.add.at(dimg, (slice(None), y0, x0), gt * (1 - wx) * (1 - wy))
            np.add.at(dimg, (slice(None), y0, x1), gt * wx * (1 - wy))
            np.add.at(dimg, (slice(None), y1, x0), gt * (1 - wx) * wy)
            np.add.at(dimg, (slice(None), y1, x1), gt * wx * wy)
            acc(ii, dimg)
            dx = ((i01 - i00) * (1 - wy) + (i11 - i10) * wy)  # (C,N)
            dy = ((i10 - i00) * (1 - wx) + (i11 - i01) * wx)
            du = (gt * dx).sum(axis=0) * x_in
            dv = (gt * dy).sum(axis=0) * y_in
            acc(ic, np.stack([du, dv], axis=1).astype(uv.dtype))

        tape.record(out, backward)
    return out


# --- fused losses ---------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (N,K) logits against integer labels (N,)."""
    z = logits.data
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {z.shape} vs labels {labels.shape}")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, dtype=np.float64))
    per_point = lse - shifted[np.arange(n), labels].astype(np.float64)
    out = _make("softmax_cross_entropy", np.asarray(per_point.mean(), dtype=z.dtype))
    tape = active_tape()
    if tape is not None:
        il = _nid(tape, logits)
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)

        def backward(g, acc):
            d = p.copy()
            d[np.arange(n), labels] -= 1.0
            acc(il, (g * d / n).astype(z.dtype))

        tape.record(out, backward)
    return out


# --- parameterized attention ------------------------------------------------------

class AttentionBlock:
    """Decoder block: query self-attention, cross-attention over features,
    then a feed-forward network, each with a residual connection.

    No positional encoding and no output projections; attention is scaled
    dot-product softmax(Q K^T / sqrt(C)) V. Cross-attention is therefore
    invariant to permutations of the feature axis.
    """

    def __init__(self, embed_dim: int, ffn_dim: int, rng: np.random.Generator):
        c = embed_dim
        scale = 1.0 / math.sqrt(c)

        def w(shape):
            return Tensor(rng.normal(0.0, scale, size=shape), dtype=np.float32)

        self.wq_self, self.wk_self, self.wv_self = w((c, c)), w((c, c)), w((c, c))
        self.wq_cross, self.wk_cross, self.wv_cross = w((c, c)), w((c, c)), w((c, c))
        self.w_ffn1 = Tensor(rng.normal(0.0, 1.0 / math.sqrt(c), size=(c, ffn_dim)), dtype=np.float32)
        self.b_ffn1 = Tensor(np.zeros(ffn_dim), dtype=np.float32)
        self.w_ffn2 = Tensor(rng.normal(0.0, 1.0 / math.sqrt(ffn_dim), size=(ffn_dim, c)), dtype=np.float32)
        self.b_ffn2 = Tensor(np.zeros(c), dtype=np.float32)
        self.embed_dim = c

    def params(self):
        return [
            ("self_attn.wq", self.wq_self), ("self_attn.wk", self.wk_self),
            ("self_attn.wv", self.wv_self),
            ("cross_attn.wq", self.wq_cross), ("cross_attn.wk", self.wk_cross),
            ("cross_attn.wv", self.wv_cross),
            ("ffn.w1", self.w_ffn1), ("ffn.b1", self.b_ffn1),
            ("ffn.w2", self.w_ffn2), ("ffn.b2", self.b_ffn2),
        ]

    @staticmethod
    def _attend(q, k, v, scale):
        scores = scalar_mul(matmul(q, transpose_last_two(k)), scale)
        return matmul(softmax_last_dim(scores), v)

    def __call__(self, queries: Tensor, features: Tensor) -> Tensor:
        if queries.data.ndim != 3 or features.data.ndim != 3:
            raise ShapeError(f"attention: need (B,N,C) inputs, got {queries.data.shape} "
                             f"and {features.data.shape}")
        if (queries.data.shape[0] != features.data.shape[0]
                or queries.data.shape[2] != features.data.shape[2]):
            raise ShapeError(f"attention: batch/embed mismatch, {queries.data.shape} "
                             f"vs {features.data.shape}")
        scale = 1.0 / math.sqrt(self.embed_dim)
        q = add(queries, self._attend(
            matmul(queries, self.wq_self), matmul(queries, self.wk_self),
            matmul(queries, self.wv_self), scale))
        q = add(q, self._attend(
            matmul(q, self.wq_cross), matmul(features, self.wk_cross),
            matmul(features, self.wv_cross), scale))
        hidden = relu(linear(q, self.w_ffn1, self.b_ffn1))
        return add(q, linear(hidden, self.w_ffn2, self.b_ffn2))
