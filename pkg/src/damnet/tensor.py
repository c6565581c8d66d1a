"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small: values are immutable numpy arrays, every
differentiable operation appends one node to the active :class:`Tape`, and
``Tape.backward`` replays the nodes in exact reverse execution order,
accumulating gradients additively into every tensor that requires them.
There is no broadcasting beyond scalar-tensor mixing and no dtype other
than float64; both restrictions exist to keep shape bugs loud and gradient
checks decisive.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "GraphError",
    "add", "sub", "mul", "div", "neg",
    "exp", "log", "tanh", "sigmoid", "relu",
    "oneplus", "softmax", "scaled_softmax", "layer_norm", "dropout",
    "lstm_c", "lstm_h",
    "matmul", "matmul_t", "outer", "concat", "slice_", "gather", "tsum",
    "cosine_rows", "cosine_similarity", "weighted_sum",
    "sce_logits", "bce_logits", "embed_row",
]


class NonFiniteError(ArithmeticError):
    """A forward operation produced (or was handed) NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the recording tape (backward twice, non-scalar loss, ...)."""


_EPS_COS = 1e-6   # cosine-similarity denominator guard
_EPS_LN = 1e-5    # layer-norm variance guard

# The active tape. Ops record onto it whenever it is set and at least one
# input requires gradients; otherwise they run in pure inference mode.
_ACTIVE_TAPE = None


def _ensure_finite(arr, what):
    # One-pass reduce as the fast path; a finite-but-overflowing sum is
    # re-examined elementwise so only true NaN/Inf elements can raise.
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """Immutable float64 array plus grad bookkeeping.

    ``data`` is row-major and never mutated after construction; ``grad``
    is filled in (or summed into) by the tape during backward.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _ensure_finite(arr, "tensor construction")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; floats are accepted as constant operands.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, op_name):
    """Build an op output without the public constructor's revalidation."""
    out = Tensor.__new__(Tensor)
    # Fast finite screen: the self dot product is NaN/Inf whenever any
    # element is, and cheaper than an elementwise isfinite reduction. A
    # legitimate overflow of the dot (huge finite elements) falls through
    # to the exact elementwise check.
    r = data.ravel()
    s = r @ r
    if s - s != 0.0 and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op_name}")
    out.data = data
    out.grad = None
    out.requires_grad = False
    return out


def _accum(t, g):
    # Rebinding (never in-place +=) keeps aliased grad arrays safe: several
    # nodes may hand the same array object to different parents.
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _record(out, parents, backfn):
    tape = _ACTIVE_TAPE
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                tape._nodes.append((out, backfn))
                break
    return out


class Tape:
    """Recorded operations in execution order (the autodiff graph).

    Execution order is a valid topological order, so replaying the node
    list reversed visits every consumer before its producers; gradients
    for tensors feeding multiple consumers accumulate additively.
    """

    def __init__(self):
        self._nodes = []
        self._used = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise GraphError("a tape is already recording")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss):
        """Propagate d(loss)/d(tensor) to everything recorded on this tape."""
        if not isinstance(loss, Tensor):
            raise GraphError("backward target must be a Tensor")
        if loss.data.size != 1:
            raise GraphError(f"backward target must be scalar, got shape {loss.data.shape}")
        if self._used:
            raise GraphError("backward already ran on this tape")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for out, backfn in reversed(self._nodes):
            if out.grad is not None:
                backfn(out.grad)


# ---------------------------------------------------------------------------
# elementwise arithmetic (equal shapes, or scalar-tensor mixing)

def _lift(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"cannot use {type(x).__name__} as a tensor operand")


def _check_binary(a, b, op_name):
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError(f"{op_name}: shape mismatch {a.data.shape} vs {b.data.shape} "
                     "(only scalar-tensor mixing is allowed)")


def _reduce_to(g, t):
    # Gradient for the scalar side of a scalar-tensor op.
    if g.shape == t.data.shape:
        return g
    return np.asarray(g.sum()).reshape(t.data.shape)


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "add")
    out = _result(a.data + b.data, "add")

    def backfn(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g, a))
        if b.requires_grad:
            _accum(b, _reduce_to(g, b))

    return _record(out, (a, b), backfn)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "sub")
    out = _result(a.data - b.data, "sub")

    def backfn(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g, a))
        if b.requires_grad:
            _accum(b, _reduce_to(-g, b))

    return _record(out, (a, b), backfn)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "mul")
    out = _result(a.data * b.data, "mul")

    def backfn(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g * b.data, a))
        if b.requires_grad:
            _accum(b, _reduce_to(g * a.data, b))

    return _record(out, (a, b), backfn)


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "div")
    with np.errstate(all="ignore"):  # zero denominators surface as NonFiniteError
        out = _result(a.data / b.data, "div")

    def backfn(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g / b.data, a))
        if b.requires_grad:
            _accum(b, _reduce_to(-g * a.data / (b.data * b.data), b))

    return _record(out, (a, b), backfn)


def neg(a):
    out = _result(-a.data, "neg")

    def backfn(g):
        _accum(a, -g)

    return _record(out, (a,), backfn)


def exp(a):
    with np.errstate(all="ignore"):  # overflow surfaces as NonFiniteError
        out = _result(np.exp(a.data), "exp")
    e = out.data

    def backfn(g):
        _accum(a, g * e)

    return _record(out, (a,), backfn)


def log(a):
    with np.errstate(all="ignore"):  # non-positive inputs surface as NonFiniteError
        out = _result(np.log(a.data), "log")

    def backfn(g):
        _accum(a, g / a.data)

    return _record(out, (a,), backfn)


def tanh(a):
    out = _result(np.tanh(a.data), "tanh")
    t = out.data

    def backfn(g):
        _accum(a, g * (1.0 - t * t))

    return _record(out, (a,), backfn)


def _sigmoid_arr(x):
    # (1 + tanh(x/2)) / 2: exact identity, stable for any magnitude
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(a):
    s = _sigmoid_arr(a.data)
    out = _result(s, "sigmoid")

    def backfn(g):
        _accum(a, g * s * (1.0 - s))

    return _record(out, (a,), backfn)


def relu(a):
    out = _result(np.maximum(a.data, 0.0), "relu")
    pos = a.data > 0

    def backfn(g):
        _accum(a, g * pos)

    return _record(out, (a,), backfn)


def oneplus(a):
    """1 + softplus(x), always >= 1; the strength activation."""
    x = a.data
    sp = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    out = _result(1.0 + sp, "oneplus")

    def backfn(g):
        _accum(a, g * _sigmoid_arr(x))

    return _record(out, (a,), backfn)


def tsum(a):
    """Sum of all elements, as a scalar tensor."""
    out = _result(np.asarray(a.data.sum()), "sum")

    def backfn(g):
        _accum(a, np.full(a.data.shape, float(g)))

    return _record(out, (a,), backfn)


# ---------------------------------------------------------------------------
# shape ops

def matmul(a, b):
    """Matrix product; also covers matrix-vector and vector-matrix."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ {ad.shape} vs {bd.shape}")
    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ {ad.shape} vs {bd.shape}")
    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ValueError(f"matmul: inner extents differ {ad.shape} vs {bd.shape}")
    else:
        raise ValueError(f"matmul: unsupported ranks {ad.ndim} and {bd.ndim}")
    out = _result(ad @ bd, "matmul")

    def backfn(g):
        if a.requires_grad:
            if ad.ndim == 2 and bd.ndim == 2:
                _accum(a, g @ bd.T)
            elif bd.ndim == 1:                      # (m,k)@(k,) -> (m,)
                _accum(a, np.outer(g, bd))
            else:                                   # (k,)@(k,n) -> (n,)
                _accum(a, bd @ g)
        if b.requires_grad:
            if ad.ndim == 2 and bd.ndim == 2:
                _accum(b, ad.T @ g)
            elif bd.ndim == 1:
                _accum(b, ad.T @ g)
            else:
                _accum(b, np.outer(ad, g))

    return _record(out, (a, b), backfn)


def matmul_t(m, w):
    """m.T @ w for m:[A,L], w:[A] without materializing the transpose."""
    md, wd = m.data, w.data
    if md.ndim != 2 or wd.ndim != 1 or md.shape[0] != wd.shape[0]:
        raise ValueError(f"matmul_t: bad shapes {md.shape} vs {wd.shape}")
    out = _result(md.T @ wd, "matmul_t")

    def backfn(g):
        if m.requires_grad:
            _accum(m, np.outer(wd, g))
        if w.requires_grad:
            _accum(w, md @ g)

    return _record(out, (m, w), backfn)


def outer(u, v):
    ud, vd = u.data, v.data
    if ud.ndim != 1 or vd.ndim != 1:
        raise ValueError("outer: both operands must be vectors")
    out = _result(np.outer(ud, vd), "outer")

    def backfn(g):
        if u.requires_grad:
            _accum(u, g @ vd)
        if v.requires_grad:
            _accum(v, ud @ g)

    return _record(out, (u, v), backfn)


def concat(parts):
    """Concatenate 1-D tensors into one vector."""
    parts = list(parts)
    for p in parts:
        if p.data.ndim != 1:
            raise ValueError("concat: all parts must be vectors")
    out = _result(np.concatenate([p.data for p in parts]), "concat")
    sizes = [p.data.shape[0] for p in parts]

    def backfn(g):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                _accum(p, g[off:off + n])
            off += n

    return _record(out, tuple(parts), backfn)


def slice_(a, start, stop):
    """Contiguous slice of a vector."""
    if a.data.ndim != 1:
        raise ValueError("slice_: vector input required")
    if not (0 <= start <= stop <= a.data.shape[0]):
        raise ValueError(f"slice_: [{start}:{stop}] out of range for {a.data.shape}")
    out = _result(a.data[start:stop].copy(), "slice")

    def backfn(g):
        full = np.zeros(a.data.shape)
        full[start:stop] = g
        _accum(a, full)

    return _record(out, (a,), backfn)


def gather(a, idx):
    """Select vector elements at the given (constant) indices."""
    if a.data.ndim != 1:
        raise ValueError("gather: vector input required")
    idx = np.asarray(idx, dtype=np.intp)
    out = _result(a.data[idx].copy(), "gather")

    def backfn(g):
        full = np.zeros(a.data.shape)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _record(out, (a,), backfn)


def embed_row(table, row):
    """Row lookup in an embedding matrix, with sparse gradient accumulation."""
    if table.data.ndim != 2:
        raise ValueError("embed_row: 2-D table required")
    row = int(row)
    out = _result(table.data[row].copy(), "embed_row")

    def backfn(g):
        # Accumulate in place into a buffer we own; a dense per-step
        # gradient over the whole vocabulary would dominate the backward.
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        table.grad[row] += g

    return _record(out, (table,), backfn)


# ---------------------------------------------------------------------------
# fused neural-net ops

def softmax(a):
    """Stable softmax over a vector; output sums to one."""
    x = a.data
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("softmax: nonempty vector required")
    z = np.exp(x - x.max())
    s = z / z.sum()
    out = _result(s, "softmax")

    def backfn(g):
        _accum(a, s * (g - float(g @ s)))

    return _record(out, (a,), backfn)


def lstm_c(z, c_prev):
    """New cell state from packed gate preactivations [i; f; g; o].

    Single fused node for sigmoid(f) * c_prev + sigmoid(i) * tanh(g);
    the output-gate quarter of z gets zero gradient here (lstm_h owns it).
    """
    zd = z.data
    n = c_prev.data.shape[0]
    if zd.shape != (4 * n,):
        raise ValueError(f"lstm_c: packed gates {zd.shape} do not match state ({n},)")
    i_g = _sigmoid_arr(zd[:n])
    f_g = _sigmoid_arr(zd[n:2 * n])
    cand = np.tanh(zd[2 * n:3 * n])
    cp = c_prev.data
    out = _result(f_g * cp + i_g * cand, "lstm_c")

    def backfn(g):
        if z.requires_grad:
            gz = np.zeros(4 * n)
            gz[:n] = g * cand * i_g * (1.0 - i_g)
            gz[n:2 * n] = g * cp * f_g * (1.0 - f_g)
            gz[2 * n:3 * n] = g * i_g * (1.0 - cand * cand)
            _accum(z, gz)
        if c_prev.requires_grad:
            _accum(c_prev, g * f_g)

    return _record(out, (z, c_prev), backfn)


def lstm_h(z, c):
    """Hidden state sigmoid(o) * tanh(c) from the packed preactivations."""
    zd = z.data
    n = c.data.shape[0]
    if zd.shape != (4 * n,):
        raise ValueError(f"lstm_h: packed gates {zd.shape} do not match state ({n},)")
    o_g = _sigmoid_arr(zd[3 * n:])
    th = np.tanh(c.data)
    out = _result(o_g * th, "lstm_h")

    def backfn(g):
        if z.requires_grad:
            gz = np.zeros(4 * n)
            gz[3 * n:] = g * th * o_g * (1.0 - o_g)
            _accum(z, gz)
        if c.requires_grad:
            _accum(c, g * o_g * (1.0 - th * th))

    return _record(out, (z, c), backfn)


def scaled_softmax(x, scale):
    """softmax(x * scale) in one node; scale is a size-1 tensor."""
    if scale.data.size != 1:
        raise ValueError("scaled_softmax: scale must be a single value")
    beta = float(scale.data.reshape(-1)[0])
    xd = x.data * beta
    ex = np.exp(xd - xd.max())
    s = ex / ex.sum()
    out = _result(s, "scaled_softmax")

    def backfn(g):
        gl = s * (g - float(g @ s))      # gradient at the logits x*scale
        if x.requires_grad:
            _accum(x, beta * gl)
        if scale.requires_grad:
            _accum(scale, np.asarray(float(gl @ x.data)).reshape(scale.data.shape))

    return _record(out, (x, scale), backfn)


def layer_norm(x, gain, bias):
    """(x - mean) / sqrt(var + 1e-5) * gain + bias over one vector."""
    xd = x.data
    if xd.ndim != 1 or xd.shape[0] < 2:
        raise ValueError("layer_norm: vector of length >= 2 required")
    n = xd.shape[0]
    mu = xd.mean()
    var = xd.var()
    inv = 1.0 / math.sqrt(var + _EPS_LN)
    xhat = (xd - mu) * inv
    out = _result(xhat * gain.data + bias.data, "layer_norm")

    def backfn(g):
        if gain.requires_grad:
            _accum(gain, g * xhat)
        if bias.requires_grad:
            _accum(bias, g.copy())
        if x.requires_grad:
            dxhat = g * gain.data
            _accum(x, inv * (dxhat - dxhat.mean() - xhat * (dxhat * xhat).mean()))

    return _record(out, (x, gain, bias), backfn)


def dropout(x, p, training, rng):
    """Inverted dropout: train-time zeroing with 1/(1-p) rescale, eval identity."""
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout probability out of range: {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.data.shape) >= p
    scale = 1.0 / (1.0 - p)
    out = _result(x.data * keep * scale, "dropout")

    def backfn(g):
        _accum(x, g * keep * scale)

    return _record(out, (x,), backfn)


def _cosine_core(md, kd):
    # md: [A,L], kd: [L] -> similarities [A] plus saved factors.
    num = md @ kd
    row_n = np.sqrt((md * md).sum(axis=1))
    k_n = math.sqrt(float(kd @ kd))
    den = row_n * k_n + _EPS_COS
    return num / den, num, row_n, k_n, den


def cosine_rows(m, k):
    """Cosine similarity of every row of m against k (eps-guarded)."""
    md, kd = m.data, k.data
    if md.ndim != 2 or kd.ndim != 1 or md.shape[1] != kd.shape[0]:
        raise ValueError(f"cosine_rows: bad shapes {md.shape} vs {kd.shape}")
    sim, num, row_n, k_n, den = _cosine_core(md, kd)
    out = _result(sim, "cosine_rows")

    def backfn(g):
        gden2 = g * num / (den * den)
        if m.requires_grad:
            inv_rows = np.divide(1.0, row_n, out=np.zeros_like(row_n), where=row_n > 0)
            gm = np.outer(g / den, kd) - (gden2 * k_n * inv_rows)[:, None] * md
            _accum(m, gm)
        if k.requires_grad:
            gk = (g / den) @ md
            if k_n > 0:
                gk = gk - float(gden2 @ row_n) / k_n * kd
            _accum(k, gk)

    return _record(out, (m, k), backfn)


def cosine_similarity(k, m):
    """Cosine similarity of two vectors; zero vectors map to 0 via the eps guard."""
    kd, md = k.data, m.data
    if kd.shape != md.shape or kd.ndim != 1:
        raise ValueError(f"cosine_similarity: bad shapes {kd.shape} vs {md.shape}")
    num = float(kd @ md)
    kn = math.sqrt(float(kd @ kd))
    mn = math.sqrt(float(md @ md))
    den = kn * mn + _EPS_COS
    out = _result(np.asarray(num / den), "cosine_similarity")

    def backfn(g):
        gs = float(g)
        if k.requires_grad:
            gk = gs * md / den
            if kn > 0:
                gk = gk - gs * num * mn / (den * den) * kd / kn
            _accum(k, gk)
        if m.requires_grad:
            gm = gs * kd / den
            if mn > 0:
                gm = gm - gs * num * kn / (den * den) * md / mn
            _accum(m, gm)

    return _record(out, (k, m), backfn)


def weighted_sum(vectors, weights):
    """sum_k weights[k] * vectors[k] for equal-length vectors."""
    vectors = list(vectors)
    wd = weights.data
    if wd.ndim != 1 or wd.shape[0] != len(vectors):
        raise ValueError("weighted_sum: weights must match the vector count")
    acc = np.zeros(vectors[0].data.shape)
    for wk, v in zip(wd, vectors):
        acc += wk * v.data
    out = _result(acc, "weighted_sum")

    def backfn(g):
        for i, v in enumerate(vectors):
            if v.requires_grad:
                _accum(v, wd[i] * g)
        if weights.requires_grad:
            _accum(weights, np.array([float(g @ v.data) for v in vectors]))

    return _record(out, tuple(vectors) + (weights,), backfn)


def sce_logits(logits, target):
    """Softmax cross-entropy of a logit vector against one class index."""
    z = logits.data
    if z.ndim != 1:
        raise ValueError("sce_logits: vector input required")
    target = int(target)
    if not (0 <= target < z.shape[0]):
        raise ValueError(f"sce_logits: class {target} out of range for {z.shape}")
    m = z.max()
    lse = m + math.log(np.exp(z - m).sum())
    out = _result(np.asarray(lse - z[target]), "sce_logits")
    probs = np.exp(z - lse)

    def backfn(g):
        gz = probs.copy()
        gz[target] -= 1.0
        _accum(logits, float(g) * gz)

    return _record(out, (logits,), backfn)


def bce_logits(logits, targets):
    """Summed sigmoid cross-entropy of a logit vector against 0/1 targets."""
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape or z.ndim != 1:
        raise ValueError(f"bce_logits: shape mismatch {z.shape} vs {t.shape}")
    # max(z,0) - z*t + log(1+exp(-|z|)) summed; safe for large |z|.
    per = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _result(np.asarray(per.sum()), "bce_logits")

    def backfn(g):
        _accum(logits, float(g) * (_sigmoid_arr(z) - t))

    return _record(out, (logits,), backfn)
