"""Reverse-mode automatic differentiation over dense matrices.

All values are 2-D float64 numpy arrays wrapped in :class:`Var`. Ops record
their backward rules on the active :class:`Tape` (a context manager); with no
active tape they run as plain numpy forward computations, which is the
no-grad path used during evaluation.

Sparse operands (scipy CSR/CSC) appear only as constants of ``spmm``;
gradients flow through the dense operand.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import scipy.sparse as sp

from .errors import CpmrError, DataError, ShapeError

_ACTIVE_TAPE = None


class Var:
    """A matrix value participating in differentiable computation."""

    __slots__ = ("value", "name")

    def __init__(self, value, name=None):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Var requires a 2-D array, got shape {arr.shape}")
        self.value = arr
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Var{tag} shape={self.value.shape}>"


def constant(value, name=None):
    """Wrap an array as a leaf with no recorded history."""
    return Var(np.array(value, dtype=np.float64, copy=True), name=name)


class Tape:
    """Append-only record of ops for one backward pass.

    Use as a context manager; ops executed inside record themselves. The
    tape is consumed exactly once by :func:`backward`.
    """

    def __init__(self):
        self.nodes = []  # (out_var, [(in_var, vjp), ...])
        self.consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise CpmrError("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False


def _record(out, pairs):
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append((out, pairs))


def _check(cond, op, *shapes):
    if not cond:
        raise ShapeError(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


# ---------------------------------------------------------------------------
# op set


def matmul(a: Var, b: Var) -> Var:
    _check(a.value.shape[1] == b.value.shape[0], "matmul", a.shape, b.shape)
    out = Var(a.value @ b.value)
    _record(out, [(a, lambda g, b=b: g @ b.value.T),
                  (b, lambda g, a=a: a.value.T @ g)])
    return out


def spmm(s, x: Var) -> Var:
    """Sparse @ dense. ``s`` is a constant scipy sparse matrix."""
    _check(s.shape[1] == x.value.shape[0], "spmm", s.shape, x.shape)
    out = Var(np.asarray(s @ x.value))
    _record(out, [(x, lambda g, s=s: np.asarray(s.T @ g))])
    return out


def add(a: Var, b: Var) -> Var:
    _check(a.shape == b.shape, "add", a.shape, b.shape)
    out = Var(a.value + b.value)
    _record(out, [(a, lambda g: g), (b, lambda g: g)])
    return out


def sub(a: Var, b: Var) -> Var:
    _check(a.shape == b.shape, "sub", a.shape, b.shape)
    out = Var(a.value - b.value)
    _record(out, [(a, lambda g: g), (b, lambda g: -g)])
    return out


def scale(a: Var, c: float) -> Var:
    c = float(c)
    out = Var(a.value * c)
    _record(out, [(a, lambda g, c=c: g * c)])
    return out


def hadamard(a: Var, b: Var) -> Var:
    _check(a.shape == b.shape, "hadamard", a.shape, b.shape)
    out = Var(a.value * b.value)
    _record(out, [(a, lambda g, b=b: g * b.value),
                  (b, lambda g, a=a: g * a.value)])
    return out


def scale_rows(x: Var, v: Var) -> Var:
    """Multiply row i of x by v[i, 0]."""
    _check(v.value.shape == (x.value.shape[0], 1), "scale_rows", x.shape, v.shape)
    out = Var(x.value * v.value)
    _record(out, [(x, lambda g, v=v: g * v.value),
                  (v, lambda g, x=x: np.sum(g * x.value, axis=1, keepdims=True))])
    return out


def add_bias(x: Var, b: Var) -> Var:
    """Add a (1, m) row vector to every row of x."""
    _check(b.value.shape == (1, x.value.shape[1]), "add_bias", x.shape, b.shape)
    out = Var(x.value + b.value)
    _record(out, [(x, lambda g: g),
                  (b, lambda g: g.sum(axis=0, keepdims=True))])
    return out


def concat_cols(*parts: Var) -> Var:
    rows = parts[0].value.shape[0]
    _check(all(p.value.shape[0] == rows for p in parts), "concat_cols",
           *[p.shape for p in parts])
    out = Var(np.concatenate([p.value for p in parts], axis=1))
    pairs = []
    off = 0
    for p in parts:
        w = p.value.shape[1]
        pairs.append((p, lambda g, o=off, w=w: g[:, o:o + w]))
        off += w
    _record(out, pairs)
    return out


def concat_rows(*parts: Var) -> Var:
    cols = parts[0].value.shape[1]
    _check(all(p.value.shape[1] == cols for p in parts), "concat_rows",
           *[p.shape for p in parts])
    out = Var(np.concatenate([p.value for p in parts], axis=0))
    pairs = []
    off = 0
    for p in parts:
        h = p.value.shape[0]
        pairs.append((p, lambda g, o=off, h=h: g[o:o + h, :]))
        off += h
    _record(out, pairs)
    return out


def relu(x: Var) -> Var:
    out = Var(np.maximum(x.value, 0.0))
    _record(out, [(x, lambda g, x=x: g * (x.value > 0.0))])
    return out


def sigmoid(x: Var) -> Var:
    out = Var(_sigmoid(x.value))
    _record(out, [(x, lambda g, out=out: g * out.value * (1.0 - out.value))])
    return out


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_rows(x: Var) -> Var:
    out = Var(_softmax_rows(x.value))
    def vjp(g, out=out):
        s = out.value
        return s * (g - np.sum(g * s, axis=1, keepdims=True))
    _record(out, [(x, vjp)])
    return out


def _softmax_rows(a):
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    return e / e.sum(axis=1, keepdims=True)


def logsumexp_rows(x: Var) -> Var:
    m = x.value.max(axis=1, keepdims=True)
    out = Var(m + np.log(np.sum(np.exp(x.value - m), axis=1, keepdims=True)))
    _record(out, [(x, lambda g, x=x: g * _softmax_rows(x.value))])
    return out


def row_select(x: Var, idx) -> Var:
    """Gather rows; duplicate indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    out = Var(x.value[idx])
    def vjp(g, x=x, idx=idx):
        z = np.zeros_like(x.value)
        np.add.at(z, idx, g)
        return z
    _record(out, [(x, vjp)])
    return out


def col_select(x: Var, j: int) -> Var:
    out = Var(x.value[:, j:j + 1].copy())
    def vjp(g, x=x, j=j):
        z = np.zeros_like(x.value)
        z[:, j:j + 1] = g
        return z
    _record(out, [(x, vjp)])
    return out


def masked_add(base: Var, mask, delta: Var) -> Var:
    """base + mask * delta, with mask a constant (n, 1) 0/1 array."""
    mask = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    _check(base.shape == delta.shape and mask.shape[0] == base.value.shape[0],
           "masked_add", base.shape, mask.shape, delta.shape)
    out = Var(base.value + mask * delta.value)
    _record(out, [(base, lambda g: g),
                  (delta, lambda g, mask=mask: g * mask)])
    return out


def sum_cols(x: Var) -> Var:
    out = Var(x.value.sum(axis=1, keepdims=True))
    _record(out, [(x, lambda g, x=x: np.broadcast_to(g, x.value.shape).copy())])
    return out


def reshape(x: Var, shape) -> Var:
    out = Var(x.value.reshape(shape))
    _record(out, [(x, lambda g, x=x: g.reshape(x.value.shape))])
    return out


def sum_all(x: Var) -> Var:
    out = Var(np.array([[x.value.sum()]]))
    _record(out, [(x, lambda g, x=x: np.full_like(x.value, g[0, 0]))])
    return out


def mean_all(x: Var) -> Var:
    n = x.value.size
    out = Var(np.array([[x.value.sum() / n]]))
    _record(out, [(x, lambda g, x=x, n=n: np.full_like(x.value, g[0, 0] / n))])
    return out


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Var, tape: Tape, params=None):
    """Run the tape in reverse from a 1x1 loss.

    Returns a dict mapping Var -> gradient array. Parameters in ``params``
    that the loss does not reach get explicit zero gradients. The tape is
    cleared and cannot be consumed again.
    """
    if tape.consumed:
        raise CpmrError("tape already consumed by a previous backward pass")
    if not tape.nodes:
        raise CpmrError("backward on an empty tape")
    if loss.value.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.value.shape}")
    grads = {loss: np.ones((1, 1))}
    for out, pairs in reversed(tape.nodes):
        g = grads.pop(out, None)
        if g is None:
            continue
        for inp, vjp in pairs:
            contrib = vjp(g)
            if inp in grads:
                grads[inp] = grads[inp] + contrib
            else:
                grads[inp] = contrib
    tape.nodes.clear()
    tape.consumed = True
    if params is not None:
        for p in params:
            if p not in grads:
                grads[p] = np.zeros_like(p.value)
    return grads


def grad_check(f, params, h=1e-5, max_coords=40, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> Var`` must be deterministic; it is re-run under fresh
    tapes for the analytic pass and twice per probed coordinate.
    """
    if not 1e-7 <= h <= 1e-3:
        raise CpmrError(f"finite-difference step {h} outside [1e-7, 1e-3]")
    if rng is None:
        rng = np.random.default_rng(0)
    with Tape() as tape:
        loss = f(params)
    grads = backward(loss, tape, params=params)
    worst = 0.0
    for p in params:
        g = grads[p]
        n = p.value.size
        coords = (np.arange(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        flat = p.value.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            hi = float(f(params).value[0, 0])
            flat[c] = orig - h
            lo = float(f(params).value[0, 0])
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * h)
            analytic = g.reshape(-1)[c]
            err = abs(analytic - numeric) / max(1.0, abs(analytic))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """First/second moments and step counter for a named parameter set."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, lr, weight_decay, state: AdamState):
    """One Adam update in place. ``params``: dict name -> Var.

    The L2 term ``weight_decay * param`` is added to the gradient before
    the moment updates (classic Adam-with-L2).
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.value.shape} for {name!r}")
        if weight_decay:
            g = g + weight_decay * p.value
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.value -= lr * mhat / (np.sqrt(vhat) + eps)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, JSON manifest, raw little-endian f64


_MAGIC = b"CPMRCKPT"
_VERSION = 1


def save_checkpoint(path, params):
    """Write named tensors; ``params``: dict name -> Var or ndarray."""
    entries = []
    blocks = []
    for name in sorted(params):
        val = params[name].value if isinstance(params[name], Var) else np.asarray(params[name])
        val = np.ascontiguousarray(val, dtype="<f8")
        entries.append({"name": name, "rows": int(val.shape[0]), "cols": int(val.shape[1])})
        blocks.append(val.tobytes())
    manifest = json.dumps({"version": _VERSION, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(manifest)))
        fh.write(manifest)
        for b in blocks:
            fh.write(b)


def load_checkpoint(path):
    """Read a checkpoint back as dict name -> ndarray (bit-exact)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataFormatError(f"bad checkpoint magic in {path}")
        version, mlen = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        out = {}
        for entry in manifest["tensors"]:
            rows, cols = entry["rows"], entry["cols"]
            raw = fh.read(rows * cols * 8)
            if len(raw) != rows * cols * 8:
                raise DataFormatError(f"truncated checkpoint {path}")
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    return out


class DataFormatError(DataError):
    """Corrupt or incompatible checkpoint file."""
