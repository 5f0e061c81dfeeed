"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive takes an optional ``tape``; with ``tape=None`` it runs
forward-only (used for frozen models and rollout inference). Primitives
validate shapes, reject empty inputs, and raise ``NonFiniteError`` if a
result contains NaN/Inf.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "NonFiniteError", "backward",
    "constant", "parameter", "apply_primitive", "PRIMITIVES",
]


class ShapeError(ValueError):
    """Input shapes do not conform to the primitive's contract."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _check_finite(a: np.ndarray, op: str) -> None:
    # sum is one pass; inf/nan in the data poisons it
    if not math.isfinite(float(np.sum(a))):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A node in the computation graph: float64 data plus accumulated grad."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op_tape")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.op_tape = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def accumulate_row(self, i: int, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[i] += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape})"


def constant(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in construction order, which is a topological order
    of the DAG, so one reversed sweep visits every node exactly once.
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []  # list of (out_tensor, backward_fn)

    def record(self, out: Tensor, backward_fn) -> None:
        out.op_tape = self
        self.nodes.append((out, backward_fn))

    def __len__(self):
        return len(self.nodes)


def backward(tape: Tape, out: Tensor) -> None:
    """Backpropagate from a scalar output through every recorded node."""
    if out.data.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {out.data.shape}")
    if out.op_tape is not tape:
        raise ValueError("output was not produced on this tape")
    out.grad = np.ones_like(out.data)
    for node, backward_fn in reversed(tape.nodes):
        if node.grad is not None:
            backward_fn(node.grad)


def _emit(tape, inputs, data, backward_fn, op):
    _check_finite(data, op)
    out = Tensor(data)
    if tape is not None:
        tape.record(out, backward_fn)
    return out


def _require_nonempty(op, *xs):
    for x in xs:
        if x.data.size == 0:
            raise ShapeError(f"{op}: zero-length input")


# ---------------------------------------------------------------------------
# elementwise


def sigmoid(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("sigmoid", a)
    s = np.exp(-np.logaddexp(0.0, -a.data))

    def bwd(g):
        a.accumulate(g * s * (1.0 - s))

    return _emit(tape, (a,), s, bwd, "sigmoid")


def tanh(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("tanh", a)
    t = np.tanh(a.data)

    def bwd(g):
        a.accumulate(g * (1.0 - t * t))

    return _emit(tape, (a,), t, bwd, "tanh")


def relu(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("relu", a)
    y = np.maximum(a.data, 0.0)

    def bwd(g):
        a.accumulate(g * (a.data > 0.0))

    return _emit(tape, (a,), y, bwd, "relu")


def sign(a: Tensor, tape=None) -> Tensor:
    """Elementwise sign; gradient is zero almost everywhere."""
    _require_nonempty("sign", a)
    y = np.sign(a.data)

    def bwd(g):
        pass

    return _emit(tape, (a,), y, bwd, "sign")


def absval(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("abs", a)
    y = np.abs(a.data)

    def bwd(g):
        a.accumulate(g * np.sign(a.data))

    return _emit(tape, (a,), y, bwd, "abs")


def square(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("square", a)
    y = a.data * a.data

    def bwd(g):
        a.accumulate(2.0 * g * a.data)

    return _emit(tape, (a,), y, bwd, "square")


def sqrt(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("sqrt", a)
    y = np.sqrt(a.data)

    def bwd(g):
        a.accumulate(g * 0.5 / np.maximum(y, 1e-300))

    return _emit(tape, (a,), y, bwd, "sqrt")


def log(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("log", a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def bwd(g):
        a.accumulate(g / a.data)

    return _emit(tape, (a,), y, bwd, "log")


def clip(a: Tensor, lo: float, hi: float, tape=None) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    _require_nonempty("clip", a)
    y = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        a.accumulate(g * inside)

    return _emit(tape, (a,), y, bwd, "clip")


def scale(a: Tensor, c: float, tape=None) -> Tensor:
    _require_nonempty("scale", a)
    c = float(c)
    y = a.data * c

    def bwd(g):
        a.accumulate(g * c)

    return _emit(tape, (a,), y, bwd, "scale")


# ---------------------------------------------------------------------------
# binary


def _binary_shapes(op, a, b):
    if a.data.shape == b.data.shape:
        return False
    # row-broadcast: (m, n) op (n,)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not conform")


def add(a: Tensor, b: Tensor, tape=None) -> Tensor:
    _require_nonempty("add", a, b)
    bcast = _binary_shapes("add", a, b)
    y = a.data + b.data

    def bwd(g):
        a.accumulate(g)
        b.accumulate(g.sum(axis=0) if bcast else g)

    return _emit(tape, (a, b), y, bwd, "add")


def sub(a: Tensor, b: Tensor, tape=None) -> Tensor:
    _require_nonempty("sub", a, b)
    bcast = _binary_shapes("sub", a, b)
    y = a.data - b.data

    def bwd(g):
        a.accumulate(g)
        b.accumulate(-(g.sum(axis=0)) if bcast else -g)

    return _emit(tape, (a, b), y, bwd, "sub")


def mul(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """Hadamard product (equal shapes, or row-broadcast on the right)."""
    _require_nonempty("mul", a, b)
    bcast = _binary_shapes("mul", a, b)
    y = a.data * b.data

    def bwd(g):
        a.accumulate(g * b.data)
        gb = g * a.data
        b.accumulate(gb.sum(axis=0) if bcast else gb)

    return _emit(tape, (a, b), y, bwd, "mul")


def matmul(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """(m,k)@(k,n) or (k,)@(k,n) -> (n,)."""
    _require_nonempty("matmul", a, b)
    if b.data.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got {b.data.shape}")
    vec = a.data.ndim == 1
    if (a.data.shape[-1] != b.data.shape[0]) or a.data.ndim > 2:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    y = a.data @ b.data

    def bwd(g):
        if vec:
            a.accumulate(b.data @ g)
            b.accumulate(np.outer(a.data, g))
        else:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)

    return _emit(tape, (a, b), y, bwd, "matmul")


# ---------------------------------------------------------------------------
# structure


def concat(parts, tape=None) -> Tensor:
    """Concatenate along the last axis."""
    parts = list(parts)
    _require_nonempty("concat", *parts)
    nd = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != nd:
            raise ShapeError("concat: mixed ranks")
    y = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bwd(g):
        j = 0
        for p, w in zip(parts, widths):
            p.accumulate(g[..., j:j + w])
            j += w

    return _emit(tape, tuple(parts), y, bwd, "concat")


def concat_rows(parts, tape=None) -> Tensor:
    """Concatenate matrices along axis 0."""
    parts = list(parts)
    _require_nonempty("concat_rows", *parts)
    for p in parts:
        if p.data.ndim != 2:
            raise ShapeError("concat_rows expects matrices")
    y = np.concatenate([p.data for p in parts], axis=0)
    heights = [p.data.shape[0] for p in parts]

    def bwd(g):
        j = 0
        for p, h in zip(parts, heights):
            p.accumulate(g[j:j + h])
            j += h

    return _emit(tape, tuple(parts), y, bwd, "concat_rows")


def tile_rows(a: Tensor, n: int, tape=None) -> Tensor:
    """Broadcast a vector to n identical rows."""
    _require_nonempty("tile_rows", a)
    if a.data.ndim != 1:
        raise ShapeError("tile_rows expects a vector")
    y = np.broadcast_to(a.data, (n, a.data.shape[0])).copy()

    def bwd(g):
        a.accumulate(g.sum(axis=0))

    return _emit(tape, (a,), y, bwd, "tile_rows")


def stack_rows(parts, tape=None) -> Tensor:
    """Stack 1-D tensors into a (T, n) matrix."""
    parts = list(parts)
    _require_nonempty("stack_rows", *parts)
    y = np.stack([p.data for p in parts], axis=0)

    def bwd(g):
        for i, p in enumerate(parts):
            p.accumulate(g[i])

    return _emit(tape, tuple(parts), y, bwd, "stack_rows")


def slice_last(a: Tensor, j0: int, j1: int, tape=None) -> Tensor:
    _require_nonempty("slice_last", a)
    y = a.data[..., j0:j1].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[..., j0:j1] = g
        a.accumulate(full)

    return _emit(tape, (a,), y, bwd, "slice_last")


def take_rows(a: Tensor, idx, tape=None) -> Tensor:
    _require_nonempty("take_rows", a)
    idx = np.asarray(idx, dtype=np.intp)
    y = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a.accumulate(full)

    return _emit(tape, (a,), y, bwd, "take_rows")


def row(a: Tensor, i: int, tape=None) -> Tensor:
    _require_nonempty("row", a)
    y = a.data[i].copy()

    def bwd(g):
        a.accumulate_row(i, g)

    return _emit(tape, (a,), y, bwd, "row")


def split_rows(a: Tensor, tape=None) -> list[Tensor]:
    """Split a matrix into its rows (one node per row)."""
    _require_nonempty("split_rows", a)
    if a.data.ndim != 2:
        raise ShapeError("split_rows expects a matrix")
    out = []
    for i in range(a.data.shape[0]):
        out.append(row(a, i, tape))
    return out


# ---------------------------------------------------------------------------
# reductions


def mean_all(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("mean", a)
    y = np.array(a.data.mean())
    n = a.data.size

    def bwd(g):
        a.accumulate(np.full_like(a.data, float(g) / n))

    return _emit(tape, (a,), y, bwd, "mean")


def sum_all(a: Tensor, tape=None) -> Tensor:
    _require_nonempty("sum", a)
    y = np.array(a.data.sum())

    def bwd(g):
        a.accumulate(np.full_like(a.data, float(g)))

    return _emit(tape, (a,), y, bwd, "sum")


def mean_rows(a: Tensor, tape=None) -> Tensor:
    """Mean over axis 0: (m, n) -> (n,)."""
    _require_nonempty("mean_rows", a)
    if a.data.ndim != 2:
        raise ShapeError("mean_rows expects a matrix")
    m = a.data.shape[0]
    y = a.data.mean(axis=0)

    def bwd(g):
        a.accumulate(np.broadcast_to(g / m, a.data.shape))

    return _emit(tape, (a,), y, bwd, "mean_rows")


def sum_cols(a: Tensor, tape=None) -> Tensor:
    """Sum over axis 1: (m, n) -> (m,)."""
    _require_nonempty("sum_cols", a)
    if a.data.ndim != 2:
        raise ShapeError("sum_cols expects a matrix")
    y = a.data.sum(axis=1)

    def bwd(g):
        a.accumulate(np.broadcast_to(g[:, None], a.data.shape))

    return _emit(tape, (a,), y, bwd, "sum_cols")


# ---------------------------------------------------------------------------
# normalizations

L2_EPS = 1e-8
IN_EPS = 1e-5


def l2_normalize(a: Tensor, eps: float = L2_EPS, tape=None) -> Tensor:
    """Divide by the L2 norm (per row for matrices); eps guards zero vectors."""
    _require_nonempty("l2_normalize", a)
    x = a.data
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    denom = n + eps
    y = x / denom

    def bwd(g):
        # du_i/dx_j = delta_ij/(n+eps) - x_i x_j / (n (n+eps)^2)
        n_safe = np.maximum(n, 1e-300)
        inner = np.sum(g * x, axis=-1, keepdims=True)
        a.accumulate(g / denom - x * inner / (n_safe * denom * denom))

    return _emit(tape, (a,), y, bwd, "l2_normalize")


def instance_norm(a: Tensor, eps: float = IN_EPS, tape=None) -> Tensor:
    """Zero-mean unit-variance over the feature (last) axis, population variance."""
    _require_nonempty("instance_norm", a)
    if a.data.shape[-1] < 2:
        raise ShapeError("instance_norm needs feature length >= 2")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        a.accumulate(inv * (g - gm - y * gy))

    return _emit(tape, (a,), y, bwd, "instance_norm")


# ---------------------------------------------------------------------------
# attention


def attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False, tape=None) -> Tensor:
    """Scaled dot-product attention over rows; 1-D q is treated as one query."""
    _require_nonempty("attention", q, k, v)
    vec = q.data.ndim == 1
    qd = q.data[None, :] if vec else q.data
    if qd.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention expects matrices (or a 1-D query)")
    if qd.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"attention: shapes {q.data.shape}, {k.data.shape}, {v.data.shape} do not conform")
    d = qd.shape[1]
    s = qd @ k.data.T / math.sqrt(d)
    if causal:
        if s.shape[0] != s.shape[1]:
            raise ShapeError("causal attention needs square score matrix")
        s = np.where(np.tri(s.shape[0], dtype=bool), s, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    w = e / e.sum(axis=1, keepdims=True)
    out = w @ v.data
    y = out[0] if vec else out

    def bwd(g):
        gd = g[None, :] if vec else g
        gv = w.T @ gd
        gw = gd @ v.data.T
        gs = w * (gw - np.sum(gw * w, axis=1, keepdims=True))
        gq = gs @ k.data / math.sqrt(d)
        gk = gs.T @ qd / math.sqrt(d)
        q.accumulate(gq[0] if vec else gq)
        k.accumulate(gk)
        v.accumulate(gv)

    return _emit(tape, (q, k, v), y, bwd, "attention")


def attention_weights(q_data: np.ndarray, k_data: np.ndarray, causal: bool = False) -> np.ndarray:
    """Forward-only softmax weights, for audits."""
    qd = q_data[None, :] if q_data.ndim == 1 else q_data
    s = qd @ k_data.T / math.sqrt(qd.shape[1])
    if causal:
        s = np.where(np.tri(s.shape[0], dtype=bool), s, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# composites


def linear(x: Tensor, w: Tensor, b: Tensor, tape=None) -> Tensor:
    return add(matmul(x, w, tape), b, tape)


def lstm_cell_composite(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
                        tape=None):
    """Reference LSTM step built from elementary primitives (slow path)."""
    hidden = h.data.shape[-1]
    if wx.data.shape[1] != 4 * hidden or wh.data.shape != (hidden, 4 * hidden):
        raise ShapeError("lstm_cell: weight shapes do not match hidden size")
    z = add(add(matmul(x, wx, tape), matmul(h, wh, tape), tape), b, tape)
    i = sigmoid(slice_last(z, 0, hidden, tape), tape)
    f = sigmoid(slice_last(z, hidden, 2 * hidden, tape), tape)
    g = tanh(slice_last(z, 2 * hidden, 3 * hidden, tape), tape)
    o = sigmoid(slice_last(z, 3 * hidden, 4 * hidden, tape), tape)
    c2 = add(mul(f, c, tape), mul(i, g, tape), tape)
    h2 = mul(o, tanh(c2, tape), tape)
    return h2, c2


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor, tape=None):
    """One LSTM step on 1-D vectors, fused into two tape nodes for speed;
    gate order i, f, g, o. Returns (h', c')."""
    hidden = h.data.shape[-1]
    if x.data.ndim != 1 or h.data.ndim != 1:
        return lstm_cell_composite(x, h, c, wx, wh, b, tape)
    if wx.data.shape[1] != 4 * hidden or wh.data.shape != (hidden, 4 * hidden):
        raise ShapeError("lstm_cell: weight shapes do not match hidden size")
    z = x.data @ wx.data + h.data @ wh.data + b.data
    sig = np.exp(-np.logaddexp(0.0, -z[:2 * hidden]))
    i_g = sig[:hidden]
    f_g = sig[hidden:2 * hidden]
    g_g = np.tanh(z[2 * hidden:3 * hidden])
    o_g = np.exp(-np.logaddexp(0.0, -z[3 * hidden:]))
    c2_data = f_g * c.data + i_g * g_g
    tc = np.tanh(c2_data)
    h2_data = o_g * tc

    ctx = {"dzo": None}

    def bwd_c2(dc2):
        dz = np.empty(4 * hidden)
        dz[:hidden] = dc2 * g_g * i_g * (1.0 - i_g)
        dz[hidden:2 * hidden] = dc2 * c.data * f_g * (1.0 - f_g)
        dz[2 * hidden:3 * hidden] = dc2 * i_g * (1.0 - g_g * g_g)
        dz[3 * hidden:] = ctx["dzo"] if ctx["dzo"] is not None else 0.0
        c.accumulate(dc2 * f_g)
        x.accumulate(wx.data @ dz)
        h.accumulate(wh.data @ dz)
        b.accumulate(dz)
        wx.accumulate(np.outer(x.data, dz))
        wh.accumulate(np.outer(h.data, dz))

    def bwd_h2(dh2):
        ctx["dzo"] = dh2 * tc * o_g * (1.0 - o_g)
        c2.accumulate(dh2 * o_g * (1.0 - tc * tc))

    c2 = _emit(tape, (x, h, c, wx, wh, b), c2_data, bwd_c2, "lstm_cell")
    h2 = _emit(tape, (c2,), h2_data, bwd_h2, "lstm_cell")
    return h2, c2


def bce(p: Tensor, y: Tensor, tape=None) -> Tensor:
    """Mean binary cross-entropy; p must lie strictly inside (0, 1)."""
    if p.data.shape != y.data.shape:
        raise ShapeError(f"bce: shapes {p.data.shape} vs {y.data.shape}")
    one = constant(np.ones_like(p.data))
    t1 = mul(y, log(p, tape), tape)
    t2 = mul(sub(one, y, tape), log(sub(one, p, tape), tape), tape)
    return scale(mean_all(add(t1, t2, tape), tape), -1.0, tape)


def l1_mean(a: Tensor, tape=None) -> Tensor:
    return mean_all(absval(a, tape), tape)


def squared_error(a: Tensor, b: Tensor, tape=None) -> Tensor:
    return mean_all(square(sub(a, b, tape), tape), tape)


def row_l2_distance(a: Tensor, b: Tensor, tape=None) -> Tensor:
    """Euclidean distance per row of two equal-shape matrices -> (m,)."""
    return sqrt(sum_cols(square(sub(a, b, tape), tape), tape), tape)


# ---------------------------------------------------------------------------
# registry

PRIMITIVES = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "sign": sign,
    "abs": absval,
    "square": square,
    "sqrt": sqrt,
    "log": log,
    "clip": clip,
    "scale": scale,
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "linear": linear,
    "concat": concat,
    "concat_rows": concat_rows,
    "tile_rows": tile_rows,
    "stack_rows": stack_rows,
    "slice_last": slice_last,
    "take_rows": take_rows,
    "row": row,
    "mean": mean_all,
    "sum": sum_all,
    "mean_rows": mean_rows,
    "sum_cols": sum_cols,
    "l2_normalize": l2_normalize,
    "instance_norm": instance_norm,
    "attention": attention,
    "lstm_cell": lstm_cell,
    "bce": bce,
    "l1_mean": l1_mean,
    "squared_error": squared_error,
}


def apply_primitive(name, *inputs, tape=None, **kwargs):
    """Dispatch a primitive by name (see PRIMITIVES for the set)."""
    try:
        fn = PRIMITIVES[name]
    except KeyError:
        raise KeyError(f"unknown primitive {name!r}") from None
    return fn(*inputs, tape=tape, **kwargs)
