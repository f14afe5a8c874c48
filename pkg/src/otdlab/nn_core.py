"""Tape-based reverse-mode autodiff on dense float64 arrays, plus the small
neural-network toolkit built on it: tanh MLPs with hidden-layer taps, Adam,
global-norm gradient clipping, and JSON weight checkpoints.

The tape (`Graph`) is an append-only list of primitive records. Tracing is
explicit: values entered through `Graph.leaf` / `Graph.constant` come back as
`Var` handles, and any expression built from a `Var` lands on that graph.
Plain ndarrays stay plain, so the same forward code runs traced or untraced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class NonFiniteError(ArithmeticError):
    """An operation produced or received NaN/Inf."""


def tensor(data) -> np.ndarray:
    """Copy into a C-contiguous float64 array, rejecting non-finite entries.
    0-d inputs stay 0-d (no ndmin promotion)."""
    arr = np.array(data, dtype=np.float64, order="C")
    return check_finite(arr, "tensor input")


def check_finite(arr, what="array"):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


# ---------------------------------------------------------------------------
# primitive registry
#
# Each primitive is a pure forward function plus a VJP rule. The registry is
# the single source of truth: the tape executes forwards from it, the reverse
# sweep pulls VJPs from it, and the test suite walks it to finite-difference
# check every rule.
# ---------------------------------------------------------------------------


def _unbroadcast(g, shape):
    # reduce an upstream gradient back to the shape the operand had before
    # numpy broadcasting
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _fw_add(a, b):
    return a + b


def _bw_add(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fw_sub(a, b):
    return a - b


def _bw_sub(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _fw_mul(a, b):
    return a * b


def _bw_mul(g, out, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fw_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def _bw_matmul(g, out, a, b):
    return g @ b.T, a.T @ g


def _fw_tanh(a):
    return np.tanh(a)


def _bw_tanh(g, out, a):
    return (g * (1.0 - out * out),)


def _fw_exp(a):
    return np.exp(a)


def _bw_exp(g, out, a):
    return (g * out,)


def _fw_log(a):
    if np.any(a <= 0.0):
        raise NonFiniteError("log of non-positive value")
    return np.log(a)


def _bw_log(g, out, a):
    return (g / a,)


def _fw_square(a):
    return a * a


def _bw_square(g, out, a):
    return (2.0 * a * g,)


def _fw_sum(a, *, axis=None):
    return np.sum(a, axis=axis)


def _bw_sum(g, out, a, *, axis=None):
    if axis is None:
        return (np.broadcast_to(g, a.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _fw_mean(a, *, axis=None):
    return np.mean(a, axis=axis)


def _bw_mean(g, out, a, *, axis=None):
    count = a.size if axis is None else a.shape[axis]
    (gx,) = _bw_sum(g, out, a, axis=axis)
    return (gx / count,)


def _fw_concat(*parts, axis=0):
    return np.concatenate(parts, axis=axis)


def _bw_concat(g, out, *parts, axis=0):
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return tuple(np.ascontiguousarray(piece) for piece in np.split(g, cuts, axis=axis))


def _normalize_key(key):
    # basic indexing only: ints and slices, possibly in a tuple
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, slice)):
            raise TypeError(f"slice supports ints and slices only, got {type(k).__name__}")
    return key


def _fw_slice(a, *, key):
    return a[key].copy()


def _bw_slice(g, out, a, *, key):
    gx = np.zeros_like(a)
    gx[key] = g
    return (gx,)


def _fw_broadcast(a, *, shape):
    return np.broadcast_to(a, shape).copy()


def _bw_broadcast(g, out, a, *, shape):
    return (_unbroadcast(g, a.shape).reshape(a.shape),)


PRIMITIVES = {
    "add": (_fw_add, _bw_add),
    "sub": (_fw_sub, _bw_sub),
    "mul": (_fw_mul, _bw_mul),
    "matmul": (_fw_matmul, _bw_matmul),
    "tanh": (_fw_tanh, _bw_tanh),
    "exp": (_fw_exp, _bw_exp),
    "log": (_fw_log, _bw_log),
    "square": (_fw_square, _bw_square),
    "sum": (_fw_sum, _bw_sum),
    "mean": (_fw_mean, _bw_mean),
    "concat": (_fw_concat, _bw_concat),
    "slice": (_fw_slice, _bw_slice),
    "broadcast": (_fw_broadcast, _bw_broadcast),
}


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class Node:
    op: str                   # primitive name, or "leaf"/"const" for inputs
    parents: tuple
    value: np.ndarray
    meta: dict = field(default_factory=dict)


class Graph:
    """Append-only tape of primitive applications in topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def _record(self, op, parents, value, meta=None) -> "Var":
        for p in parents:
            if not 0 <= p < len(self.nodes):
                raise ValueError("parent index out of range")
        value = np.asarray(value, dtype=np.float64)
        check_finite(value, f"result of '{op}'")
        self.nodes.append(Node(op, tuple(parents), value, meta or {}))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> "Var":
        """Enter a differentiable input (weights, probe points)."""
        return self._record("leaf", (), tensor(value))

    def constant(self, value) -> "Var":
        """Enter a value the reverse sweep treats as fixed."""
        return self._record("const", (), tensor(value))

    def apply(self, op, *args, **meta) -> "Var":
        fw, _ = PRIMITIVES[op]
        idxs = []
        vals = []
        for a in args:
            v = a if isinstance(a, Var) else self.constant(a)
            if v.graph is not self:
                raise ValueError("operands live on different graphs")
            idxs.append(v.idx)
            vals.append(v.value)
        # overflow lands as inf and is rejected by the finiteness check
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = fw(*vals, **meta)
        return self._record(op, idxs, out, meta)

    def leaves(self):
        return [Var(self, i) for i, n in enumerate(self.nodes) if n.op == "leaf"]

    def replay(self):
        """Re-execute every recorded op from its parents; returns the list of
        recomputed values (bit-identical to the stored ones by construction,
        which `tests` assert)."""
        values = []
        for node in self.nodes:
            if node.op in ("leaf", "const"):
                values.append(node.value.copy())
            else:
                fw, _ = PRIMITIVES[node.op]
                values.append(fw(*(values[p] for p in node.parents), **node.meta))
        return values


class Var:
    """Handle to one node of a Graph; composes like an ndarray."""

    __slots__ = ("graph", "idx")
    __array_ufunc__ = None  # keep numpy from hijacking mixed expressions

    def __init__(self, graph, idx):
        self.graph = graph
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Var(idx={self.idx}, op={self.graph.nodes[self.idx].op!r}, shape={self.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return self.graph.apply("add", self, other)

    def __radd__(self, other):
        return self.graph.apply("add", other, self)

    def __sub__(self, other):
        return self.graph.apply("sub", self, other)

    def __rsub__(self, other):
        return self.graph.apply("sub", other, self)

    def __mul__(self, other):
        return self.graph.apply("mul", self, other)

    def __rmul__(self, other):
        return self.graph.apply("mul", other, self)

    def __matmul__(self, other):
        return self.graph.apply("matmul", self, other)

    def __rmatmul__(self, other):
        return self.graph.apply("matmul", other, self)

    def __neg__(self):
        return self.graph.apply("mul", self, -1.0)

    def __getitem__(self, key):
        return self.graph.apply("slice", self, key=_normalize_key(key))

    # -- reductions / elementwise (mirror ndarray method names so generic
    #    forward code runs on either kind) ----------------------------------

    def sum(self, axis=None):
        return self.graph.apply("sum", self, axis=axis)

    def mean(self, axis=None):
        return self.graph.apply("mean", self, axis=axis)

    def square(self):
        return self.graph.apply("square", self)

    def broadcast_to(self, shape):
        return self.graph.apply("broadcast", self, shape=tuple(shape))


def _dispatch1(op, npf):
    def f(x):
        if isinstance(x, Var):
            return x.graph.apply(op, x)
        return npf(np.asarray(x, dtype=np.float64))

    f.__name__ = op
    return f


tanh = _dispatch1("tanh", np.tanh)
exp = _dispatch1("exp", np.exp)
log = _dispatch1("log", np.log)
square = _dispatch1("square", np.square)


def matmul(a, b):
    if isinstance(a, Var):
        return a @ b
    if isinstance(b, Var):
        return a @ b  # routes through Var.__rmatmul__
    return _fw_matmul(np.asarray(a, np.float64), np.asarray(b, np.float64))


def concat(parts, axis=0):
    vars_ = [p for p in parts if isinstance(p, Var)]
    if vars_:
        return vars_[0].graph.apply("concat", *parts, axis=axis)
    return np.concatenate([np.asarray(p, np.float64) for p in parts], axis=axis)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def backward(output: Var, wrt=None):
    """Reverse-sweep gradients of a scalar-valued node.

    Returns one array per entry of `wrt` (default: every leaf on the graph,
    in recording order). Leaves the output does not depend on get zeros.
    """
    graph = output.graph
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if wrt is None:
        wrt = graph.leaves()

    adjoint = {output.idx: np.ones_like(graph.nodes[output.idx].value)}
    for i in range(output.idx, -1, -1):
        g = adjoint.get(i)
        if g is None:
            continue
        node = graph.nodes[i]
        if node.op in ("leaf", "const"):
            continue
        _, bw = PRIMITIVES[node.op]
        pvals = [graph.nodes[p].value for p in node.parents]
        pgrads = bw(g, node.value, *pvals, **node.meta)
        for p, pg in zip(node.parents, pgrads):
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"NaN/Inf in reverse sweep through '{node.op}'")
            if p in adjoint:
                adjoint[p] = adjoint[p] + pg
            else:
                adjoint[p] = np.asarray(pg, dtype=np.float64)

    out = []
    for v in wrt:
        if v.graph is not graph:
            raise ValueError("wrt entry lives on a different graph")
        g = adjoint.get(v.idx)
        out.append(np.zeros_like(v.value) if g is None else np.asarray(g, np.float64))
    return out


def vjp(fn, x, v):
    """Vector-Jacobian product J(x)^T v for y = fn(x).

    Implemented literally as the gradient of <v, fn(x)> with respect to x,
    on a fresh tape. `fn` must map a Var to a Var of the same graph.
    """
    graph = Graph()
    xv = graph.leaf(x)
    y = fn(xv)
    if not isinstance(y, Var):
        raise TypeError("fn must return a traced Var")
    v = tensor(v)
    if y.shape != v.shape:
        raise ValueError(f"v has shape {v.shape}, fn(x) has shape {y.shape}")
    inner = (y * graph.constant(v)).sum()
    (gx,) = backward(inner, [xv])
    return gx


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpParams:
    """Weights of a dense net: tanh hidden layers, linear output."""

    weights: tuple       # W_l with shape (fan_in, fan_out)
    biases: tuple        # b_l with shape (fan_out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh",):
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must pair up")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ValueError(f"layer {l}: bad shapes {w.shape}, {b.shape}")
            if l > 0 and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {l}: fan-in mismatch")
            check_finite(w, f"W{l}")
            check_finite(b, f"b{l}")

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_hidden(self):
        return len(self.weights) - 1

    def param_list(self):
        """Flat list [W0, b0, W1, b1, ...] for the optimizer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_param_list(self, params):
        ws = tuple(params[2 * l] for l in range(len(self.weights)))
        bs = tuple(params[2 * l + 1] for l in range(len(self.weights)))
        return replace(self, weights=ws, biases=bs)


def init_mlp(widths, rng, zero_final=False) -> MlpParams:
    """Gaussian fan-in init, zero biases; `zero_final` zeroes the output layer
    (used for heads that must start at exactly zero)."""
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    ws, bs = [], []
    for fi, fo in zip(widths[:-1], widths[1:]):
        ws.append(rng.normal(0.0, 1.0 / math.sqrt(fi), size=(fi, fo)))
        bs.append(np.zeros(fo))
    if zero_final:
        ws[-1] = np.zeros_like(ws[-1])
    return MlpParams(tuple(ws), tuple(bs))


def lift_mlp(graph, params: MlpParams, trainable=True):
    """Enter MLP weights onto a tape. Returns (weight Vars, bias Vars, leaf
    list); `trainable=False` enters them as constants (frozen net)."""
    enter = graph.leaf if trainable else graph.constant
    ws = [enter(w) for w in params.weights]
    bs = [enter(b) for b in params.biases]
    leaves = []
    for w, b in zip(ws, bs):
        leaves.append(w)
        leaves.append(b)
    return ws, bs, (leaves if trainable else [])


def mlp_forward(weights, biases, x, hidden=None):
    """Run the net. Operands may be ndarrays, Vars, or a mix; the output kind
    follows the inputs. If `hidden` is a list, each post-activation hidden
    layer is appended to it (discriminator taps read these)."""
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = tanh(matmul(h, w) + b)
        if hidden is not None:
            hidden.append(h)
    return matmul(h, weights[-1]) + biases[-1]


def mlp_apply(params: MlpParams, x, hidden=None):
    """Untraced forward pass on plain arrays."""
    return mlp_forward(params.weights, params.biases, np.asarray(x, np.float64), hidden)


def time_embedding(t, dim=8):
    """Sinusoidal features of a scalar in [0, 1]: (sin, cos) pairs at
    dyadic frequencies."""
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    k = np.arange(dim // 2, dtype=np.float64)
    ang = 2.0 * np.pi * (2.0 ** k) * float(t)
    return np.concatenate([np.sin(ang), np.cos(ang)])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam moments over a flat list of arrays."""

    m: tuple
    v: tuple
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    if lr <= 0:
        raise ValueError("lr must be positive")
    return AdamState(
        m=tuple(np.zeros_like(p) for p in params),
        v=tuple(np.zeros_like(p) for p in params),
        step=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(params, grads, state: AdamState):
    """One Adam update; returns (new param list, new state). Zero gradients
    leave parameters exactly unchanged."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, np.float64)
        check_finite(g, "adam gradient")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new_p.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=tuple(new_m), v=tuple(new_v), step=t)


def clip_global_norm(grads, max_norm):
    """Scale the whole gradient list so its global L2 norm is <= max_norm.
    Returns (clipped list, pre-clip norm)."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and total > max_norm and total > 0.0:
        scale = max_norm / total
        grads = [g * scale for g in grads]
    return grads, total


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def mlp_to_doc(params: MlpParams) -> dict:
    """JSON document for one net: row-major flat arrays keyed w{l}/b{l}."""
    arrays = {}
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"w{l}"] = [float(x) for x in w.reshape(-1)]
        arrays[f"b{l}"] = [float(x) for x in b]
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "widths": list(params.widths),
        "activation": params.activation,
        "arrays": arrays,
    }


def mlp_from_doc(doc: dict) -> MlpParams:
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unknown checkpoint format_version: {version!r}")
    widths = [int(w) for w in doc["widths"]]
    arrays = doc["arrays"]
    ws, bs = [], []
    for l, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        w = tensor(arrays[f"w{l}"]).reshape(fi, fo)
        b = tensor(arrays[f"b{l}"])
        if b.shape != (fo,):
            raise ValueError(f"layer {l}: bias length {b.shape[0]} != {fo}")
        ws.append(w)
        bs.append(b)
    return MlpParams(tuple(ws), tuple(bs), activation=doc.get("activation", "tanh"))


def save_mlp(path, params: MlpParams):
    with open(path, "w") as f:
        json.dump(mlp_to_doc(params), f)
        f.write("\n")


def load_mlp(path) -> MlpParams:
    with open(path) as f:
        return mlp_from_doc(json.load(f))
