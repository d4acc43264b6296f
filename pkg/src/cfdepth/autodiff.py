"""Dense-tensor reverse-mode differentiation on (N, C, H, W) arrays.

A Tape records primitive applications in creation order; backward walks
the record in exact reverse, so gradients are deterministic and
bit-identical across runs. There is no broadcasting beyond scalar
multiplication: every elementwise op demands identical shapes, which
turns silent shape bugs into immediate ShapeErrors.

Scalars are tensors of shape (1, 1, 1, 1). 64-bit tapes are used for all
gradient checks; training runs in 32-bit for speed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NumericError, ShapeError

__all__ = [
    "Tape",
    "Tensor",
    "constant",
    "conv2d",
    "relu",
    "upsample_nearest_2x",
    "max_pool_2x",
    "concat_channels",
    "add",
    "sub",
    "mul",
    "div",
    "square",
    "sqrt",
    "mul_scalar",
    "add_scalar",
    "tensor_sum",
    "tensor_mean",
    "log",
    "clamp",
    "softplus",
    "berhu",
    "masked_select_sum",
    "backward",
    "grad_check",
    "AdamState",
    "adam_step",
]


class _Node:
    __slots__ = ("inputs", "backward_fn", "name")

    def __init__(self, inputs, backward_fn, name):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.name = name


class Tape:
    """Ordered record of primitive operations."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[_Node] = []

    def tensor(self, data) -> "Tensor":
        """Register a leaf (input or parameter) whose gradient is wanted."""
        arr = _as_nchw(data, self.dtype)
        self.nodes.append(_Node((), None, "leaf"))
        return Tensor(arr, self, len(self.nodes) - 1)

    def _record(self, data, inputs, backward_fn, name) -> "Tensor":
        self.nodes.append(_Node(inputs, backward_fn, name))
        return Tensor(data, self, len(self.nodes) - 1)


def _as_nchw(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ShapeError(f"tensors are (N, C, H, W); got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"all dims must be >= 1; got shape {arr.shape}")
    return arr


@dataclass
class Tensor:
    """Array value, possibly attached to a tape node."""

    data: np.ndarray
    tape: Tape | None = None
    node_id: int | None = None

    @property
    def shape(self):
        return self.data.shape

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)


def constant(data, dtype=np.float64) -> Tensor:
    """A tensor not attached to any tape (no gradient flows into it)."""
    return Tensor(_as_nchw(data, dtype))


def _tape_of(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise InvalidInput("operation mixes tensors from different tapes")
            tape = t.tape
    return tape


def _emit(tape, data, input_tensors, backward_fn, name) -> Tensor:
    if tape is None:
        return Tensor(data)
    ids = tuple(t.node_id for t in input_tensors)
    return tape._record(data, ids, backward_fn, name)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    tape = _tape_of(a, b)
    tracked = [t for t in (a, b) if t.tape is not None]

    def bwd(g):
        return [(t.node_id, g) for t in tracked]

    return _emit(tape, a.data + b.data, tracked, bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    tape = _tape_of(a, b)
    tracked = [t for t in (a, b) if t.tape is not None]

    def bwd(g):
        out = []
        if a.tape is not None:
            out.append((a.node_id, g))
        if b.tape is not None:
            out.append((b.node_id, -g))
        return out

    return _emit(tape, a.data - b.data, tracked, bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    tape = _tape_of(a, b)
    tracked = [t for t in (a, b) if t.tape is not None]
    ad, bd = a.data, b.data

    def bwd(g):
        out = []
        if a.tape is not None:
            out.append((a.node_id, g * bd))
        if b.tape is not None:
            out.append((b.node_id, g * ad))
        return out

    return _emit(tape, ad * bd, tracked, bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    tape = _tape_of(a, b)
    tracked = [t for t in (a, b) if t.tape is not None]
    ad, bd = a.data, b.data
    out_data = ad / bd

    def bwd(g):
        out = []
        if a.tape is not None:
            out.append((a.node_id, g / bd))
        if b.tape is not None:
            out.append((b.node_id, -g * ad / (bd * bd)))
        return out

    return _emit(tape, out_data, tracked, bwd, "div")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(_tape_of(x), xd * xd, [x] if x.tape else [],
                 lambda g: [(x.node_id, 2.0 * xd * g)], "square")


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    return _emit(_tape_of(x), out_data, [x] if x.tape else [],
                 lambda g: [(x.node_id, g * (0.5 / out_data))], "sqrt")


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(_tape_of(x), x.data * s, [x] if x.tape else [],
                 lambda g: [(x.node_id, g * s)], "mul_scalar")


def add_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(_tape_of(x), x.data + s, [x] if x.tape else [],
                 lambda g: [(x.node_id, g)], "add_scalar")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    # Subgradient at 0 is 0 (strict inequality below).
    return _emit(_tape_of(x), np.maximum(xd, 0), [x] if x.tape else [],
                 lambda g: [(x.node_id, g * (xd > 0))], "relu")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(_tape_of(x), np.log(xd), [x] if x.tape else [],
                 lambda g: [(x.node_id, g / xd)], "log")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    inside = (xd > lo) & (xd < hi)
    return _emit(_tape_of(x), np.clip(xd, lo, hi), [x] if x.tape else [],
                 lambda g: [(x.node_id, g * inside)], "clamp")


def softplus(x: Tensor) -> Tensor:
    """Numerically stable log(1 + exp(x)); strictly positive output."""
    xd = x.data
    out_data = np.log1p(np.exp(-np.abs(xd))) + np.maximum(xd, 0)

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-xd))
        return [(x.node_id, g * sig)]

    return _emit(_tape_of(x), out_data, [x] if x.tape else [], bwd, "softplus")


def berhu(x: Tensor, c: float) -> Tensor:
    """Reverse Huber: |x| below the cutoff c, (x^2 + c^2) / (2c) above.

    The two branch derivatives agree (+-1) at |x| = c, so the function is
    C1 there; the cutoff is a constant, never differentiated through.
    With c <= 0 (all-zero residuals) this degrades to plain |x|.
    """
    xd = x.data
    c = float(c)
    absx = np.abs(xd)
    if c <= 0:
        out_data = absx
    else:
        out_data = np.where(absx <= c, absx, (xd * xd + c * c) / (2.0 * c))

    def bwd(g):
        sign = np.sign(xd)
        if c <= 0:
            return [(x.node_id, g * sign)]
        return [(x.node_id, g * np.where(absx <= c, sign, xd / c))]

    return _emit(_tape_of(x), out_data, [x] if x.tape else [], bwd, "berhu")


def masked_select_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum of x * weights; weights are constants."""
    w = np.asarray(weights, dtype=x.data.dtype)
    if w.shape != x.data.shape:
        raise ShapeError(f"masked_select_sum: weights {w.shape} vs data {x.data.shape}")
    out_data = np.sum(x.data * w).reshape(1, 1, 1, 1)
    return _emit(_tape_of(x), out_data, [x] if x.tape else [],
                 lambda g: [(x.node_id, g.reshape(()) * w)], "masked_select_sum")


def tensor_sum(x: Tensor) -> Tensor:
    out_data = np.sum(x.data).reshape(1, 1, 1, 1)
    shape = x.data.shape
    return _emit(_tape_of(x), out_data, [x] if x.tape else [],
                 lambda g: [(x.node_id, np.full(shape, g.reshape(())))], "sum")


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out_data = (np.sum(x.data) / n).reshape(1, 1, 1, 1)
    shape = x.data.shape
    return _emit(_tape_of(x), out_data, [x] if x.tape else [],
                 lambda g: [(x.node_id, np.full(shape, g.reshape(()) / n))], "mean")


# ---------------------------------------------------------------------------
# Structured primitives
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, tuple):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad=0) -> Tensor:
    """Cross-correlation with zero padding. w is (O, C, kh, kw), b is (1, O, 1, 1)."""
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {cw}")
    sy, sx = _pair(stride)
    py, px = _pair(pad)
    if b is not None and b.data.shape != (1, o, 1, 1):
        raise ShapeError(f"conv2d: bias must be (1, {o}, 1, 1), got {b.data.shape}")
    oh = (h + 2 * py - kh) // sy + 1
    ow = (wd + 2 * px - kw) // sx + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} stride {sy}x{sx} pad {py}x{px} "
            f"does not fit input {h}x{wd}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (py, py), (px, px))) if (py or px) else x.data
    st = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(st[0], st[1], st[2], st[3], st[2] * sy, st[3] * sx),
        writeable=False,
    )
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3)).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    ymat = cols @ wmat.T
    if b is not None:
        ymat = ymat + b.data.reshape(1, o)
    out_data = np.ascontiguousarray(ymat.reshape(n, oh, ow, o).transpose(0, 3, 1, 2))

    tracked = [t for t in (x, w, b) if t is not None and t.tape is not None]
    tape = _tape_of(*[t for t in (x, w, b) if t is not None])

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, o)
        grads = []
        if x.tape is not None:
            dcols = gmat @ wmat
            dview = dcols.reshape(n, oh, ow, c, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + sy * oh : sy, j : j + sx * ow : sx] += (
                        dview[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = dxp[:, :, py : py + h, px : px + wd] if (py or px) else dxp
            grads.append((x.node_id, dx))
        if w.tape is not None:
            dw = (gmat.T @ cols).reshape(o, c, kh, kw)
            grads.append((w.node_id, dw))
        if b is not None and b.tape is not None:
            db = gmat.sum(axis=0).reshape(1, o, 1, 1)
            grads.append((b.node_id, db))
        return grads

    return _emit(tape, out_data, tracked, bwd, "conv2d")


def upsample_nearest_2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        return [(x.node_id, g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))]

    return _emit(_tape_of(x), out_data, [x] if x.tape else [], bwd, "upsample_nearest_2x")


def max_pool_2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool_2x: spatial dims must be even, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(flat, axis=4)  # first max wins on ties
    out_data = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]

    def bwd(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx[..., None], g[..., None], axis=4)
        dx = (
            dflat.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return [(x.node_id, dx)]

    return _emit(_tape_of(x), out_data, [x] if x.tape else [], bwd, "max_pool_2x")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    na, ca, ha, wa = a.data.shape
    nb, cb, hb, wb = b.data.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(
            f"concat_channels: spatial/batch mismatch {a.data.shape} vs {b.data.shape}"
        )
    tape = _tape_of(a, b)
    tracked = [t for t in (a, b) if t.tape is not None]

    def bwd(g):
        out = []
        if a.tape is not None:
            out.append((a.node_id, g[:, :ca]))
        if b.tape is not None:
            out.append((b.node_id, g[:, ca:]))
        return out

    return _emit(tape, np.concatenate([a.data, b.data], axis=1), tracked, bwd, "concat")


# ---------------------------------------------------------------------------
# Backward pass and checks
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every tape node, keyed by node id."""
    if loss.tape is not tape or loss.node_id is None:
        raise InvalidInput("loss is not a tensor on this tape")
    if loss.data.size != 1:
        raise InvalidInput(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for nid in range(loss.node_id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.backward_fn is None:
            continue
        for input_id, contrib in node.backward_fn(g):
            if input_id in grads:
                grads[input_id] = grads[input_id] + contrib
            else:
                grads[input_id] = contrib
    return grads


def grad_check(f, params: list[np.ndarray], eps: float = 1e-5,
               max_coords: int = 64, seed: int = 0) -> float:
    """Max relative error between tape gradients and central differences.

    f takes a list of leaf Tensors (all on one fresh 64-bit tape) and
    returns a scalar Tensor. Up to max_coords coordinates per parameter
    are probed, chosen by a seeded generator.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]

    def run(values):
        tape = Tape(dtype=np.float64)
        leaves = [tape.tensor(v) for v in values]
        loss = f(leaves)
        return tape, leaves, loss

    tape, leaves, loss = run(params)
    grads = backward(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = grads.get(leaves[k].node_id)
        if analytic is None:
            analytic = np.zeros_like(p)
        n = p.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for flat_idx in coords:
            idx = np.unravel_index(int(flat_idx), p.shape)
            bumped = [q.copy() for q in params]
            bumped[k][idx] += eps
            _, _, hi = run(bumped)
            bumped[k][idx] -= 2 * eps
            _, _, lo = run(bumped)
            cd = (hi.data.item() - lo.data.item()) / (2 * eps)
            an = float(analytic[idx])
            err = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for a named parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr: float) -> "AdamState":
        state = cls(lr=lr)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """One in-place Adam update; raises NumericError on non-finite gradients."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}' at step {t}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)
    return state
