"""Dense float tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded when at least
one input requires a gradient. :func:`backward` replays the tape in reverse
and accumulates gradients into every reachable :class:`Parameter`.

Layout conventions: images are ``N, C, H, W``; convolution weights are
``F, C, k, k``; transposed-convolution weights are ``C_in, C_out, k, k`` so a
conv weight can be fed to :func:`deconv2d` unchanged to obtain its adjoint.
Convolution is cross-correlation (no kernel flip). ``"same"`` padding puts the
smaller half of the padding on the top/left, i.e. for ``k=2, stride=1`` one
row/column of zeros is added at the bottom/right only.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "grad",
    "add",
    "mul",
    "exp",
    "log",
    "sum",
    "mean",
    "reshape",
    "concat",
    "clamp",
    "dense",
    "conv2d",
    "deconv2d",
    "activation",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; the message names the axis."""


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; nested tapes shadow outer ones. A tape can be
    replayed by :func:`backward` exactly once.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other, self.dtype)))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: int):
        if exponent != 2:
            raise NotImplementedError("only squaring is supported")
        return mul(self, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Parameter(Tensor):
    """A named trainable tensor with an accumulated gradient of the same shape."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = _TAPES[-1] if _TAPES else None
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    tape.nodes.append((out, inputs, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# reverse pass


def _reverse(loss: Tensor, tape: Tape) -> tuple[dict[int, np.ndarray], dict[int, Tensor]]:
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise RuntimeError("tape has already been replayed; record a new one")
    tape.consumed = True
    grads = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()
    leaves: dict[int, Tensor] = {}
    for out, inputs, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in owned:
                grads[key] += gi
            elif key in grads:
                # backward fns may return aliases, so the first sum allocates
                grads[key] = grads[key] + gi
                owned.add(key)
            else:
                grads[key] = gi
                leaves[key] = inp
    if id(loss) in grads and not tape.nodes:
        leaves[id(loss)] = loss
    return grads, leaves


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(p) into ``p.grad`` for every reachable Parameter.

    Gradients accumulate across calls until :meth:`Parameter.zero_grad`.
    Replaying the same tape twice raises ``RuntimeError``.
    """
    grads, leaves = _reverse(loss, tape)
    for key, g in grads.items():
        t = leaves.get(key)
        if t is None:
            continue
        if isinstance(t, Parameter):
            t.grad += g
        elif t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


def grad(loss: Tensor, tape: Tape, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Return gradients of ``loss`` for ``wrt`` without touching ``.grad``."""
    grads, _ = _reverse(loss, tape)
    return [grads[id(t)] if id(t) in grads else np.zeros_like(t.data) for t in wrt]


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), bw)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / float(count))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    shape, dtype = a.shape, a.dtype
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    out = a.data[index]
    return _result(np.array(out) if basic else out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; all other axes must agree."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat: rank {t.ndim} does not match rank {ndim}")
        for ax in range(ndim):
            if ax != axis and t.shape[ax] != tensors[0].shape[ax]:
                raise ShapeError(
                    f"concat: axis {ax} has size {t.shape[ax]}, expected {tensors[0].shape[ax]}"
                )
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _result(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def activation(a: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    """Elementwise nonlinearity: ``relu``, ``leaky_relu``, ``sigmoid`` or ``tanh``.

    Subgradient convention at the kink is the left slope: relu'(0) = 0 and
    leaky_relu'(0) = alpha.
    """
    x = a.data
    if kind == "relu":
        mask = x > 0
        return _result(x * mask, (a,), lambda g: (g * mask,))
    if kind == "leaky_relu":
        if alpha > 1.0:
            mask = x > 0
            return _result(np.where(mask, x, alpha * x), (a,), lambda g: (np.where(mask, g, alpha * g),))
        # slope per element is exactly 1 or alpha; a multiply is far cheaper than np.where
        slope = np.maximum((x > 0).astype(x.dtype), x.dtype.type(alpha))
        return _result(np.maximum(x, alpha * x), (a,), lambda g: (g * slope,))
    if kind == "sigmoid":
        out = 0.5 * np.tanh(0.5 * x) + 0.5
        return _result(out, (a,), lambda g: (g * out * (1.0 - out),))
    if kind == "tanh":
        out = np.tanh(x)
        return _result(out, (a,), lambda g: (g * (1.0 - out * out),))
    raise ValueError(f"unknown activation {kind!r}")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` for ``x: (N, D)``, ``w: (D, M)``, ``b: (M,)``."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense: expected 2-d input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input axis 1 has size {x.shape[1]}, weight axis 0 has {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias axis 0 has size {b.shape}, expected ({w.shape[1]},)")
    xd, wd = x.data, w.data

    def bw(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if w.requires_grad else None
        return gx, gw, g.sum(axis=0)

    return _result(xd @ wd + b.data, (x, w, b), bw)


# ---------------------------------------------------------------------------
# convolutions


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _check_conv(x: Tensor, w: Tensor, b: Tensor, stride: int, op: str, cin_axis: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be 4-d (N, C, H, W), got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"{op}: weight must be 4-d, got shape {w.shape}")
    if w.shape[2] != w.shape[3] or w.shape[2] < 1:
        raise ShapeError(f"{op}: weight axes 2 and 3 must be an equal kernel size >= 1, got {w.shape}")
    if stride < 1:
        raise ValueError(f"{op}: stride must be >= 1, got {stride}")
    if x.shape[1] != w.shape[cin_axis]:
        raise ShapeError(
            f"{op}: input axis 1 (channels) has size {x.shape[1]}, "
            f"weight axis {cin_axis} expects {w.shape[cin_axis]}"
        )
    cout = w.shape[1 - cin_axis]
    if b.shape != (cout,):
        raise ShapeError(f"{op}: bias axis 0 has shape {b.shape}, expected ({cout},)")


def _conv_shift(xp: np.ndarray, w: np.ndarray):
    """Stride-1 valid cross-correlation on a padded input via flat index shifts.

    One matmul of all taps against the flattened input, then k*k shifted
    adds. Returns the output and the pieces needed by the backward pass.
    """
    n, c, hp, wp = xp.shape
    f, _, k, _ = w.shape
    ho, wo = hp - k + 1, wp - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp} (axes 2, 3)")
    p = hp * wp
    span = (ho - 1) * wp + wo
    offsets = [di * wp + dj for di in range(k) for dj in range(k)]
    xf = xp.reshape(n, c, p)
    wst = w.transpose(2, 3, 0, 1).reshape(k * k * f, c)
    y = np.matmul(wst, xf).reshape(n, k * k, f, p)
    acc = y[:, 0, :, offsets[0] : offsets[0] + span].copy()
    for t in range(1, k * k):
        acc += y[:, t, :, offsets[t] : offsets[t] + span]
    full = np.zeros((n, f, ho * wp), dtype=xp.dtype)
    full[:, :, :span] = acc
    out = full.reshape(n, f, ho, wp)[:, :, :, :wo]
    return np.ascontiguousarray(out), (xf, wst, offsets, span, ho, wo, hp, wp)


def _conv_shift_backward(g: np.ndarray, ctx, k: int, need_x: bool):
    xf, wst, offsets, span, ho, wo, hp, wp = ctx
    n, f = g.shape[:2]
    c = xf.shape[1]
    gfull = np.zeros((n, f, ho, wp), dtype=g.dtype)
    gfull[:, :, :, :wo] = g
    gflat = gfull.reshape(n, f, ho * wp)[:, :, :span]
    stacked = np.zeros((n, k * k, f, hp * wp), dtype=g.dtype)
    for t, off in enumerate(offsets):
        stacked[:, t, :, off : off + span] = gflat
    stacked = stacked.reshape(n, k * k * f, hp * wp)
    gwst = np.matmul(stacked, xf.transpose(0, 2, 1)).sum(axis=0)
    gw = gwst.reshape(k, k, f, c).transpose(2, 3, 0, 1)
    gx = np.matmul(wst.T, stacked).reshape(n, c, hp, wp) if need_x else None
    return gx, gw


def _tap_slices(k: int, stride: int, ho: int, wo: int):
    for di in range(k):
        for dj in range(k):
            yield (
                slice(None),
                slice(None),
                slice(di, di + (ho - 1) * stride + 1, stride),
                slice(dj, dj + (wo - 1) * stride + 1, stride),
            )


def _conv_gather(xp: np.ndarray, w: np.ndarray, stride: int):
    """Strided valid cross-correlation via explicit patch gathering (im2col)."""
    n, c, hp, wp = xp.shape
    f, _, k, _ = w.shape
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} larger than padded input {hp}x{wp} (axes 2, 3)")
    cols = np.empty((n, k * k, c, ho, wo), dtype=xp.dtype)
    for t, sl in enumerate(_tap_slices(k, stride, ho, wo)):
        cols[:, t] = xp[sl]
    cols = cols.reshape(n, k * k * c, ho * wo)
    wcat = w.transpose(0, 2, 3, 1).reshape(f, k * k * c)
    out = np.matmul(wcat, cols).reshape(n, f, ho, wo)
    return out, (cols, wcat, ho, wo)


def _conv_gather_backward(g, ctx, xp_shape, k, stride, need_x):
    cols, wcat, ho, wo = ctx
    n, f = g.shape[:2]
    c = xp_shape[1]
    gf = g.reshape(n, f, ho * wo)
    gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(axis=0)
    gw = gw.reshape(f, k, k, c).transpose(0, 3, 1, 2)
    gx = None
    if need_x:
        gcols = np.matmul(wcat.T, gf).reshape(n, k * k, c, ho, wo)
        gx = np.zeros(xp_shape, dtype=g.dtype)
        for t, sl in enumerate(_tap_slices(k, stride, ho, wo)):
            gx[sl] += gcols[:, t]
    return gx, gw


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """2-d cross-correlation of ``x: (N, C, H, W)`` with ``w: (F, C, k, k)`` plus bias."""
    _check_conv(x, w, b, stride, "conv2d", cin_axis=1)
    k = w.shape[2]
    h, wd = x.shape[2:]
    if padding == "same":
        pt, pb = _same_pads(h, k, stride)
        pl, pr = _same_pads(wd, k, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ValueError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    xp = x.data
    if pt or pb or pl or pr:
        n, c = x.shape[:2]
        xp = np.zeros((n, c, h + pt + pb, wd + pl + pr), dtype=x.dtype)
        xp[:, :, pt : pt + h, pl : pl + wd] = x.data
    if stride == 1:
        out, ctx = _conv_shift(xp, w.data)
    else:
        out, ctx = _conv_gather(xp, w.data, stride)
    out += b.data.reshape(1, -1, 1, 1)

    def bw(g):
        if stride == 1:
            gxp, gw = _conv_shift_backward(g, ctx, k, x.requires_grad)
        else:
            gxp, gw = _conv_gather_backward(g, ctx, xp.shape, k, stride, x.requires_grad)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, pt : pt + h, pl : pl + wd]
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(out, (x, w, b), bw)


def deconv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Transposed convolution of ``x: (N, C, H, W)`` with ``w: (C, F, k, k)``.

    ``"valid"`` gives the full output ``(H - 1) * stride + k`` and is the
    adjoint of a valid :func:`conv2d`. ``"same"`` crops to ``H * stride`` and is
    the adjoint of a same-padded :func:`conv2d` with the same stride whenever
    the conv input size is a multiple of the stride.
    """
    _check_conv(x, w, b, stride, "deconv2d", cin_axis=0)
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    hf, wf = (h - 1) * stride + k, (wd - 1) * stride + k
    if padding == "valid":
        crop = (0, hf, 0, wf)
    elif padding == "same":
        if k < stride:
            raise ValueError(f"deconv2d: 'same' needs kernel >= stride, got k={k}, stride={stride}")
        pt = (hf - h * stride) // 2
        pl = (wf - wd * stride) // 2
        crop = (pt, pt + h * stride, pl, pl + wd * stride)
    else:
        raise ValueError(f"deconv2d: padding must be 'same' or 'valid', got {padding!r}")
    wst = w.data.transpose(2, 3, 1, 0).reshape(k * k * f, c)
    xf = x.data.reshape(n, c, h * wd)
    y = np.matmul(wst, xf).reshape(n, k * k, f, h, wd)
    full = np.zeros((n, f, hf, wf), dtype=x.dtype)
    for t, sl in enumerate(_tap_slices(k, stride, h, wd)):
        full[sl] += y[:, t]
    r0, r1, c0, c1 = crop
    out = np.ascontiguousarray(full[:, :, r0:r1, c0:c1]) + b.data.reshape(1, -1, 1, 1)

    def bw(g):
        gfull = np.zeros((n, f, hf, wf), dtype=g.dtype)
        gfull[:, :, r0:r1, c0:c1] = g
        gathered = np.empty((n, k * k, f, h, wd), dtype=g.dtype)
        for t, sl in enumerate(_tap_slices(k, stride, h, wd)):
            gathered[:, t] = gfull[sl]
        gathered = gathered.reshape(n, k * k * f, h * wd)
        gwst = np.matmul(gathered, xf.transpose(0, 2, 1)).sum(axis=0)
        gw = gwst.reshape(k, k, f, c).transpose(3, 2, 0, 1)
        gx = np.matmul(wst.T, gathered).reshape(n, c, h, wd) if x.requires_grad else None
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(out, (x, w, b), bw)


# ---------------------------------------------------------------------------
# verification


class NonDeterministicError(RuntimeError):
    pass


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        value = value.data
    arr = np.asarray(value)
    if arr.size != 1:
        raise ValueError(f"function must be scalar-valued, got shape {arr.shape}")
    return float(arr.reshape(-1)[0])


def finite_diff_check(
    f: Callable[[], Tensor],
    p: Parameter,
    eps: float = 1e-5,
    *,
    indices: Iterable[int] | None = None,
    analytic: np.ndarray | None = None,
) -> float:
    """Max relative error between the analytic gradient and central differences.

    ``f`` takes no arguments and reads ``p.data`` when called. The error per
    entry is ``|analytic - fd| / (|fd| + 1e-12)``. ``indices`` restricts the
    check to selected flat entries; ``analytic`` overrides the tape gradient
    (used to confirm the check catches corrupted gradients).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = _scalar(f())
    if base != _scalar(f()):
        raise NonDeterministicError("two forward passes at the same point disagree")
    if analytic is None:
        with Tape() as tape:
            loss = f()
        (analytic,) = grad(loss, tape, [p])
    analytic = np.asarray(analytic).reshape(-1)
    flat = p.data.reshape(-1)
    if not np.shares_memory(flat, p.data):
        raise ValueError("parameter data must be contiguous")
    worst = 0.0
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + eps
        up = _scalar(f())
        flat[i] = orig - eps
        down = _scalar(f())
        flat[i] = orig
        fd = (up - down) / (2.0 * eps)
        err = abs(float(analytic[i]) - fd) / (abs(fd) + 1e-12)
        if not math.isfinite(err):
            return math.inf
        worst = max(worst, err)
    return worst
