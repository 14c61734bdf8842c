"""A small reverse-mode automatic differentiation engine on top of numpy.

Each :class:`Tensor` records the op that produced it and a closure mapping
the output gradient to input gradients.  ``Tensor.backward`` walks the graph
once in reverse topological order and accumulates into leaf ``.grad`` arrays.

Only the operations the emotion classifier and the mel generator need are
provided.  Elementwise binary ops follow numpy broadcasting; gradients are
summed back to the operand shape.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_DEBUG = False


def set_debug(flag: bool) -> None:
    """Turn on finiteness checks after every op."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = "leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # -- backward ---------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf with ``requires_grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}") from None
    return a, b


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape),
                _unbroadcast(-g * out / bd, bd.shape))
    return _make(out, (a, b), backward, "div")


def power(x: Tensor, p: float) -> Tensor:
    xd = x.data
    return _make(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1),), "pow")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),), "abs")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    u = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)
    return _make(out, (x,), backward, "gelu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


_SG_TAPE: list | None = None
_SG_REPLAY = False


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; blocks all gradient flow to ``x``."""
    data = as_tensor(x).data
    if _SG_TAPE is not None:
        if _SG_REPLAY:
            data = _SG_TAPE.pop(0)
        else:
            _SG_TAPE.append(data.copy())
    return Tensor(data, op="stop_gradient")


@contextlib.contextmanager
def _held_stop_gradients(tape: list, replay: bool):
    global _SG_TAPE, _SG_REPLAY
    prev = _SG_TAPE, _SG_REPLAY
    _SG_TAPE, _SG_REPLAY = tape, replay
    try:
        yield
    finally:
        _SG_TAPE, _SG_REPLAY = prev


# -- reductions and shape ops ---------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axis=axes, keepdims=keepdims) * (1.0 / n)


def l1_norm(x: Tensor, axis=None) -> Tensor:
    return tsum(tabs(x), axis=axis)


def l2_norm(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    xd = x.data
    nrm = np.sqrt((xd * xd).sum(axis=axes, keepdims=True))
    out = nrm if keepdims else nrm.reshape([s for i, s in enumerate(xd.shape) if i not in axes])

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axes)
        return (gk * xd / nrm,)
    return _make(out, (x,), backward, "l2_norm")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, idx) -> Tensor:
    shape, dtype = x.shape, x.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)
    return _make(x.data[idx], (x,), backward, "getitem")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward, "concat")


def broadcast_to(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, old),), "broadcast")


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)
    return _make(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return _make(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm parameter shapes {gamma.shape}/{beta.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        red = tuple(range(xd.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        gh = g * gd
        dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta
    return _make(out, (x, gamma, beta), backward, "layer_norm")


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Channels-last 1-D convolution.

    x: (B, T, Cin), w: (K, Cin, Cout), b: (Cout,). Output (B, T_out, Cout) with
    T_out = (T + 2*padding - K)//stride + 1.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d shape mismatch: input {x.shape}, kernel {w.shape}")
    K, cin, cout = w.shape
    B, T, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (padding, padding), (0, 0))) if padding else x.data
    Tp = xp.shape[1]
    if Tp < K:
        raise ShapeError(f"conv1d input length {T} too short for kernel {K}")
    t_out = (Tp - K) // stride + 1
    # (B, T_out, K, Cin)
    idx = np.arange(t_out)[:, None] * stride + np.arange(K)[None, :]
    cols = xp[:, idx, :]
    wd = w.data
    wmat = wd.reshape(K * cin, cout)
    out = cols.reshape(B, t_out, K * cin) @ wmat
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gw = (cols.reshape(B * t_out, K * cin).T @ g.reshape(B * t_out, cout)).reshape(K, cin, cout)
        gcols = (g @ wmat.T).reshape(B, t_out, K, cin)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k:k + stride * (t_out - 1) + 1:stride, :] += gcols[:, :, k, :]
        gx = gxp[:, padding:padding + T, :] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))
    return _make(out, parents, backward, "conv1d")


def spectral_conv(x: Tensor, w_re: Tensor, w_im: Tensor, modes: int) -> Tensor:
    """Per-channel global convolution applied in the Fourier domain.

    The input (..., T, C) is real-FFT'd along time, the lowest ``modes``
    frequencies are multiplied by the complex weights ``w_re + i*w_im``
    (shape (modes, C)), all higher frequencies are zeroed, and the result is
    transformed back.
    """
    T = x.shape[-2]
    n_freq = T // 2 + 1
    if not 1 <= modes <= n_freq:
        raise ValueError(f"modes must be in [1, {n_freq}] for T={T}, got {modes}")
    if w_re.shape != (modes, x.shape[-1]) or w_im.shape != w_re.shape:
        raise ShapeError(f"spectral weights {w_re.shape}/{w_im.shape} vs modes={modes}, C={x.shape[-1]}")
    W = w_re.data + 1j * w_im.data
    X = np.fft.rfft(x.data, axis=-2)
    Y = np.zeros_like(X)
    Y[..., :modes, :] = X[..., :modes, :] * W
    out = np.fft.irfft(Y, n=T, axis=-2).astype(x.dtype, copy=False)
    # irfft discards the imaginary part of the DC and (even T) Nyquist bins
    c = np.full(modes, 2.0)
    c[0] = 1.0
    if T % 2 == 0 and modes == n_freq:
        c[-1] = 1.0

    def backward(g):
        G = np.fft.rfft(g, axis=-2)[..., :modes, :]
        gY = G * (c[:, None] / T)
        Xk = X[..., :modes, :]
        gW = np.conj(Xk) * gY
        red = tuple(range(gW.ndim - 2))
        gW = gW.sum(axis=red) if red else gW
        gW_re = gW.real.copy()
        gW_im = gW.imag.copy()
        gW_im[0] = 0.0
        if T % 2 == 0 and modes == n_freq:
            gW_im[-1] = 0.0
        Weff = W.copy()
        Weff.imag[0] = 0.0
        if T % 2 == 0 and modes == n_freq:
            Weff.imag[-1] = 0.0
        Z = np.zeros(X.shape, dtype=X.dtype)
        Z[..., :modes, :] = G * np.conj(Weff)
        gx = np.fft.irfft(Z, n=T, axis=-2)
        return (gx.astype(x.dtype, copy=False), gW_re.astype(w_re.dtype, copy=False),
                gW_im.astype(w_im.dtype, copy=False))
    return _make(out, (x, w_re, w_im), backward, "spectral_conv")


def normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Unit-L2 rows along ``axis``."""
    return x / l2_norm(x, axis=axis, keepdims=True)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Single-head scaled dot-product attention over (..., T, d) inputs."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


# -- numerical gradient check ---------------------------------------------
def grad_check(f: Callable[..., Tensor], x, h: float = 1e-4, max_coords: int | None = None,
               seed: int = 0) -> float:
    """Compare reverse-mode gradients with central differences.

    ``x`` is one tensor or a list of tensors; ``f`` is called with no
    arguments when ``x`` is a list (the closure reads the tensors) and with
    ``x`` otherwise.  Returns the max relative error with denominator
    ``max(|analytic|, |numeric|, 1e-8)``.  ``max_coords`` samples a random
    subset of coordinates per tensor.

    Outputs of ``stop_gradient`` are held at their unperturbed values while
    differencing, so the numeric side differentiates the same surrogate
    that the backward pass does.
    """
    single = isinstance(x, Tensor)
    xs: list[Tensor] = [x] if single else list(x)
    base_call = (lambda: f(x)) if single else f
    for t in xs:
        t.requires_grad = True
        t.grad = None
    tape: list = []
    with _held_stop_gradients(tape, replay=False):
        out = base_call()
    out.backward()

    def call():
        with _held_stop_gradients(list(tape), replay=True):
            return base_call()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = float(call().data)
            flat[i] = orig - h
            with no_grad():
                fm = float(call().data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = float(analytic.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
