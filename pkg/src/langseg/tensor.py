"""Dense-map operators with reverse-mode gradients.

Everything downstream (encoder, correlation, regularization blocks, loss)
is built from the handful of operations in this module. Each op computes
its forward result eagerly on numpy arrays and, when given a GradTape,
records a closure that propagates gradients back to its inputs.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPES = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class DenseMap:
    """A height x width x channels real array with an optional gradient slot."""

    __slots__ = ("values", "grad")

    def __init__(self, values: np.ndarray):
        values = np.asarray(values)
        if values.ndim != 3:
            raise ShapeError(f"DenseMap expects a (h, w, c) array, got shape {values.shape}")
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float32)
        self.values = values
        self.grad: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def precision(self) -> str:
        return "f32" if self.values.dtype == np.float32 else "f64"

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def validate_finite(self) -> "DenseMap":
        if not np.all(np.isfinite(self.values)):
            raise NumericError("DenseMap contains non-finite entries")
        return self

    def __repr__(self) -> str:
        return f"DenseMap({self.height}x{self.width}x{self.channels}, {self.precision})"


class Param:
    """A named trainable array (any shape) with a gradient slot."""

    __slots__ = ("name", "values", "grad")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.asarray(values)
        self.grad: np.ndarray | None = None

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def __repr__(self) -> str:
        return f"Param({self.name}, shape={self.values.shape})"


ArrayLike = Union[Param, np.ndarray]


def _values(a) -> np.ndarray:
    if isinstance(a, (Param, DenseMap)):
        return a.values
    return np.asarray(a)


class GradTape:
    """Ordered record of executed operations for one forward pass.

    Ops append backward closures during the forward pass; backward() replays
    them in reverse, accumulating into the .grad slots of every DenseMap and
    Param they touched. A tape must not be shared across concurrent forward
    passes.
    """

    def __init__(self):
        self._steps: list[Callable[[], None]] = []

    def record(self, backward: Callable[[], None]) -> None:
        self._steps.append(backward)

    def backward(self, output: DenseMap | None = None, seed: np.ndarray | None = None) -> None:
        """Run the reverse pass. If output/seed are given, seed output.grad first."""
        if output is not None:
            if seed is None:
                raise ValueError("seed gradient required when output is given")
            output.ensure_grad()
            output.grad += seed
        for step in reversed(self._steps):
            step()

    def __len__(self) -> int:
        return len(self._steps)


def _accumulate(target, delta: np.ndarray) -> None:
    if isinstance(target, (Param, DenseMap)):
        target.ensure_grad()
        target.grad += delta


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def conv_depthwise(x: DenseMap, kernels: ArrayLike, bias: ArrayLike,
                   tape: GradTape | None = None) -> DenseMap:
    """Per-channel k x k convolution with zero 'same' padding.

    kernels has shape (channels, k, k), bias shape (channels,). Channel c of
    the output depends only on channel c of the input.
    """
    kv = _values(kernels)
    bv = _values(bias)
    if kv.ndim != 3 or kv.shape[1] != kv.shape[2]:
        raise ShapeError(f"kernels must be (channels, k, k), got {kv.shape}")
    k = kv.shape[1]
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if kv.shape[0] != x.channels:
        raise ShapeError(f"kernel count {kv.shape[0]} != input channels {x.channels}")
    if bv.shape != (x.channels,):
        raise ShapeError(f"bias must be ({x.channels},), got {bv.shape}")
    pad = k // 2
    xp = np.pad(x.values, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (h, w, c, k, k)
    out = DenseMap(np.einsum("hwcij,cij->hwc", win, kv) + bv)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            _accumulate(kernels, np.einsum("hwc,hwcij->cij", g, win))
            _accumulate(bias, g.sum(axis=(0, 1)))
            gp = np.pad(g, ((pad, pad), (pad, pad), (0, 0)))
            gwin = sliding_window_view(gp, (k, k), axis=(0, 1))
            _accumulate(x, np.einsum("hwcij,cij->hwc", gwin, kv[:, ::-1, ::-1]))
        tape.record(backward)
    return out


def conv_depthwise_shared(x: DenseMap, kernel: ArrayLike, bias: ArrayLike,
                          tape: GradTape | None = None) -> DenseMap:
    """Depthwise convolution with a single (k, k) kernel and scalar bias shared
    by every channel. Sharing is what makes the spatial regularization blocks
    equivariant under channel permutations and independent of channel count."""
    kv = _values(kernel)
    bv = np.asarray(_values(bias))
    if kv.ndim != 2 or kv.shape[0] != kv.shape[1]:
        raise ShapeError(f"shared kernel must be (k, k), got {kv.shape}")
    k = kv.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if bv.ndim != 0:
        raise ShapeError(f"shared bias must be a scalar, got shape {bv.shape}")
    pad = k // 2
    xp = np.pad(x.values, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))
    out = DenseMap(np.einsum("hwcij,ij->hwc", win, kv) + bv)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            _accumulate(kernel, np.einsum("hwc,hwcij->ij", g, win))
            _accumulate(bias, np.asarray(g.sum()))
            gp = np.pad(g, ((pad, pad), (pad, pad), (0, 0)))
            gwin = sliding_window_view(gp, (k, k), axis=(0, 1))
            _accumulate(x, np.einsum("hwcij,ij->hwc", gwin, kv[::-1, ::-1]))
        tape.record(backward)
    return out


def conv_pointwise(x: DenseMap, weight: ArrayLike, bias: ArrayLike,
                   tape: GradTape | None = None) -> DenseMap:
    """1x1 convolution: per-pixel linear map across channels, (c_in, c_out)."""
    wv = _values(weight)
    bv = _values(bias)
    if wv.ndim != 2 or wv.shape[0] != x.channels:
        raise ShapeError(f"weight must be ({x.channels}, c_out), got {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise ShapeError(f"bias must be ({wv.shape[1]},), got {bv.shape}")
    out = DenseMap(x.values @ wv + bv)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            _accumulate(weight, np.einsum("hwc,hwd->cd", x.values, g))
            _accumulate(bias, g.sum(axis=(0, 1)))
            _accumulate(x, g @ wv.T)
        tape.record(backward)
    return out


def space_to_depth(x: DenseMap, block: int, tape: GradTape | None = None) -> DenseMap:
    """Rearrange non-overlapping block x block patches into channels."""
    h, w, c = x.values.shape
    if block < 1 or h % block or w % block:
        raise ShapeError(f"dims {h}x{w} not divisible by block {block}")
    hb, wb = h // block, w // block
    v = x.values.reshape(hb, block, wb, block, c)
    out = DenseMap(np.ascontiguousarray(v.transpose(0, 2, 1, 3, 4)).reshape(hb, wb, block * block * c))
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            gv = g.reshape(hb, wb, block, block, c).transpose(0, 2, 1, 3, 4)
            _accumulate(x, np.ascontiguousarray(gv).reshape(h, w, c))
        tape.record(backward)
    return out


def channel_max(x: DenseMap, tape: GradTape | None = None) -> DenseMap:
    """Max over the channel axis; output has channels=1.

    The subgradient is routed to the first channel attaining the max, so ties
    break deterministically toward the lowest index.
    """
    if x.channels < 1:
        raise ShapeError("channel_max requires at least one channel")
    out = DenseMap(x.values.max(axis=2, keepdims=True))
    if tape is not None:
        winner = x.values.argmax(axis=2)  # first max index
        def backward():
            g = out.grad
            if g is None:
                return
            dx = np.zeros_like(x.values)
            np.put_along_axis(dx, winner[..., None], g, axis=2)
            _accumulate(x, dx)
        tape.record(backward)
    return out


def relu(x: DenseMap, tape: GradTape | None = None) -> DenseMap:
    out = DenseMap(np.maximum(x.values, 0))
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            _accumulate(x, g * (x.values > 0))
        tape.record(backward)
    return out


def pointwise_add(x: DenseMap, y: DenseMap, tape: GradTape | None = None) -> DenseMap:
    """Elementwise add; either operand may have channels=1 and broadcast."""
    xs, ys = x.values.shape, y.values.shape
    if xs[:2] != ys[:2] or (xs[2] != ys[2] and 1 not in (xs[2], ys[2])):
        raise ShapeError(f"cannot add shapes {xs} and {ys}")
    out = DenseMap(x.values + y.values)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            gx = g.sum(axis=2, keepdims=True) if xs[2] == 1 and ys[2] != 1 else g
            gy = g.sum(axis=2, keepdims=True) if ys[2] == 1 and xs[2] != 1 else g
            _accumulate(x, gx)
            _accumulate(y, gy)
        tape.record(backward)
    return out


def scale(x: DenseMap, s: float, tape: GradTape | None = None) -> DenseMap:
    out = DenseMap(x.values * x.values.dtype.type(s))
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            _accumulate(x, g * x.values.dtype.type(s))
        tape.record(backward)
    return out


def _interp_axis(n: int, factor: int, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # align-corners=false source coordinates, edge-clamped
    src = (np.arange(n * factor, dtype=np.float64) + 0.5) / factor - 0.5
    lo = np.floor(src).astype(np.int64)
    frac = (src - lo).astype(dtype)
    i0 = np.clip(lo, 0, n - 1)
    i1 = np.clip(lo + 1, 0, n - 1)
    return i0, i1, frac


def bilinear_upsample(x: DenseMap, factor: int, tape: GradTape | None = None) -> DenseMap:
    """Bilinear upsampling by an integer factor (align-corners=false).

    Channels are interpolated independently, so the op commutes with any
    channel permutation.
    """
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    h, w, _ = x.values.shape
    dtype = x.values.dtype
    r0, r1, fr = _interp_axis(h, factor, dtype)
    c0, c1, fc = _interp_axis(w, factor, dtype)
    v = x.values
    top = v[np.ix_(r0, c0)] * (1 - fc)[None, :, None] + v[np.ix_(r0, c1)] * fc[None, :, None]
    bot = v[np.ix_(r1, c0)] * (1 - fc)[None, :, None] + v[np.ix_(r1, c1)] * fc[None, :, None]
    out = DenseMap(top * (1 - fr)[:, None, None] + bot * fr[:, None, None])
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dx = np.zeros_like(x.values)
            w00 = np.outer(1 - fr, 1 - fc)[..., None]
            w01 = np.outer(1 - fr, fc)[..., None]
            w10 = np.outer(fr, 1 - fc)[..., None]
            w11 = np.outer(fr, fc)[..., None]
            rr0, cc0 = r0[:, None], c0[None, :]
            rr1, cc1 = r1[:, None], c1[None, :]
            np.add.at(dx, (rr0, cc0), g * w00)
            np.add.at(dx, (rr0, cc1), g * w01)
            np.add.at(dx, (rr1, cc0), g * w10)
            np.add.at(dx, (rr1, cc1), g * w11)
            _accumulate(x, dx)
        tape.record(backward)
    return out


def l2_normalize(x: DenseMap, tape: GradTape | None = None, eps: float = 1e-12) -> DenseMap:
    """Normalize every pixel's channel vector to unit L2 norm."""
    v = x.values
    sq = (v * v).sum(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(sq + v.dtype.type(eps))
    out = DenseMap(v * inv)
    if tape is not None:
        def backward():
            g = out.grad
            if g is None:
                return
            dot = (g * v).sum(axis=2, keepdims=True)
            _accumulate(x, g * inv - v * (dot * inv ** 3))
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], float], params: Sequence[Param], eps: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    f() must run a full forward+backward pass, leaving analytic gradients in
    each param's .grad slot, and return the scalar loss. Returns the max over
    all parameter entries of |analytic - central| / max(1, |central|).
    Parameters should be f64; finite differences are unreliable in f32.
    """
    for p in params:
        p.zero_grad()
    base = float(f())
    if not np.isfinite(base):
        raise NumericError(f"grad_check: f() returned non-finite value {base}")
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            h = eps * max(1.0, abs(float(orig)))
            flat[idx] = orig + h
            for q in params:
                q.zero_grad()
            f_plus = float(f())
            flat[idx] = orig - h
            for q in params:
                q.zero_grad()
            f_minus = float(f())
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError("grad_check: perturbed evaluation is non-finite")
            central = (f_plus - f_minus) / (2 * h)
            err = abs(float(ga.ravel()[idx]) - central) / max(1.0, abs(central))
            worst = max(worst, err)
    # restore analytic grads for callers that inspect them afterwards
    for p, ga in zip(params, analytic):
        p.grad = ga
    return worst
