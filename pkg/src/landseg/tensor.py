"""Dense N×C×H×W tensor type, deterministic RNG, and the finite-difference
gradient checker that every differentiable operation is validated against.

Storage is float32 by default; verification code builds float64 tensors so
central differences are meaningful. Layout is always contiguous row-major:
element (n, c, h, w) lives at flat index ((n*C + c)*H + h)*W + w.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class Tensor:
    """Dense real array of rank 1..4 with N×C×H×W semantics for image data.

    Instances are treated as immutable once returned from an operation;
    kernels mutate only their private buffers before publication.
    """

    __slots__ = ("_data",)

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _ALLOWED_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if not (1 <= arr.ndim <= 4):
            raise ShapeError(f"tensor rank must be 1..4, got {arr.ndim}")
        self._data = np.ascontiguousarray(arr)

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape: Sequence[int], dtype=DEFAULT_DTYPE) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype))

    @staticmethod
    def full(shape: Sequence[int], value: float, dtype=DEFAULT_DTYPE) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype))

    @staticmethod
    def from_numpy(arr: np.ndarray) -> "Tensor":
        return Tensor(arr)

    # -- views ---------------------------------------------------------------

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def dtype(self):
        return self._data.dtype

    def astype(self, dtype) -> "Tensor":
        return Tensor(self._data.astype(dtype))

    def copy(self) -> "Tensor":
        return Tensor(self._data.copy())

    def item(self) -> float:
        return float(self._data.item())

    def tolist(self):
        return self._data.tolist()

    def all_finite(self) -> bool:
        return bool(np.isfinite(self._data).all())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    # -- operator sugar (same checked semantics as the module functions) -----

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else Tensor(self._data + other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else Tensor(self._data - other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return Tensor(a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return Tensor(a.data - b.data)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; `b` may be a tensor of equal shape or a scalar."""
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")
        return Tensor(a.data * b.data)
    return Tensor(a.data * b)


def scalar_mul(a: Tensor, s: float) -> Tensor:
    return Tensor(a.data * s)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    return Tensor(np.clip(a.data, lo, hi))


def _check_axes(a: Tensor, axes) -> tuple | None:
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    for ax in axes:
        if not (-a.ndim <= ax < a.ndim):
            raise ShapeError(f"axis {ax} invalid for rank-{a.ndim} tensor")
    return axes


def reduce_sum(a: Tensor, axes=None):
    """Sum over `axes`; reduced extents are removed. Full reduction -> float."""
    axes = _check_axes(a, axes)
    out = a.data.sum(axis=axes)
    return float(out) if np.ndim(out) == 0 else Tensor(out)


def reduce_mean(a: Tensor, axes=None):
    axes = _check_axes(a, axes)
    out = a.data.mean(axis=axes)
    return float(out) if np.ndim(out) == 0 else Tensor(out)


def reduce_max(a: Tensor, axes=None):
    axes = _check_axes(a, axes)
    out = a.data.max(axis=axes)
    return float(out) if np.ndim(out) == 0 else Tensor(out)


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps mod 2^64
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Seeded splitmix64 stream: identical seeds give identical draws on every
    platform. Never backed by the interpreter's default generator.

    The stream is counter-based (draw i is a pure function of seed and i), so
    bulk draws vectorize without changing the sequence.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    def next_u64(self, n: int | None = None):
        """Next raw 64-bit draw (or an array of the next n draws)."""
        k = 1 if n is None else int(n)
        if k < 0:
            raise ValueError("draw count must be non-negative")
        with np.errstate(over="ignore"):
            idx = np.arange(self._count + 1, self._count + k + 1, dtype=np.uint64)
            out = _mix64(self._seed + idx * _GAMMA)
        self._count += k
        return int(out[0]) if n is None else out

    def split(self) -> "Rng":
        """Derive an independent child stream (consumes one draw)."""
        return Rng(self.next_u64())

    def uniform(self, shape=None, lo: float = 0.0, hi: float = 1.0):
        """float64 draws in [lo, hi)."""
        if shape is None:
            u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
            return lo + (hi - lo) * u
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, shape):
        """Standard normal draws via Box-Muller (platform-stable)."""
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self.uniform((m,))  # (0, 1]: log is finite
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def permutation(self, n: int) -> list:
        idx = list(range(n))
        for i in range(n - 1, 0, -1):  # Fisher-Yates
            j = self.randbelow(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def shuffle(self, items: list) -> list:
        return [items[i] for i in self.permutation(len(items))]


def he_uniform(rng: Rng, shape: Sequence[int], fan_in: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """He-uniform weight init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    limit = np.sqrt(6.0 / max(1, fan_in))
    return rng.uniform(tuple(shape), -limit, limit).astype(dtype)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], tuple],
    x: Tensor,
    epsilon: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central differences.

    `f` maps a tensor to `(value, grad)` where `value` is a scalar and `grad`
    is the analytic gradient of `value` w.r.t. the input. Requires a float64
    input; returns max over elements of
    |analytic - central| / max(1, |central|).
    """
    if x.dtype != np.float64:
        raise ValueError("finite_diff_check requires a float64 tensor")
    _, grad = f(x)
    analytic = grad.data if isinstance(grad, Tensor) else np.asarray(grad)
    if analytic.shape != x.shape:
        raise ShapeError(f"gradient shape {analytic.shape} != input shape {x.shape}")

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + epsilon
        fp, _ = f(Tensor(bumped.reshape(x.shape)))
        bumped[i] = flat[i] - epsilon
        fm, _ = f(Tensor(bumped.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("non-finite intermediate during finite differencing")
        numeric[i] = (fp - fm) / (2.0 * epsilon)

    err = np.abs(analytic.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max())
