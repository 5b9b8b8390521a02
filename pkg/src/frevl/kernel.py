"""Deterministic dense numeric kernel.

Everything here is a pure function over numpy arrays. float32 is the working
precision for training and inference; gradient checking runs the same code in
float64 (operations follow the dtype of their inputs). Randomness goes through
RngState, a counter-based (Philox) state, so masks are reproducible
independent of call interleaving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import (
    DegenerateInputError,
    InvalidProbabilityError,
    OracleFailure,
    ShapeError,
    ZeroNormError,
)

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class RngState:
    """Counter-based RNG state. Identical (seed, counter) yields identical
    draw sequences across runs and platforms (Philox guarantee)."""

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.Generator(
            np.random.Philox(key=self.seed & 0xFFFFFFFFFFFFFFFF,
                             counter=self.counter & ((1 << 128) - 1))
        )

    def advance(self, n: int = 1) -> "RngState":
        return RngState(self.seed, self.counter + n)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF via erf."""
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx [x * Phi(x)] = Phi(x) + x * phi(x)."""
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return 0.5 * (1.0 + erf(x * _SQRT1_2)) + x * phi


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise (last axis) softmax with max subtraction for stability."""
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def ln_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5):
    """LayerNorm over the last axis (biased variance). Returns output and the
    (xhat, inv_std) cache needed by ln_backward."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return gain * xhat + bias, (xhat, inv)


def ln_backward(dy: np.ndarray, gain: np.ndarray, cache):
    """Gradients of LayerNorm. Gain/bias grads are summed over all leading
    axes (they are shared across rows)."""
    xhat, inv = cache
    sum_axes = tuple(range(dy.ndim - 1))
    dgain = np.sum(dy * xhat, axis=sum_axes)
    dbias = np.sum(dy, axis=sum_axes)
    dxhat = dy * gain
    m1 = np.mean(dxhat, axis=-1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    if x.shape[-1] < 2:
        raise DegenerateInputError(
            f"layer_norm: last dimension must be >= 2, got {x.shape[-1]}")
    y, _ = ln_forward(x, gain, bias, eps)
    return y


def l2_normalize(x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Normalize along the last axis. Near-zero vectors are rejected rather
    than silently returning garbage."""
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n <= tol):
        raise ZeroNormError(f"l2_normalize: vector norm <= {tol}")
    return x / n


def dropout_mask(shape, p: float, gen: np.random.Generator) -> np.ndarray:
    return (gen.random(shape) >= p)


def dropout_apply(x: np.ndarray, p: float, rng: RngState,
                  training: bool) -> np.ndarray:
    """Inverted dropout: zero with probability p, scale survivors by
    1/(1-p). Identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise InvalidProbabilityError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = dropout_mask(x.shape, p, rng.generator())
    return x * mask / (1.0 - p)


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function, coordinate by
    coordinate. Meant for float64 gradient checking."""
    if h <= 0:
        raise ValueError(f"finite_difference_gradient: h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailure(
                f"finite_difference_gradient: non-finite f at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h
