"""Dense 2-D float64 kernels with reproducibility guarantees.

All tensors in this package are two-dimensional row-major float64 arrays
("matrices" below); vectors are carried as 1xN matrices. The kernels are
pure functions and safe to call concurrently.

Reproducibility contract: `matmul` accumulates each output element
strictly left-to-right over the inner dimension, so results are
bit-identical to a naive triple loop on any machine; the remaining
kernels use fixed-shape numpy reductions, which are deterministic for a
given input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import DegenerateRowError, DimensionError

NEG_INF = float("-inf")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_matrix(x, name: str = "tensor") -> np.ndarray:
    """Validate and coerce to a 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with fixed left-to-right accumulation order.

    Equivalent bit-for-bit to `out[i,j] = sum_k a[i,k]*b[k,j]` computed as
    a sequential scalar loop over k. numpy's einsum preserves that order
    except on its single-output-column fast path, so 1-column right
    operands are zero-padded before the contraction.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} x {b.shape} do not chain")
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    if b.shape[1] == 1:
        padded = np.zeros((b.shape[0], 2), dtype=np.float64)
        padded[:, :1] = b
        return np.einsum("ik,kj->ij", a, padded)[:, :1].copy()
    return np.einsum("ik,kj->ij", a, b)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction; -inf entries map to exact 0.

    Raises DegenerateRowError for a row that is entirely -inf.
    """
    x = as_matrix(x, "x")
    row_max = np.max(x, axis=1, keepdims=True)
    if not np.all(row_max > NEG_INF):
        bad = int(np.argmin(row_max > NEG_INF))
        raise DegenerateRowError(
            f"row {bad} has no finite maximum (all -inf, or NaN present)")
    shifted = x - row_max
    # exp(-inf) is exactly 0.0, which keeps masked entries at zero mass
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-12) -> np.ndarray:
    """Per-row standardization followed by an elementwise affine map."""
    x = as_matrix(x, "x")
    gain = as_matrix(gain, "gain")
    bias = as_matrix(bias, "bias")
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise DimensionError(
            f"gain/bias must be 1x{x.shape[1]}, got {gain.shape} and {bias.shape}")
    mean = np.mean(x, axis=1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True)
    normed = centered / np.sqrt(var + eps)
    return normed * gain + bias


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows stay zero."""
    x = as_matrix(x, "x")
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, x / safe, 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) Gaussian error linear unit."""
    x = as_matrix(x, "x")
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """Derivative of `gelu` at x."""
    x = as_matrix(x, "x")
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class Parameter:
    """A named weight matrix with its gradient buffer and freeze state.

    frozen parameters are write-protected at the buffer level: their value
    stays bit-identical for the lifetime of the object, and they are never
    trainable.
    """

    name: str
    value: np.ndarray
    trainable: bool = True
    frozen: bool = False
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(as_matrix(self.value, self.name))
        if self.frozen:
            self.trainable = False
            self.value.setflags(write=False)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def checksum(params) -> str:
    """SHA-256 over the little-endian bytes of the given parameters, in order."""
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode("utf-8"))
        h.update(np.ascontiguousarray(p.value, dtype="<f8").tobytes())
    return h.hexdigest()
