"""Numeric primitives with operation counting and hand-derived backwards.

All tensors are float64 NumPy arrays.  Forward kernels optionally take an
``OpCounter`` and charge it with the scalar operations they perform:

* matmul of (m, k) @ (k, p): m*p*k multiplies, m*p*(k-1) adds;
* row softmax over (r, c): r*c exponentials and r*c divides (booked
  together as ``exp_div``), r*(c-1) adds; the max-subtraction used for
  numerical stability is bookkeeping, not counted;
* layer norm over rows of width d: 3d multiplies, 4d - 2 adds, and 4
  ``exp_div`` (divide, sqrt treated as one each, plus the two mean
  divides) per row;
* GELU: one ``exp_div`` per element;
* bias/residual adds: one add per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import BadTarget, MissingCache, ShapeMismatch

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class OpCounter:
    """Tally of scalar operations, split by kind."""

    mul: int = 0
    add: int = 0
    exp_div: int = 0

    @property
    def flops(self) -> int:
        return self.mul + self.add + self.exp_div

    def merge(self, other: "OpCounter") -> None:
        self.mul += other.mul
        self.add += other.add
        self.exp_div += other.exp_div

    def copy(self) -> "OpCounter":
        return OpCounter(self.mul, self.add, self.exp_div)

    def as_dict(self) -> dict:
        return {"mul": self.mul, "add": self.add, "exp_div": self.exp_div}


def _as_2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a 2-d array, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray,
           counter: OpCounter | None = None) -> np.ndarray:
    a = _as_2d(a)
    b = _as_2d(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    if counter is not None:
        m, k = a.shape
        p = b.shape[1]
        counter.mul += m * p * k
        counter.add += m * p * (k - 1)
    return a @ b


def matmul_bwd(d_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Gradients of ``a @ b`` given the upstream gradient."""
    d_out = _as_2d(d_out)
    return d_out @ _as_2d(b).T, _as_2d(a).T @ d_out


def add_bias(x: np.ndarray, bias: np.ndarray,
             counter: OpCounter | None = None) -> np.ndarray:
    x = _as_2d(x)
    if bias.shape != (x.shape[1],):
        raise ShapeMismatch("bias length must match the last axis")
    if counter is not None:
        counter.add += x.size
    return x + bias


def residual_add(x: np.ndarray, y: np.ndarray,
                 counter: OpCounter | None = None) -> np.ndarray:
    if x.shape != y.shape:
        raise ShapeMismatch("residual operands must share a shape")
    if counter is not None:
        counter.add += x.size
    return x + y


# ---------------------------------------------------------------------------
# layer norm

@dataclass
class LayerNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray  # (rows, 1)
    gain: np.ndarray


def layer_norm_fwd(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                   eps: float = 1e-6,
                   counter: OpCounter | None = None):
    """Row-wise layer norm; returns (y, cache)."""
    x = _as_2d(x)
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch("gain/bias length must match the row width")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    y = x_hat * gain + bias
    if counter is not None:
        rows = x.shape[0]
        counter.mul += rows * 3 * d          # centring square, scale, gain
        counter.add += rows * (4 * d - 2)    # two sums, centre, bias
        counter.exp_div += rows * 4          # two mean divides, sqrt, recip
    return y, LayerNormCache(x_hat, inv_std, gain.astype(np.float64))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
               eps: float = 1e-6,
               counter: OpCounter | None = None) -> np.ndarray:
    y, _ = layer_norm_fwd(x, gain, bias, eps, counter)
    return y


def layer_norm_bwd(d_out: np.ndarray, cache: LayerNormCache | None):
    """Returns (dx, d_gain, d_bias)."""
    if cache is None:
        raise MissingCache("layer_norm_bwd needs the forward cache")
    d_out = _as_2d(d_out)
    x_hat = cache.x_hat
    d_gain = (d_out * x_hat).sum(axis=0)
    d_bias = d_out.sum(axis=0)
    d_hat = d_out * cache.gain
    # dx = (d_hat - mean(d_hat) - x_hat * mean(d_hat * x_hat)) / std
    m1 = d_hat.mean(axis=1, keepdims=True)
    m2 = (d_hat * x_hat).mean(axis=1, keepdims=True)
    dx = (d_hat - m1 - x_hat * m2) * cache.inv_std
    return dx, d_gain, d_bias


# ---------------------------------------------------------------------------
# GELU (exact, via the normal CDF)

def gelu(x: np.ndarray, counter: OpCounter | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if counter is not None:
        counter.exp_div += x.size
    return x * ndtr(x)


def gelu_bwd(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return d_out * (ndtr(x) + x * pdf)


# ---------------------------------------------------------------------------
# softmax

def softmax_rows(x: np.ndarray,
                 counter: OpCounter | None = None) -> np.ndarray:
    """Numerically stable row softmax."""
    x = _as_2d(x)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    if counter is not None:
        rows, cols = x.shape
        counter.exp_div += 2 * rows * cols   # exp then divide, per entry
        counter.add += rows * (cols - 1)     # denominator sum
    return out


def softmax_rows_bwd(d_out: np.ndarray, softmax_out: np.ndarray) -> np.ndarray:
    s = _as_2d(softmax_out)
    d_out = _as_2d(d_out)
    dot = (d_out * s).sum(axis=1, keepdims=True)
    return s * (d_out - dot)


# ---------------------------------------------------------------------------
# loss

def cross_entropy(logits: np.ndarray, target: int):
    """Softmax cross entropy for one sample; returns (loss, d_logits)."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    k = logits.shape[0]
    if not 0 <= int(target) < k:
        raise BadTarget(f"target {target} outside [0, {k})")
    shifted = logits - logits.max()
    log_z = np.log(np.exp(shifted).sum())
    log_probs = shifted - log_z
    loss = -float(log_probs[int(target)])
    grad = np.exp(log_probs)
    grad[int(target)] -= 1.0
    return loss, grad
