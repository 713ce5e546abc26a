"""Dense numeric substrate.

Sequence data is represented throughout the package as a 2-D float
ndarray of shape (T, d): rows are time steps, columns are features.
The correctness path works in float64; the benchmark path may feed
float32 through the same functions.

Randomness comes from :class:`SeededRng`, a thin wrapper over numpy's
Philox counter-based bit generator, whose streams are identical for a
given seed on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


def check_matrix(name: str, x: np.ndarray) -> np.ndarray:
    """Validate that ``x`` is a non-empty 2-D array and return it."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {x.shape}")
    return x


def check_vector(name: str, v: np.ndarray, length: int) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != length:
        raise ShapeError(f"{name} must be a vector of length {length}, got shape {v.shape}")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape checking.

    Raises ShapeError naming both shapes when a.cols != b.rows.
    """
    a = check_matrix("a", a)
    b = check_matrix("b", b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic function.

    Evaluated as (tanh(x/2) + 1) / 2: overflow-free, saturates cleanly,
    and needs a single temporary (this sits on the benchmark hot path).
    """
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    out = np.tanh(x * 0.5)
    out += 1.0
    out *= 0.5
    return out


def swish(x: np.ndarray) -> np.ndarray:
    """x * sigmoid(x)."""
    return x * sigmoid(x)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for stability.

    Each output row is non-negative and sums to 1.
    """
    m = check_matrix("m", m)
    shifted = m - m.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
              eps: float = 1e-5) -> np.ndarray:
    """Per-row normalization to zero mean / unit variance, then gamma*(.)+beta."""
    x = check_matrix("x", x)
    gamma = check_vector("gamma", gamma, x.shape[1])
    beta = check_vector("beta", beta, x.shape[1])
    if eps <= 0:
        raise ConfigError(f"layernorm eps must be > 0, got {eps}")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def depthwise_conv1d(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Per-channel 1-D cross-correlation with same-length output.

    x:       (T, C) sequence
    kernels: (C, K) one length-K filter per channel, K odd

    The input is zero padded by (K - 1) / 2 on each side so the output
    keeps shape (T, C); each channel is convolved independently.
    """
    x = check_matrix("x", x)
    kernels = np.asarray(kernels)
    if kernels.ndim != 2 or kernels.shape[0] != x.shape[1]:
        raise ShapeError(
            f"kernels must be (channels={x.shape[1]}, K), got shape {kernels.shape}")
    ksize = kernels.shape[1]
    if ksize % 2 == 0:
        raise ConfigError(f"depthwise_conv1d kernel size must be odd, got {ksize}")
    t, c = x.shape
    pad = (ksize - 1) // 2
    padded = np.zeros((t + 2 * pad, c), dtype=x.dtype)
    padded[pad:pad + t] = x
    out = np.zeros_like(x)
    for u in range(ksize):
        # out[t, ch] += kernels[ch, u] * padded[t + u, ch]
        out += padded[u:u + t] * kernels[:, u]
    return out


class SeededRng:
    """Deterministic random source (Philox counter-based generator).

    The same seed produces the same draw sequence on every platform;
    drawing advances the internal counter, so an instance is single-owner.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, low: float, high: float, shape: tuple[int, ...]) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)


def seeded_init(rng: SeededRng, rows: int, cols: int, fan_in: int) -> np.ndarray:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], deterministic under seed."""
    if fan_in < 1:
        raise ConfigError(f"fan_in must be >= 1, got {fan_in}")
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, (rows, cols))
