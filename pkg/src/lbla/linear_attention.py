"""Locality-biased linear attention (LBLA).

The mechanism has two ingredients:

* a non-negative elementwise feature map ``psi`` applied to queries and
  keys, so the score between positions i and j decomposes as
  ``psi(Q_i) . psi(K_j)`` and the value aggregation can be reassociated
  as ``psi(Q_i) (psi(K)^T V)``: only (d x d) intermediates, O(T d^2)
  arithmetic, never a T x T matrix;
* a cosine locality weight ``w(i - j) = cos(pi (i - j) / (2 M))`` that
  boosts nearby positions and vanishes at distance M.  The angle
  difference identity ``cos(a - b) = cos a cos b + sin a sin b`` splits
  it into two rank-1 position factors, so the re-weighted score
  ``psi(Q_i) . psi(K_j) w(i - j)`` stays linearizable: scale row i of
  psi(Q) by cos/sin factors, row j of psi(K) likewise, and run the same
  reassociated product once per factor pair.

Row sums of the score matrix normalize the output; a fixed epsilon
(DENOM_EPS) rescues rows whose scores vanish (ReLU can zero a row).
The quadratic reference that validates all of this lives in
``lbla.attention.lbla_oracle``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .numeric import check_matrix, sigmoid

# Added to every row-sum denominator, identically in the linearized and
# oracle paths so their outputs stay comparable.
DENOM_EPS = 1e-9


class KernelKind(Enum):
    """Feature map applied to queries and keys.

    RELU, EXPONENTIAL and SIGMOID map every real to a non-negative
    value; IDENTITY exists only for ablation and gives no sign
    guarantee.
    """

    RELU = "relu"
    EXPONENTIAL = "exp"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


NON_NEGATIVE_KERNELS = frozenset(
    {KernelKind.RELU, KernelKind.EXPONENTIAL, KernelKind.SIGMOID})


def apply_kernel(x: np.ndarray, kernel: KernelKind) -> np.ndarray:
    """Elementwise feature map. EXPONENTIAL expects inputs in [-20, 20]."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    if kernel is KernelKind.RELU:
        return np.maximum(x, 0.0)
    if kernel is KernelKind.EXPONENTIAL:
        return np.exp(x)
    if kernel is KernelKind.SIGMOID:
        return sigmoid(x)
    if kernel is KernelKind.IDENTITY:
        return x
    raise ConfigError(f"unknown kernel {kernel!r}")


def kernel_grad(x: np.ndarray, kernel: KernelKind) -> np.ndarray:
    """Elementwise derivative of the feature map. ReLU uses subgradient 0 at 0."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    if kernel is KernelKind.RELU:
        return (x > 0.0).astype(x.dtype)
    if kernel is KernelKind.EXPONENTIAL:
        return np.exp(x)
    if kernel is KernelKind.SIGMOID:
        s = sigmoid(x)
        return s * (1.0 - s)
    if kernel is KernelKind.IDENTITY:
        return np.ones_like(x)
    raise ConfigError(f"unknown kernel {kernel!r}")


def cosine_weight(i: int, j: int, m: int) -> float:
    """Locality weight cos(pi (i - j) / (2 m)): 1 at i == j, 0 at |i - j| == m."""
    return float(np.cos(np.pi * (i - j) / (2.0 * m)))


@dataclass(frozen=True)
class CosineReweight:
    """Per-position cos/sin factors realizing the locality weight.

    cos_factors[i] = cos(pi i / (2 horizon)) and likewise for sin, for
    i in 0..length-1, so
    ``cos_factors[i] cos_factors[j] + sin_factors[i] sin_factors[j]``
    reconstructs ``cosine_weight(i, j, horizon)`` for every pair.
    """

    length: int
    horizon: int
    cos_factors: np.ndarray
    sin_factors: np.ndarray


def build_reweight(t: int, m: int) -> CosineReweight:
    """Factor vectors for sequence length ``t`` and horizon ``m`` (m >= t)."""
    if t < 1:
        raise ConfigError(f"sequence length must be >= 1, got {t}")
    if m < t:
        raise ConfigError(
            f"reweight horizon {m} < sequence length {t}: weights would go negative")
    angles = np.pi * np.arange(t) / (2.0 * m)
    return CosineReweight(length=t, horizon=m,
                          cos_factors=np.cos(angles), sin_factors=np.sin(angles))


class LblaDecomposition(NamedTuple):
    """Position-scaled feature maps: row i of q_cos is psi(Q)[i] * cos_factors[i]."""

    q_cos: np.ndarray
    q_sin: np.ndarray
    k_cos: np.ndarray
    k_sin: np.ndarray


def decompose(q_feat: np.ndarray, k_feat: np.ndarray,
              rw: CosineReweight) -> LblaDecomposition:
    """Scale the rows of psi(Q), psi(K) by the cos/sin position factors."""
    if q_feat.shape[0] != rw.length:
        raise ShapeError(
            f"reweight length {rw.length} != sequence length {q_feat.shape[0]}")
    c = rw.cos_factors.astype(q_feat.dtype, copy=False)[:, None]
    s = rw.sin_factors.astype(q_feat.dtype, copy=False)[:, None]
    return LblaDecomposition(q_feat * c, q_feat * s, k_feat * c, k_feat * s)


@dataclass
class LblaDiagnostics:
    """Optional counters surfaced by lbla_forward.

    zero_denominator_rows counts output rows whose pre-epsilon score sum
    was exactly 0 (the epsilon rescues them; the row degenerates to ~0).
    """

    zero_denominator_rows: int = 0


def _check_qkv(q: np.ndarray, k: np.ndarray, v: np.ndarray
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    q = check_matrix("q", q)
    k = check_matrix("k", k)
    v = check_matrix("v", v)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q cols {q.shape} != k cols {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k rows {k.shape} != v rows {v.shape}")
    if q.shape[0] != k.shape[0]:
        raise ShapeError(f"q rows {q.shape} != k rows {k.shape}")
    return q, k, v


def lbla_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                 kernel: KernelKind, reweight: CosineReweight | None = None,
                 diagnostics: LblaDiagnostics | None = None) -> np.ndarray:
    """Linearized LBLA: O(T d^2) time, never materializes a T x T matrix.

    With ``reweight`` None this is plain kernelized linear attention.
    Output row i is
    ``sum_j psi(Q_i).psi(K_j) w(i-j) V_j / (sum_j psi(Q_i).psi(K_j) w(i-j) + eps)``,
    computed right-to-left so only (d x d) and (T x d) intermediates exist.
    """
    q, k, v = _check_qkv(q, k, v)
    q_feat = apply_kernel(q, kernel)
    k_feat = apply_kernel(k, kernel)
    if reweight is None:
        num = q_feat @ (k_feat.T @ v)          # (T, e) via (d, e)
        denom = q_feat @ k_feat.sum(axis=0)    # (T,)
    else:
        if q_feat.shape[0] != reweight.length:
            raise ShapeError(f"reweight length {reweight.length} != "
                             f"sequence length {q_feat.shape[0]}")
        # The position factors are scalars per row, so they can ride on
        # the v / ones side of each aggregate instead of on psi(Q) and
        # psi(K); same sums, fewer (T, d) temporaries.
        c = reweight.cos_factors.astype(q_feat.dtype, copy=False)
        s = reweight.sin_factors.astype(q_feat.dtype, copy=False)
        kv_cos = k_feat.T @ (v * c[:, None])   # (d, e)
        kv_sin = k_feat.T @ (v * s[:, None])
        num = (q_feat @ kv_cos) * c[:, None]
        num += (q_feat @ kv_sin) * s[:, None]
        denom = (q_feat @ (k_feat.T @ c)) * c  # (T,)
        denom += (q_feat @ (k_feat.T @ s)) * s
    if diagnostics is not None:
        diagnostics.zero_denominator_rows += int(np.count_nonzero(denom == 0.0))
    return num / (denom + DENOM_EPS)[:, None]


def lbla_backward(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                  kernel: KernelKind, reweight: CosineReweight | None,
                  upstream_grad: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of <upstream_grad, lbla_forward(...)> w.r.t. q, k, v.

    Same linear-time structure as the forward pass.  ReLU uses the
    subgradient 0 at 0.  IDENTITY inputs whose pre-epsilon denominator
    hits exactly 0 are rejected: cancellation there makes the quotient's
    derivative meaningless (non-negative kernels only reach 0 when the
    whole score row vanishes, which differentiates cleanly to 0).
    """
    q, k, v = _check_qkv(q, k, v)
    g = np.asarray(upstream_grad)
    t, e = q.shape[0], v.shape[1]
    if g.shape != (t, e):
        raise ShapeError(f"upstream_grad shape {g.shape} != output shape {(t, e)}")

    q_feat = apply_kernel(q, kernel)
    k_feat = apply_kernel(k, kernel)
    if reweight is None:
        ones = np.ones(t, dtype=q_feat.dtype)
        rw = CosineReweight(length=t, horizon=t,
                            cos_factors=ones, sin_factors=np.zeros_like(ones))
    else:
        rw = reweight
    qc, qs, kc, ks = decompose(q_feat, k_feat, rw)

    kv_cos = kc.T @ v            # (d, e)
    kv_sin = ks.T @ v
    ksum_cos = kc.sum(axis=0)    # (d,)
    ksum_sin = ks.sum(axis=0)
    num = qc @ kv_cos + qs @ kv_sin
    z = qc @ ksum_cos + qs @ ksum_sin
    if kernel is KernelKind.IDENTITY and np.any(z == 0.0):
        raise ValueError("identity kernel with an exactly-zero denominator row: "
                         "gradient is not defined there")
    denom = z + DENOM_EPS
    out = num / denom[:, None]

    g_over_d = g / denom[:, None]                    # dL/d num
    alpha = (g * out).sum(axis=1) / denom            # -dL/d z, per row

    d_qc = g_over_d @ kv_cos.T - alpha[:, None] * ksum_cos[None, :]
    d_qs = g_over_d @ kv_sin.T - alpha[:, None] * ksum_sin[None, :]
    c = rw.cos_factors.astype(q_feat.dtype, copy=False)[:, None]
    s = rw.sin_factors.astype(q_feat.dtype, copy=False)[:, None]
    d_q_feat = d_qc * c + d_qs * s

    d_kv_cos = qc.T @ g_over_d                       # (d, e)
    d_kv_sin = qs.T @ g_over_d
    d_ksum_cos = -(qc.T @ alpha)                     # (d,)
    d_ksum_sin = -(qs.T @ alpha)
    d_kc = v @ d_kv_cos.T + d_ksum_cos[None, :]
    d_ks = v @ d_kv_sin.T + d_ksum_sin[None, :]
    d_k_feat = d_kc * c + d_ks * s

    grad_q = d_q_feat * kernel_grad(q, kernel)
    grad_k = d_k_feat * kernel_grad(k, kernel)
    grad_v = kc @ d_kv_cos + ks @ d_kv_sin
    return grad_q, grad_k, grad_v
