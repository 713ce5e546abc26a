"""Reference attention paths and the quadratic LBLA oracle.

``softmax_attention`` / ``multi_head_attention`` are the classic dense
formulation.  ``lbla_oracle`` computes locality-biased linear attention
the slow, obvious way (the full T x T score matrix, built elementwise,
then row-normalized) and exists solely to validate the linearized path
in ``lbla.linear_attention``.  Multi-head plumbing is shared between all
mechanisms through a pluggable head-level core, so comparisons isolate
the attention math itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .linear_attention import (
    DENOM_EPS,
    CosineReweight,
    KernelKind,
    LblaDiagnostics,
    apply_kernel,
    build_reweight,
    lbla_forward,
)
from .numeric import check_matrix, softmax_rows

# A head-level attention callable: (q, k, v) each (T, d_k) -> (T, d_k).
HeadCore = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AttentionParams:
    """Projection weights and head count for one attention layer."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    heads: int

    def __post_init__(self):
        d = None
        for name in ("w_q", "w_k", "w_v", "w_o"):
            w = check_matrix(name, getattr(self, name))
            if w.shape[0] != w.shape[1]:
                raise ShapeError(f"{name} must be square, got {w.shape}")
            if d is None:
                d = w.shape[0]
            elif w.shape[0] != d:
                raise ShapeError(f"{name} is {w.shape}, expected ({d}, {d})")
            if not np.all(np.isfinite(w)):
                raise ConfigError(f"{name} contains non-finite values")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}")
        if d % self.heads != 0:
            raise ConfigError(
                f"model dim {d} not divisible by {self.heads} heads")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


class ProjectedTriple(NamedTuple):
    """Query/key/value projections sharing a row count."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray


def project_qkv(x: np.ndarray, params: AttentionParams) -> ProjectedTriple:
    """Full-width projections Q = X Wq, K = X Wk, V = X Wv."""
    x = check_matrix("x", x)
    if x.shape[1] != params.d_model:
        raise ShapeError(
            f"input cols {x.shape} != model dim {params.d_model}")
    return ProjectedTriple(x @ params.w_q, x @ params.w_k, x @ params.w_v)


def softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                      scale: float) -> np.ndarray:
    """Dense softmax attention: softmax(scale * Q K^T) V.

    Quadratic in the row count; every output row is a convex
    combination of v's rows.
    """
    q = check_matrix("q", q)
    k = check_matrix("k", k)
    v = check_matrix("v", v)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q cols {q.shape} != k cols {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"k rows {k.shape} != v rows {v.shape}")
    scores = q @ k.T
    np.multiply(scores, scale, out=scores)
    return softmax_rows(scores) @ v


def multi_head_attention(x: np.ndarray, params: AttentionParams,
                         core: HeadCore) -> np.ndarray:
    """Slice projections per head, run ``core`` on each, concat, project out.

    The head-level core is pluggable (softmax, linearized LBLA, or the
    quadratic oracle) so every mechanism shares this plumbing.
    """
    q, k, v = project_qkv(x, params)
    d_k = params.d_k
    head_outs = []
    for h in range(params.heads):
        cols = slice(h * d_k, (h + 1) * d_k)
        head_outs.append(core(q[:, cols], k[:, cols], v[:, cols]))
    return np.concatenate(head_outs, axis=1) @ params.w_o


def lbla_proximity_matrix(q: np.ndarray, k: np.ndarray, kernel: KernelKind,
                          reweight: CosineReweight | None = None) -> np.ndarray:
    """Explicit T x T score matrix psi(Q_i).psi(K_j) * w(i - j).

    The locality weight is evaluated directly as cos(pi (i-j) / (2 M)),
    independent of the cos/sin factor decomposition, which keeps this
    path an honest cross-check of the linearized one.
    """
    q = check_matrix("q", q)
    k = check_matrix("k", k)
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"q cols {q.shape} != k cols {k.shape}")
    if q.shape[0] != k.shape[0]:
        raise ShapeError(f"q rows {q.shape} != k rows {k.shape}")
    scores = apply_kernel(q, kernel) @ apply_kernel(k, kernel).T
    if reweight is not None:
        t = q.shape[0]
        if reweight.length != t:
            raise ShapeError(
                f"reweight length {reweight.length} != sequence length {t}")
        idx = np.arange(t)
        omega = np.cos(np.pi * (idx[:, None] - idx[None, :])
                       / (2.0 * reweight.horizon))
        scores = scores * omega
    return scores


def lbla_oracle(q: np.ndarray, k: np.ndarray, v: np.ndarray,
                kernel: KernelKind, reweight: CosineReweight | None = None
                ) -> np.ndarray:
    """Quadratic-by-construction LBLA reference.

    Builds the full score matrix, normalizes each row by its sum plus
    the shared epsilon, and multiplies by v.  Validation target for
    ``lbla_forward``; not for production sequence lengths.
    """
    v = check_matrix("v", v)
    scores = lbla_proximity_matrix(q, k, kernel, reweight)
    if scores.shape[1] != v.shape[0]:
        raise ShapeError(f"score cols {scores.shape} != v rows {v.shape}")
    denom = scores.sum(axis=1) + DENOM_EPS
    return (scores @ v) / denom[:, None]


@dataclass(frozen=True)
class AttentionKind:
    """Which attention mechanism a layer runs.

    ``kernel`` None means dense softmax attention; otherwise the
    linearized kernel path, optionally with the cosine locality
    re-weighting.
    """

    kernel: KernelKind | None = None
    use_reweight: bool = True

    @property
    def is_softmax(self) -> bool:
        return self.kernel is None

    def label(self) -> str:
        if self.is_softmax:
            return "softmax"
        return f"lbla-{self.kernel.value}"


_KIND_KERNELS = {
    "softmax": None,
    "lbla-relu": KernelKind.RELU,
    "lbla-exp": KernelKind.EXPONENTIAL,
    "lbla-sigmoid": KernelKind.SIGMOID,
    "lbla-identity": KernelKind.IDENTITY,
}


def parse_kind(name: str, use_reweight: bool = True) -> AttentionKind:
    """Map a CLI/config label (softmax, lbla-relu, ...) to an AttentionKind."""
    key = name.strip().lower()
    if key not in _KIND_KERNELS:
        raise ConfigError(
            f"unknown attention kind {name!r}; expected one of "
            f"{', '.join(sorted(_KIND_KERNELS))}")
    kernel = _KIND_KERNELS[key]
    if kernel is None:
        return AttentionKind(kernel=None, use_reweight=False)
    return AttentionKind(kernel=kernel, use_reweight=use_reweight)


def make_head_core(kind: AttentionKind, reweight_horizon: int = 0,
                   use_oracle: bool = False,
                   diagnostics: LblaDiagnostics | None = None) -> HeadCore:
    """Build the head-level callable for an attention kind.

    ``reweight_horizon`` 0 means the horizon tracks each sequence's
    length; a positive value is used as-is (and must be >= T).
    ``use_oracle`` swaps the linearized LBLA path for the quadratic
    reference, which must not change results beyond float noise.
    """
    if kind.is_softmax:
        def softmax_core(q, k, v):
            return softmax_attention(q, k, v, 1.0 / np.sqrt(q.shape[1]))
        return softmax_core

    kernel = kind.kernel

    def lbla_core(q, k, v):
        rw = None
        if kind.use_reweight:
            t = q.shape[0]
            m = reweight_horizon if reweight_horizon > 0 else t
            rw = build_reweight(t, m)
        if use_oracle:
            return lbla_oracle(q, k, v, kernel, rw)
        return lbla_forward(q, k, v, kernel, rw, diagnostics)

    return lbla_core
