"""Conformer encoder block with a pluggable attention mechanism.

Block layout (inference mode, no dropout):

    x -> FFN (half-step residual)
      -> attention (+ residual)        # softmax or linearized-kernel
      -> convolution module (+ residual)
      -> FFN (half-step residual)
      -> final layernorm

Each submodule normalizes its input before its transform (pre-norm, a
convention here since the block diagram only draws the final post
layernorm).  The convolution module is pointwise (d -> 2d), gated
linear unit, depthwise conv, batchnorm with stored running statistics,
swish, pointwise (d -> d).  Position embeddings and the subsampling
frontend are out of scope: the encoder consumes ready-made (T, d)
features, and with the locality re-weighting the attention itself
carries positional information.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    AttentionKind,
    AttentionParams,
    HeadCore,
    make_head_core,
    multi_head_attention,
)
from .errors import ConfigError, ShapeError
from .linear_attention import KernelKind
from .numeric import (
    SeededRng,
    check_vector,
    depthwise_conv1d,
    layernorm,
    seeded_init,
    sigmoid,
    swish,
)

LN_EPS = 1e-5
BN_EPS = 1e-5


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class FeedForwardParams:
    w_in: np.ndarray   # (d, d_ff)
    b_in: np.ndarray   # (d_ff,)
    w_out: np.ndarray  # (d_ff, d)
    b_out: np.ndarray  # (d,)


@dataclass(frozen=True)
class BatchNormParams:
    """Inference-mode batchnorm using stored running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.running_var) <= 0):
            raise ConfigError("batchnorm running_var entries must be > 0")


@dataclass(frozen=True)
class ConvModuleParams:
    pw1_w: np.ndarray       # (d, 2d) pointwise expansion feeding the GLU
    pw1_b: np.ndarray       # (2d,)
    dw_kernels: np.ndarray  # (d, conv_kernel) depthwise filters
    bn: BatchNormParams
    pw2_w: np.ndarray       # (d, d)
    pw2_b: np.ndarray       # (d,)


@dataclass(frozen=True)
class ConformerBlockParams:
    norm_ffn1: LayerNormParams
    ffn1: FeedForwardParams
    norm_attn: LayerNormParams
    attn: AttentionParams
    norm_conv: LayerNormParams
    conv: ConvModuleParams
    norm_ffn2: LayerNormParams
    ffn2: FeedForwardParams
    norm_final: LayerNormParams


@dataclass(frozen=True)
class ModelConfig:
    """Encoder hyperparameters. Defaults are the reference 12x256 setup."""

    num_layers: int = 12
    d_model: int = 256
    d_ff: int = 2048
    heads: int = 4
    conv_kernel: int = 31
    attn_kind: AttentionKind = field(
        default_factory=lambda: AttentionKind(KernelKind.SIGMOID, True))
    reweight_horizon: int = 0  # 0: horizon tracks each sequence's length

    def __post_init__(self):
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.d_model < 1 or self.d_ff < 1:
            raise ConfigError(
                f"dims must be >= 1, got d_model={self.d_model} d_ff={self.d_ff}")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigError(
                f"conv_kernel must be odd and >= 1, got {self.conv_kernel}")
        if self.reweight_horizon < 0:
            raise ConfigError(
                f"reweight_horizon must be >= 0, got {self.reweight_horizon}")


def glu(x: np.ndarray) -> np.ndarray:
    """Gated linear unit over column halves: first half * sigmoid(second half)."""
    cols = x.shape[1]
    if cols % 2 != 0:
        raise ShapeError(f"glu needs an even column count, got {cols}")
    half = cols // 2
    return x[:, :half] * sigmoid(x[:, half:])


def batchnorm_inference(x: np.ndarray, bn: BatchNormParams,
                        eps: float = BN_EPS) -> np.ndarray:
    mean = check_vector("running_mean", bn.running_mean, x.shape[1])
    var = check_vector("running_var", bn.running_var, x.shape[1])
    return (x - mean) / np.sqrt(var + eps) * bn.gamma + bn.beta


def ffn_forward(x: np.ndarray, params: FeedForwardParams,
                norm: LayerNormParams, half_step: bool = True) -> np.ndarray:
    """x + s * FFN(pre-norm(x)) with s = 0.5 when half_step, else 1.0.

    FFN is linear -> swish -> linear.
    """
    h = layernorm(x, norm.gamma, norm.beta, LN_EPS)
    h = swish(h @ params.w_in + params.b_in)
    h = h @ params.w_out + params.b_out
    return x + (0.5 if half_step else 1.0) * h


def conv_module_forward(x: np.ndarray, params: ConvModuleParams,
                        norm: LayerNormParams) -> np.ndarray:
    """x + Conv(pre-norm(x)).

    Conv = pointwise (d -> 2d) -> GLU -> depthwise -> batchnorm -> swish
    -> pointwise (d -> d); output keeps x's shape.
    """
    h = layernorm(x, norm.gamma, norm.beta, LN_EPS)
    h = h @ params.pw1_w + params.pw1_b
    h = glu(h)
    h = depthwise_conv1d(h, params.dw_kernels)
    h = batchnorm_inference(h, params.bn)
    h = swish(h)
    h = h @ params.pw2_w + params.pw2_b
    return x + h


def block_forward(x: np.ndarray, params: ConformerBlockParams,
                  cfg: ModelConfig,
                  attention_core: HeadCore | None = None) -> np.ndarray:
    """One encoder block; shape (T, d_model) preserved.

    ``attention_core`` overrides the core built from cfg.attn_kind
    (used to swap in the quadratic oracle for equivalence testing).
    """
    if x.shape[1] != cfg.d_model:
        raise ShapeError(f"input cols {x.shape} != d_model {cfg.d_model}")
    core = attention_core if attention_core is not None else make_head_core(
        cfg.attn_kind, cfg.reweight_horizon)
    x = ffn_forward(x, params.ffn1, params.norm_ffn1, half_step=True)
    h = layernorm(x, params.norm_attn.gamma, params.norm_attn.beta, LN_EPS)
    x = x + multi_head_attention(h, params.attn, core)
    x = conv_module_forward(x, params.conv, params.norm_conv)
    x = ffn_forward(x, params.ffn2, params.norm_ffn2, half_step=True)
    return layernorm(x, params.norm_final.gamma, params.norm_final.beta, LN_EPS)


def encoder_forward(x: np.ndarray, blocks: list[ConformerBlockParams],
                    cfg: ModelConfig,
                    attention_core: HeadCore | None = None) -> np.ndarray:
    """Sequential block application; zero blocks is the identity."""
    for params in blocks:
        x = block_forward(x, params, cfg, attention_core)
    return x


def init_layernorm(d: int) -> LayerNormParams:
    return LayerNormParams(gamma=np.ones(d), beta=np.zeros(d))


def init_ffn(cfg: ModelConfig, rng: SeededRng) -> FeedForwardParams:
    d, d_ff = cfg.d_model, cfg.d_ff
    return FeedForwardParams(
        w_in=seeded_init(rng, d, d_ff, d), b_in=np.zeros(d_ff),
        w_out=seeded_init(rng, d_ff, d, d_ff), b_out=np.zeros(d))


def init_attention(cfg: ModelConfig, rng: SeededRng) -> AttentionParams:
    d = cfg.d_model
    return AttentionParams(
        w_q=seeded_init(rng, d, d, d), w_k=seeded_init(rng, d, d, d),
        w_v=seeded_init(rng, d, d, d), w_o=seeded_init(rng, d, d, d),
        heads=cfg.heads)


def init_conv(cfg: ModelConfig, rng: SeededRng) -> ConvModuleParams:
    d, k = cfg.d_model, cfg.conv_kernel
    return ConvModuleParams(
        pw1_w=seeded_init(rng, d, 2 * d, d), pw1_b=np.zeros(2 * d),
        dw_kernels=seeded_init(rng, d, k, k),
        bn=BatchNormParams(gamma=np.ones(d), beta=np.zeros(d),
                           running_mean=np.zeros(d), running_var=np.ones(d)),
        pw2_w=seeded_init(rng, d, d, d), pw2_b=np.zeros(d))


def init_block_params(cfg: ModelConfig, rng: SeededRng) -> ConformerBlockParams:
    d = cfg.d_model
    return ConformerBlockParams(
        norm_ffn1=init_layernorm(d), ffn1=init_ffn(cfg, rng),
        norm_attn=init_layernorm(d), attn=init_attention(cfg, rng),
        norm_conv=init_layernorm(d), conv=init_conv(cfg, rng),
        norm_ffn2=init_layernorm(d), ffn2=init_ffn(cfg, rng),
        norm_final=init_layernorm(d))


def init_encoder_params(cfg: ModelConfig,
                        rng: SeededRng) -> list[ConformerBlockParams]:
    return [init_block_params(cfg, rng) for _ in range(cfg.num_layers)]


def with_attn_kind(cfg: ModelConfig, kind: AttentionKind) -> ModelConfig:
    """Same config, different attention mechanism (weights stay reusable)."""
    return replace(cfg, attn_kind=kind)
