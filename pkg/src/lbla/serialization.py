"""Model persistence.

Weight file (binary, versioned):

    bytes 0..7    magic  b"LBLACONF"
    bytes 8..11   format version, uint32 little-endian
    bytes 12..19  header length in bytes, uint64 little-endian
    header        UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape"}, ...]}
    payload       per tensor, in index order: raw float64 little-endian,
                  row-major, exactly prod(shape) values

Round trips are bit-exact.  Loading validates the header's tensor index
against the shapes its own config implies, so a tampered or mismatched
file fails with an error naming the first offending tensor and never
yields a partial model.

Config file (text): one ``key = value`` per line, ``#`` comments and
blank lines allowed.  Keys mirror ModelConfig (num_layers, d_model,
d_ff, heads, conv_kernel, attn_kind, use_reweight, reweight_horizon);
unknown or repeated keys are errors, missing keys take defaults.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .attention import AttentionParams, parse_kind
from .conformer import (
    BatchNormParams,
    ConformerBlockParams,
    ConvModuleParams,
    FeedForwardParams,
    LayerNormParams,
    ModelConfig,
)
from .errors import (
    ConfigError,
    WeightFileError,
    WeightShapeIndexError,
    WeightTruncationError,
    WeightVersionError,
)

MAGIC = b"LBLACONF"
FORMAT_VERSION = 1


def _block_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, d_ff, k = cfg.d_model, cfg.d_ff, cfg.conv_kernel
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for ffn in ("ffn1", "ffn2"):
        shapes += [(f"norm_{ffn}.gamma", (d,)), (f"norm_{ffn}.beta", (d,)),
                   (f"{ffn}.w_in", (d, d_ff)), (f"{ffn}.b_in", (d_ff,)),
                   (f"{ffn}.w_out", (d_ff, d)), (f"{ffn}.b_out", (d,))]
    shapes += [("norm_attn.gamma", (d,)), ("norm_attn.beta", (d,))]
    shapes += [(f"attn.{w}", (d, d)) for w in ("w_q", "w_k", "w_v", "w_o")]
    shapes += [("norm_conv.gamma", (d,)), ("norm_conv.beta", (d,)),
               ("conv.pw1_w", (d, 2 * d)), ("conv.pw1_b", (2 * d,)),
               ("conv.dw_kernels", (d, k)),
               ("conv.bn.gamma", (d,)), ("conv.bn.beta", (d,)),
               ("conv.bn.running_mean", (d,)), ("conv.bn.running_var", (d,)),
               ("conv.pw2_w", (d, d)), ("conv.pw2_b", (d,)),
               ("norm_final.gamma", (d,)), ("norm_final.beta", (d,))]
    return shapes


def tensor_index(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) index a config implies, in storage order."""
    index = []
    for i in range(cfg.num_layers):
        index += [(f"block{i:03d}.{name}", shape)
                  for name, shape in _block_shapes(cfg)]
    return index


def _flatten_block(params: ConformerBlockParams) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for ffn_name in ("ffn1", "ffn2"):
        norm: LayerNormParams = getattr(params, f"norm_{ffn_name}")
        ffn: FeedForwardParams = getattr(params, ffn_name)
        out[f"norm_{ffn_name}.gamma"] = norm.gamma
        out[f"norm_{ffn_name}.beta"] = norm.beta
        for field_name in ("w_in", "b_in", "w_out", "b_out"):
            out[f"{ffn_name}.{field_name}"] = getattr(ffn, field_name)
    out["norm_attn.gamma"] = params.norm_attn.gamma
    out["norm_attn.beta"] = params.norm_attn.beta
    for w in ("w_q", "w_k", "w_v", "w_o"):
        out[f"attn.{w}"] = getattr(params.attn, w)
    out["norm_conv.gamma"] = params.norm_conv.gamma
    out["norm_conv.beta"] = params.norm_conv.beta
    out["conv.pw1_w"] = params.conv.pw1_w
    out["conv.pw1_b"] = params.conv.pw1_b
    out["conv.dw_kernels"] = params.conv.dw_kernels
    out["conv.bn.gamma"] = params.conv.bn.gamma
    out["conv.bn.beta"] = params.conv.bn.beta
    out["conv.bn.running_mean"] = params.conv.bn.running_mean
    out["conv.bn.running_var"] = params.conv.bn.running_var
    out["conv.pw2_w"] = params.conv.pw2_w
    out["conv.pw2_b"] = params.conv.pw2_b
    out["norm_final.gamma"] = params.norm_final.gamma
    out["norm_final.beta"] = params.norm_final.beta
    return out


def _config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "num_layers": cfg.num_layers,
        "d_model": cfg.d_model,
        "d_ff": cfg.d_ff,
        "heads": cfg.heads,
        "conv_kernel": cfg.conv_kernel,
        "attn_kind": cfg.attn_kind.label(),
        "use_reweight": cfg.attn_kind.use_reweight,
        "reweight_horizon": cfg.reweight_horizon,
    }


def _config_from_dict(raw: dict) -> ModelConfig:
    try:
        kind = parse_kind(raw["attn_kind"], bool(raw["use_reweight"]))
        return ModelConfig(
            num_layers=int(raw["num_layers"]), d_model=int(raw["d_model"]),
            d_ff=int(raw["d_ff"]), heads=int(raw["heads"]),
            conv_kernel=int(raw["conv_kernel"]), attn_kind=kind,
            reweight_horizon=int(raw["reweight_horizon"]))
    except KeyError as exc:
        raise WeightFileError(f"weight header config missing key {exc}") from exc


def save_weights(path: str | Path, blocks: list[ConformerBlockParams],
                 cfg: ModelConfig) -> None:
    """Write config + all block tensors; load_weights inverts bit-exactly."""
    if len(blocks) != cfg.num_layers:
        raise ConfigError(
            f"config says {cfg.num_layers} layers but got {len(blocks)} blocks")
    named: dict[str, np.ndarray] = {}
    for i, params in enumerate(blocks):
        for name, tensor in _flatten_block(params).items():
            named[f"block{i:03d}.{name}"] = np.asarray(tensor, dtype=np.float64)
    index = tensor_index(cfg)
    for name, shape in index:
        if named[name].shape != shape:
            raise WeightShapeIndexError(
                f"tensor {name} has shape {named[name].shape}, "
                f"config implies {shape}")
    header = json.dumps({
        "config": _config_to_dict(cfg),
        "tensors": [{"name": n, "shape": list(s)} for n, s in index],
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name, _ in index:
            fh.write(np.ascontiguousarray(named[name]).astype("<f8").tobytes())


def load_weights(path: str | Path
                 ) -> tuple[list[ConformerBlockParams], ModelConfig]:
    """Read a weight file; raises (never returns a partial model) on damage."""
    blob = Path(path).read_bytes()
    fixed = len(MAGIC) + 4 + 8
    if len(blob) < fixed:
        raise WeightTruncationError(
            f"file is {len(blob)} bytes, shorter than the {fixed}-byte prefix")
    if blob[:len(MAGIC)] != MAGIC:
        raise WeightFileError("bad magic: not a weight file")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise WeightVersionError(
            f"format version {version}, this reader handles {FORMAT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC) + 4)
    if len(blob) < fixed + header_len:
        raise WeightTruncationError(
            f"header claims {header_len} bytes but file ends early")
    try:
        header = json.loads(blob[fixed:fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"unreadable header: {exc}") from exc
    cfg = _config_from_dict(header.get("config", {}))

    stored = [(entry["name"], tuple(entry["shape"]))
              for entry in header.get("tensors", [])]
    expected = tensor_index(cfg)
    if len(stored) != len(expected):
        raise WeightShapeIndexError(
            f"index lists {len(stored)} tensors, config implies {len(expected)}")
    for (got_name, got_shape), (want_name, want_shape) in zip(stored, expected):
        if got_name != want_name:
            raise WeightShapeIndexError(
                f"tensor {got_name}: config implies {want_name} here")
        if got_shape != want_shape:
            raise WeightShapeIndexError(
                f"tensor {got_name} has shape {got_shape}, "
                f"config implies {want_shape}")

    offset = fixed + header_len
    named: dict[str, np.ndarray] = {}
    for name, shape in expected:
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(blob):
            raise WeightTruncationError(
                f"file ends inside tensor {name} ({nbytes} bytes expected)")
        flat = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)),
                             offset=offset)
        named[name] = flat.reshape(shape).astype(np.float64, copy=True)
        offset += nbytes

    blocks = [_rebuild_block(named, f"block{i:03d}.", cfg)
              for i in range(cfg.num_layers)]
    return blocks, cfg


def _rebuild_block(named: dict[str, np.ndarray], prefix: str,
                   cfg: ModelConfig) -> ConformerBlockParams:
    def get(name):
        return named[prefix + name]

    def norm(name):
        return LayerNormParams(gamma=get(f"{name}.gamma"),
                               beta=get(f"{name}.beta"))

    def ffn(name):
        return FeedForwardParams(
            w_in=get(f"{name}.w_in"), b_in=get(f"{name}.b_in"),
            w_out=get(f"{name}.w_out"), b_out=get(f"{name}.b_out"))

    return ConformerBlockParams(
        norm_ffn1=norm("norm_ffn1"), ffn1=ffn("ffn1"),
        norm_attn=norm("norm_attn"),
        attn=AttentionParams(
            w_q=get("attn.w_q"), w_k=get("attn.w_k"),
            w_v=get("attn.w_v"), w_o=get("attn.w_o"), heads=cfg.heads),
        norm_conv=norm("norm_conv"),
        conv=ConvModuleParams(
            pw1_w=get("conv.pw1_w"), pw1_b=get("conv.pw1_b"),
            dw_kernels=get("conv.dw_kernels"),
            bn=BatchNormParams(
                gamma=get("conv.bn.gamma"), beta=get("conv.bn.beta"),
                running_mean=get("conv.bn.running_mean"),
                running_var=get("conv.bn.running_var")),
            pw2_w=get("conv.pw2_w"), pw2_b=get("conv.pw2_b")),
        norm_ffn2=norm("norm_ffn2"), ffn2=ffn("ffn2"),
        norm_final=norm("norm_final"))


_CONFIG_KEYS = ("num_layers", "d_model", "d_ff", "heads", "conv_kernel",
                "attn_kind", "use_reweight", "reweight_horizon")


def save_config(path: str | Path, cfg: ModelConfig) -> None:
    raw = _config_to_dict(cfg)
    lines = [f"{key} = {_format_value(raw[key])}" for key in _CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def load_config(path: str | Path) -> ModelConfig:
    """Strict flat key/value parse; unknown or repeated keys are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        raw[key] = value

    defaults = _config_to_dict(ModelConfig())
    merged = dict(defaults)
    for key, text in raw.items():
        if isinstance(defaults[key], bool):
            if text.lower() not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false, got {text!r}")
            merged[key] = text.lower() == "true"
        elif isinstance(defaults[key], int):
            try:
                merged[key] = int(text)
            except ValueError as exc:
                raise ConfigError(f"{key} must be an integer, got {text!r}") from exc
        else:
            merged[key] = text
    kind = parse_kind(str(merged["attn_kind"]), bool(merged["use_reweight"]))
    return ModelConfig(
        num_layers=merged["num_layers"], d_model=merged["d_model"],
        d_ff=merged["d_ff"], heads=merged["heads"],
        conv_kernel=merged["conv_kernel"], attn_kind=kind,
        reweight_horizon=merged["reweight_horizon"])
