#!/usr/bin/env python3
"""Build a small locality-biased encoder, run it, round-trip its weights.

Usage: python scripts/run_encoder_demo.py [config.cfg]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from lbla.conformer import ModelConfig, encoder_forward, init_encoder_params
from lbla.numeric import SeededRng
from lbla.serialization import load_config, load_weights, save_weights


def main() -> int:
    if len(sys.argv) > 1:
        cfg = load_config(sys.argv[1])
    else:
        cfg = ModelConfig(num_layers=4, d_model=64, d_ff=128, heads=4,
                          conv_kernel=15)
    print(f"encoder: {cfg.num_layers} layers, d={cfg.d_model}, "
          f"heads={cfg.heads}, attention={cfg.attn_kind.label()}")

    blocks = init_encoder_params(cfg, SeededRng(0))
    x = SeededRng(1).uniform(-1.0, 1.0, (50, cfg.d_model))
    out = encoder_forward(x, blocks, cfg)
    print(f"forward: {x.shape} -> {out.shape}, "
          f"|out| mean {np.abs(out).mean():.4f}")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.lbw"
        save_weights(path, blocks, cfg)
        reloaded_blocks, reloaded_cfg = load_weights(path)
        again = encoder_forward(x, reloaded_blocks, reloaded_cfg)
        exact = bool(np.array_equal(out, again))
        print(f"weight file: {path.stat().st_size} bytes, "
              f"round-trip output bit-identical: {exact}")
        if not exact:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
