"""Gradient checking the numeric engine and counting model parameters.

Run: python demos/03_autodiff_and_model.py
"""

import numpy as np

from varnamer import autodiff as ad
from varnamer.model import ModelConfig, TransformerEncoder, param_count, preset

# Reverse-mode gradients vs. central differences on a full 2-layer encoder
# with the masked cross-entropy loss, in 64-bit mode.
config = ModelConfig(layers=2, heads=2, hidden=16, ffn_dim=32, max_seq=16,
                     vocab_size=270, dropout=0.0)
model = TransformerEncoder(config, seed=3, dtype=np.float64)
ids = np.array([2, 261, 262, 263, 264, 3])


def loss():
    logits = model.forward(ids)
    return ad.cross_entropy_masked(logits, [(1, 100), (3, 200)])


err = ad.grad_check(loss, list(model.params.values()),
                    rng=np.random.default_rng(0), min_coords=150)
print(f"max relative gradient error over 150 random coordinates: {err:.2e}")

# The closed-form parameter count matches the allocation exactly.
print(f"\ntiny config: formula {param_count(config):,} = "
      f"allocated {model.num_params():,}")

# Published-scale presets land where expected.
for name in ("varbert-base", "varbert-small", "varbert-toy"):
    cfg = preset(name, vocab_size=50_000)
    print(f"{name:15s} L={cfg.layers:2d} A={cfg.heads:2d} H={cfg.hidden:4d} "
          f"ctx={cfg.max_seq:4d} -> {param_count(cfg) / 1e6:7.1f}M parameters")

# GELU is the exact Gaussian-CDF form.
x = ad.Tensor(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]))
print("\ngelu:", np.round(ad.gelu(x).data, 6))
