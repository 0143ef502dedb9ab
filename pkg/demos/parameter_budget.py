"""Compare encoder sizes: interaction network versus transformer.

Prints closed-form parameter counts, checks them against freshly built
encoders, and shows how much of the transformer's size sits in its
feed-forward block.

    python demos/parameter_budget.py
"""

import numpy as np

from ince.interaction import InteractionEncoder
from ince.params import normalized_tp_in, tp_in, tp_transformer, tp_transformer_blocks, verify_model_counts
from ince.transformer import TransformerEncoder

rng = np.random.default_rng(0)

print("interaction network, relative to (d=1, n=1) at each l")
print("   l   d=2    d=3    d=4  |  n=2    n=3    n=4")
for l in (16, 32, 64, 128):
    depth = [float(normalized_tp_in(l, d, 1, baseline_l=l)) for d in (2, 3, 4)]
    stack = [float(normalized_tp_in(l, 1, n, baseline_l=l)) for n in (2, 3, 4)]
    print(f"{l:4d}  " + "  ".join(f"{v:.3f}" for v in depth) + "  |  " + "  ".join(f"{v:.3f}" for v in stack))

print("\none layer at l=128, f=512")
for h in (1, 2, 4, 8):
    blocks = tp_transformer_blocks(128, h, 512)
    total = tp_transformer(128, h, 512, 1)
    print(f"  h={h}: transformer {total:7d} (feed-forward {blocks['feed_forward'] / total:.0%})"
          f"  vs interaction network {tp_in(128, 1, 1):6d}")

for enc in (InteractionEncoder(32, 3, 2, rng), TransformerEncoder(32, 4, 512, 2, rng)):
    report = verify_model_counts(enc)
    print(f"\n{type(enc).__name__}: constructed {report.constructed} = closed form {report.analytic}")
