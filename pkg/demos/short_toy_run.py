"""
A short toy run: Scale-GAN against a plain GAN on the 8-mode ring
=================================================================

Run with ``python3 demos/short_toy_run.py [iterations]``. The full presets
train for 40000 iterations (several minutes each); this uses a few thousand
with a narrower network so both finish in about a minute.
"""

import sys
import tempfile
from pathlib import Path

from scalegan import trainer

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
root = Path(tempfile.mkdtemp(prefix="scalegan-demo-"))

for preset in ("toy-scalegan", "toy-vanilla"):
    cfg = trainer.preset_config(preset, seed=0, iterations=iters, width=64,
                                eval_every=iters // 6, ckpt_every=iters)
    trainer.run(cfg, root / preset)
    print(f"\n{preset}")
    print(f"{'iter':>6} {'T':>4} {'precision':>9} {'recall':>7} {'grad norm':>9}")
    m = trainer.read_metrics(root / preset / "metrics.csv")
    for i in range(m["iter"].size):
        print(f"{m['iter'][i]:>6.0f} {m['T'][i]:>4.0f} {m['precision'][i]:>9.3f} "
              f"{m['recall'][i]:>7.3f} {m['grad_norm'][i]:>9.3f}")

print("\nrun directories under", root)
