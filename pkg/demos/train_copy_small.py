"""Train the copy task at desk scale and watch bit accuracy climb.

Takes a couple of minutes on one core. Run:
    python3 demos/train_copy_small.py
"""

import numpy as np

from damnet.config import ModelConfig
from damnet.tasks import generate, task_spec
from damnet.trainer import evaluate, train

spec = task_spec("copy", W=4)
params = dict(W=4, li_lo=2, li_hi=6)
cfg = ModelConfig(K=2, A=16, L=16, R=1, d_h=64, d_i=6, d_o=6, p=0.5)

result = None
for round_end in (200, 400, 600, 800, 1000):
    result = train(spec, cfg, seed=1, iterations=round_end, batch=8, lr=1e-4,
                   task_params=params,
                   resume=result.record if result else None)
    held_out = generate("copy", np.random.default_rng(999), 64, **params)
    ev = evaluate(result.record.model, spec, held_out)
    row = result.rows[-1]
    print(f"iter {round_end:4d}  train loss {row[1]:7.3f}  "
          f"refresh loss {row[2]:6.3f}  held-out bit accuracy {ev.metric:.3f}")

print("\nthe answer phase of one evaluated episode:")
ep = generate("copy", np.random.default_rng(7), 1, **params)
model = result.record.model
outputs, _, _ = model.rollout(ep.inputs[0][:ep.masks[0].T])
li = ep.meta["li"]
for t in range(li + 1, ep.masks[0].T):
    bits = (outputs[t].data[:4] > 0).astype(int)
    target = ep.targets[0, t, :4].astype(int)
    print(f"  step {t}: predicted {bits.tolist()} target {target.tolist()}")
