"""Show the refresh-loss machinery: sampling, the gamma clamp, loss assembly.

Run: python3 demos/refresh_loss_mechanics.py
"""

import numpy as np

from damnet.objectives import gamma, sample_mask

rng = np.random.default_rng(0)

# a 12-step episode: 8 story steps then 4 answer steps
story = np.array([1] * 8 + [0] * 4, dtype=np.uint8)
answer = np.array([0] * 8 + [1] * 4, dtype=np.uint8)

print("story mask :", story.tolist())
print("answer mask:", answer.tolist())

for p in (0.0, 0.3, 0.8):
    alpha = sample_mask(story, p, rng)
    g = gamma(story, alpha, answer)
    print(f"\np={p}: sampled steps {alpha.tolist()}  "
          f"count {alpha.sum()}  gamma {g:.3f}")

# expected sample count is length * p; check it empirically
n, p = 100, 0.3
long_story = np.ones(n, dtype=np.uint8)
counts = [sample_mask(long_story, p, rng).sum() for _ in range(5000)]
print(f"\n{n} story steps at p={p}: mean sampled {np.mean(counts):.2f} "
      f"(expected {n * p}), variance {np.var(counts):.1f} "
      f"(expected {n * p * (1 - p):.0f})")

# the clamp keeps the task term dominant: many samples scale it up,
# few samples never scale it down
few = np.zeros(12, dtype=np.uint8)
few[0] = 1
many = story.copy()
print("\ngamma with 1 sample / 4 answers :", gamma(story, few, answer))
print("gamma with 8 samples / 4 answers:", gamma(story, many, answer))
