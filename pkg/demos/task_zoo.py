"""Print one small episode of every synthetic task in readable form.

Run: python3 demos/task_zoo.py
"""

import numpy as np

from damnet.tasks import generate

np.set_printoptions(precision=2, suppress=True, linewidth=120)
rng = np.random.default_rng(4)


def show(name, ep, fmt=None):
    m = ep.masks[0]
    print(f"\n=== {name} (T={m.T}, d_i={ep.inputs.shape[2]}, "
          f"d_o={ep.targets.shape[2]}) ===")
    phases = "".join("S" if s else ("A" if a else ".")
                     for s, a in zip(m.story, m.answer))
    print("phases:", phases, "(S story, A answer)")
    for t in range(m.T):
        row = (fmt or (lambda v: v))(ep.inputs[0, t])
        tgt = ep.targets[0, t]
        suffix = f" -> target {(fmt or (lambda v: v))(tgt)}" if m.answer[t] else ""
        print(f"  t={t:2d} in {row}{suffix}")


bits = lambda v: "".join(str(int(b)) for b in v)

show("copy", generate("copy", rng, 1, W=4, li_lo=3, li_hi=3), fmt=bits)
show("assoc_recall", generate("assoc_recall", rng, 1, W=4, n_items=2,
                              li_lo=2, li_hi=2), fmt=bits)

ep = generate("repr_recall", rng, 1, W=8, li=3, n_seg=2, lc_lo=2, lc_hi=2)
show("repr_recall (8-bit words, 4 segments, cue keeps 2)", ep, fmt=bits)

ep = generate("nth_farthest", rng, 1)
n = int(np.argmax(ep.inputs[0, 0, 24:32])) + 1
m = int(np.argmax(ep.inputs[0, 0, 32:40]))
label = int(np.argmax(ep.targets[0, 8]))
print(f"\n=== nth_farthest ===\n8 vectors in 16-d; question: which is "
      f"{n}-th farthest from vector {m}? answer: vector {label}")

ep = generate("convex_hull", rng, 1, n_points=6)
pts = ep.inputs[0, :6, :2]
hull = [int(np.argmax(ep.targets[0, t])) for t in np.nonzero(ep.masks[0].answer)[0]]
print(f"\n=== convex_hull ===\npoints:\n{pts}\nhull walk "
      f"(counterclockwise from lowest): {hull}")
