"""Walk one memory block through a write-then-read cycle, printing each stage.

Run: python3 demos/addressing_walkthrough.py
"""

import numpy as np

from damnet import memory as M
from damnet import tensor as T
from damnet.tensor import Tensor

np.set_printoptions(precision=3, suppress=True)

A, L = 4, 3
memory = Tensor(np.full((A, L), 1e-6))
usage = Tensor(np.zeros(A))
write_w_prev = Tensor(np.zeros(A))
read_w_prev = [Tensor(np.zeros(A))]

print("empty block:", memory.data.tolist())

# --- step 1: store [1, 0, 0] via allocation -------------------------------
key = Tensor(np.array([1.0, 0.0, 0.0]))
content_w = M.content_address(memory, key, Tensor([5.0]))
print("\ncontent weighting on an empty block is uniform:", content_w.data)

psi = M.retention(Tensor([0.0]), read_w_prev)        # nothing read yet: keep all
usage = M.update_usage(usage, write_w_prev, psi)
alloc = M.allocation(usage)
print("allocation prefers the least-used slot:", alloc.data)

# fully open write gate, fully allocation-driven
write_w = M.write_weighting(Tensor([1.0]), Tensor([1.0]), alloc, content_w)
memory = M.write(memory, write_w, Tensor(np.ones(L)), key)
print("after writing [1,0,0]:")
print(memory.data)

# --- step 2: content lookup finds the stored row --------------------------
write_w_prev = write_w
usage = M.update_usage(usage, write_w_prev, psi)
read_w, reads = M.read_block(memory, [key], Tensor([20.0]))
print("\nread weighting for key [1,0,0]:", read_w[0].data)
print("read-out:", reads[0].data)

# --- attentive interpolation across two blocks ----------------------------
from damnet.controller import AttentiveGateLogits

other = [Tensor(np.array([0.0, 1.0, 0.0]))]
gates = AttentiveGateLogits(logits=Tensor(np.array([2.0, -2.0])), K=2, R=1)
combined, gate_values = M.attentive_read([reads, other], gates)
print("\ntwo blocks' read-outs merged by the attentive gate")
print("gate over blocks:", gate_values[:, 0])
print("combined read:", combined[0].data)
