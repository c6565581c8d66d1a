"""Content-addressable memory blocks: addressing, gated writes, attentive reads.

Each of the K blocks keeps its own matrix, usage vector, and previous
read/write weightings, and is updated independently within a step. Reads
happen after the write ("write-then-read"), and the per-block read-outs
are interpolated by a softmax over blocks, one softmax per read head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .tensor import Tensor, _accum, _record, _result

INIT_MEMORY_FILL = 1e-6   # keeps step-1 cosine similarity well defined


@dataclass
class BlockState:
    memory: Tensor      # [A, L]
    usage: Tensor       # [A] in [0,1]
    write_w: Tensor     # [A], previous write weighting
    read_w: list        # R tensors [A], previous read weightings


@dataclass
class MemoryState:
    blocks: list        # K BlockState
    read_out: list      # R tensors [L], previous interpolated read-outs


def zero_memory_state(cfg: ModelConfig) -> MemoryState:
    blocks = [
        BlockState(
            memory=Tensor(np.full((cfg.A, cfg.L), INIT_MEMORY_FILL)),
            usage=Tensor(np.zeros(cfg.A)),
            write_w=Tensor(np.zeros(cfg.A)),
            read_w=[Tensor(np.zeros(cfg.A)) for _ in range(cfg.R)],
        )
        for _ in range(cfg.K)
    ]
    return MemoryState(blocks=blocks, read_out=[Tensor(np.zeros(cfg.L)) for _ in range(cfg.R)])


def content_address(memory, key, strength):
    """Softmax over strength-sharpened cosine similarities to each row."""
    return T.softmax(T.mul(T.cosine_rows(memory, key), strength))


def retention(free_gates, read_w_prev):
    """psi = prod_i (1 - f_i * w_prev_i), elementwise over addresses."""
    psi = None
    for i, w in enumerate(read_w_prev):
        factor = 1.0 - T.mul(T.slice_(free_gates, i, i + 1), w)
        psi = factor if psi is None else T.mul(psi, factor)
    return psi


def update_usage(usage_prev, write_w_prev, psi):
    """u = (u_prev + w_prev - u_prev o w_prev) o psi; stays in [0,1]."""
    grown = T.sub(T.add(usage_prev, write_w_prev), T.mul(usage_prev, write_w_prev))
    return T.mul(grown, psi)


def allocation(usage):
    """Allocation weighting over the usage-sorted free list.

    With phi the ascending argsort of usage (ties to the lower index),
    a[phi[j]] = (1 - u[phi[j]]) * prod_{i<j} u[phi[i]]. The sort order is
    treated as a constant: gradients flow through the usage values in the
    products, never through the permutation.
    """
    u = usage.data
    order = np.argsort(u, kind="stable")
    s = u[order]
    prefix = np.concatenate(([1.0], np.cumprod(s[:-1])))  # prod_{i<j} s_i
    a_sorted = (1.0 - s) * prefix
    a = np.empty_like(u)
    a[order] = a_sorted
    out = _result(a, "allocation")

    def backfn(g):
        if not usage.requires_grad:
            return
        n = s.shape[0]
        g_sorted = g[order]
        # cp_ex[j, m] = prod_{i<m, i!=j} s_i, via cumprod with the diagonal
        # forced to one; O(A^2) but robust to zeros in s.
        masked = np.tile(s, (n, 1))
        np.fill_diagonal(masked, 1.0)
        cp = np.cumprod(masked, axis=1)
        cp_ex = np.concatenate((np.ones((n, 1)), cp[:, :-1]), axis=1)
        w = g_sorted * (1.0 - s)
        upper = np.triu(cp_ex * w[None, :], k=1).sum(axis=1)
        gs = -g_sorted * prefix + upper
        gu = np.empty_like(gs)
        gu[order] = gs
        _accum(usage, gu)

    return _record(out, (usage,), backfn)


# Fused single-node variants of the addressing chain, used on the training
# hot path. Their forward expressions replicate the composed public ops
# operation for operation, so both routes agree to float rounding.

def _retention_usage_fused(free_gates, read_w_prev, usage_prev, write_w_prev):
    """u = (u_prev + w_prev - u_prev o w_prev) o prod_i(1 - f_i w_i)."""
    f = free_gates.data
    ws = [w.data for w in read_w_prev]
    factors = [1.0 - f[i] * ws[i] for i in range(len(ws))]
    psi = factors[0].copy()
    for fac in factors[1:]:
        psi = psi * fac
    up, wp = usage_prev.data, write_w_prev.data
    grown = (up + wp) - up * wp
    out = _result(grown * psi, "retention_usage")

    def backfn(g):
        if usage_prev.requires_grad:
            _accum(usage_prev, g * (1.0 - wp) * psi)
        if write_w_prev.requires_grad:
            _accum(write_w_prev, g * (1.0 - up) * psi)
        g_psi = g * grown
        need_f = free_gates.requires_grad
        if need_f or any(w.requires_grad for w in read_w_prev):
            r = len(ws)
            gf = np.zeros(r) if need_f else None
            for i in range(r):
                other = np.ones_like(psi)
                for j in range(r):
                    if j != i:
                        other = other * factors[j]
                d_factor = g_psi * other
                if need_f:
                    gf[i] = -float(d_factor @ ws[i])
                if read_w_prev[i].requires_grad:
                    _accum(read_w_prev[i], -f[i] * d_factor)
            if need_f:
                _accum(free_gates, gf)

    return _record(out, (free_gates, usage_prev, write_w_prev) + tuple(read_w_prev),
                   backfn)


def _write_weighting_fused(write_gate, alloc_gate, alloc_w, content_w):
    """w = g_w * (g_a * a + (1 - g_a) * c) as one node."""
    gw = float(write_gate.data.reshape(-1)[0])
    ga = float(alloc_gate.data.reshape(-1)[0])
    a, c = alloc_w.data, content_w.data
    mix = ga * a + (1.0 - ga) * c
    out = _result(gw * mix, "write_weighting")

    def backfn(g):
        if write_gate.requires_grad:
            _accum(write_gate, np.asarray(float(g @ mix)).reshape(write_gate.data.shape))
        if alloc_gate.requires_grad:
            val = gw * float(g @ (a - c))
            _accum(alloc_gate, np.asarray(val).reshape(alloc_gate.data.shape))
        if alloc_w.requires_grad:
            _accum(alloc_w, (gw * ga) * g)
        if content_w.requires_grad:
            _accum(content_w, (gw * (1.0 - ga)) * g)

    return _record(out, (write_gate, alloc_gate, alloc_w, content_w), backfn)


def _write_fused(memory, write_w, erase, values):
    """M' = M o (E - w e^T) + w v^T as one node."""
    m, w, e, v = memory.data, write_w.data, erase.data, values.data
    keep = 1.0 - np.outer(w, e)
    out = _result(m * keep + np.outer(w, v), "memory_write")

    def backfn(g):
        if memory.requires_grad:
            _accum(memory, g * keep)
        gm = g * m
        if write_w.requires_grad:
            _accum(write_w, g @ v - gm @ e)
        if erase.requires_grad:
            _accum(erase, -(w @ gm))
        if values.requires_grad:
            _accum(values, w @ g)

    return _record(out, (memory, write_w, erase, values), backfn)


def write_weighting(write_gate, alloc_gate, alloc_w, content_w):
    """w = g_w * (g_a * a + (1 - g_a) * c); entries >= 0, sum <= 1."""
    mix = T.add(T.mul(alloc_gate, alloc_w), T.mul(1.0 - alloc_gate, content_w))
    return T.mul(write_gate, mix)


def write(memory, write_w, erase, values):
    """M' = M o (E - w e^T) + w v^T."""
    keep = 1.0 - T.outer(write_w, erase)
    return T.add(T.mul(memory, keep), T.outer(write_w, values))


def read_block(memory, read_keys, read_strengths):
    """Per-head content addressing and read-out from one block."""
    weights, reads = [], []
    for i, key in enumerate(read_keys):
        w = content_address(memory, key, T.slice_(read_strengths, i, i + 1))
        weights.append(w)
        reads.append(T.matmul_t(memory, w))
    return weights, reads


def attentive_read(per_block_reads, gate_logits):
    """Interpolate per-block read-outs with a softmax over blocks per head.

    per_block_reads[k][i] is block k's read-out for head i. Returns the R
    combined read vectors plus the softmaxed gates as a [K, R] array for
    diagnostics.
    """
    K, R = gate_logits.K, gate_logits.R
    reads, gate_values = [], np.empty((K, R))
    for i in range(R):
        g = T.softmax(gate_logits.head_logits(i))
        gate_values[:, i] = g.data
        reads.append(T.weighted_sum([per_block_reads[k][i] for k in range(K)], g))
    return reads, gate_values


def block_step(block, ops):
    """Advance one memory block by a full write-then-read cycle.

    Write addressing sees the pre-write matrix; read addressing sees the
    freshly written one. Returns the new BlockState plus the per-head
    read-outs of this block. Uses the fused nodes, which reproduce the
    composed public ops' arithmetic exactly.
    """
    content_w = T.scaled_softmax(T.cosine_rows(block.memory, ops.write_key),
                                 ops.write_strength)
    usage = _retention_usage_fused(ops.free_gates, block.read_w,
                                   block.usage, block.write_w)
    alloc_w = allocation(usage)
    write_w = _write_weighting_fused(ops.write_gate, ops.alloc_gate,
                                     alloc_w, content_w)
    memory = _write_fused(block.memory, write_w, ops.erase, ops.write_values)
    read_w, reads = [], []
    for i, key in enumerate(ops.read_keys):
        w = T.scaled_softmax(T.cosine_rows(memory, key),
                             T.slice_(ops.read_strengths, i, i + 1))
        read_w.append(w)
        reads.append(T.matmul_t(memory, w))
    new_state = BlockState(memory=memory, usage=usage, write_w=write_w, read_w=read_w)
    return new_state, reads


def memory_step(state, blocks_ops, gate_logits):
    """Update all K blocks independently, then join with the attentive read."""
    new_blocks, per_block_reads = [], []
    for block, ops in zip(state.blocks, blocks_ops):
        nb, reads = block_step(block, ops)
        new_blocks.append(nb)
        per_block_reads.append(reads)
    read_out, gate_values = attentive_read(per_block_reads, gate_logits)
    return MemoryState(blocks=new_blocks, read_out=read_out), gate_values
