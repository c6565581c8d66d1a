import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from damnet import memory as M
from damnet import tensor as T
from damnet.config import ModelConfig
from damnet.controller import AttentiveGateLogits, parse_interface
from damnet.gradcheck import REL_TOL, max_rel_err
from damnet.tensor import Tensor


def t(x, rg=False):
    return Tensor(x, requires_grad=rg)


def tiny_cfg(**kw):
    base = dict(K=2, A=4, L=5, R=2, d_h=16, d_i=4, d_o=4)
    base.update(kw)
    return ModelConfig(**base)


def random_ops(cfg, rng, scale=1.0):
    xi = Tensor(rng.normal(0, scale, cfg.interface_width))
    return parse_interface(xi, cfg)


# ---------------------------------------------------------------------------
# individual addressing operations

def test_content_address_hand_values():
    m = t([[1.0, 0.0], [0.0, 1.0]])
    w = M.content_address(m, t([1.0, 0.0]), t([1.0])).data
    e = math.e
    assert np.allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-4)
    assert abs(w.sum() - 1.0) < 1e-12


def test_content_address_identical_rows_uniform():
    m = t(np.tile([0.3, -0.7, 0.2], (5, 1)))
    w = M.content_address(m, t([1.0, 2.0, 0.5]), t([2.0])).data
    assert np.allclose(w, 0.2)


def test_content_address_sharp_strength_is_one_hot():
    m = t([[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
    w = M.content_address(m, t([0.0, 1.0]), t([100.0])).data
    assert w[1] > 1 - 1e-9
    assert w[0] < 1e-9


def test_retention_examples():
    ones = M.retention(t([0.0, 0.0]), [t([0.5, 0.5]), t([0.1, 0.9])]).data
    assert np.array_equal(ones, [1.0, 1.0])
    freed = M.retention(t([1.0]), [t([1.0, 0.0])]).data
    assert np.array_equal(freed, [0.0, 1.0])
    part = M.retention(t([0.5]), [t([0.4, 0.6])]).data
    assert np.allclose(part, [0.8, 0.7])


def test_update_usage_examples():
    zero = M.update_usage(t([0.0]), t([0.0]), t([1.0])).data
    assert np.array_equal(zero, [0.0])
    grown = M.update_usage(t([0.5]), t([0.5]), t([1.0])).data
    assert np.allclose(grown, [0.75])
    released = M.update_usage(t([0.9, 0.2]), t([0.3, 0.3]), t([0.0, 0.0])).data
    assert np.array_equal(released, [0.0, 0.0])


def test_allocation_examples():
    a = M.allocation(t([0.2, 0.8])).data
    assert np.allclose(a, [0.8, 0.04])
    full = M.allocation(t([1.0, 1.0, 1.0])).data
    assert np.allclose(full, [0.0, 0.0, 0.0])
    one_free = M.allocation(t([1.0, 0.0, 1.0])).data
    assert np.allclose(one_free, [0.0, 1.0, 0.0])


def test_allocation_ties_break_by_index():
    a = M.allocation(t([0.5, 0.5])).data
    # phi = (0, 1): a[0] = 0.5, a[1] = 0.5 * 0.5
    assert np.allclose(a, [0.5, 0.25])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12))
def test_allocation_total_at_most_one(us):
    a = M.allocation(t(us)).data
    assert (a >= -1e-12).all()
    assert a.sum() <= 1.0 + 1e-9


def test_allocation_gradient_matches_fd():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        # keep usage values separated so the sort order is fd-stable
        u = rng.permutation(np.linspace(0.05, 0.95, 6) + rng.uniform(-0.02, 0.02, 6))
        ut = t(u, rg=True)
        probe = rng.normal(size=6)

        def fn():
            return T.tsum(T.mul(M.allocation(ut), t(probe)))

        worst = max(worst, max_rel_err(fn, [ut]))
    assert worst < REL_TOL


def test_write_weighting_examples():
    a, c = t([1.0, 0.0]), t([0.0, 1.0])
    off = M.write_weighting(t([0.0]), t([0.5]), a, c).data
    assert np.array_equal(off, [0.0, 0.0])
    pure = M.write_weighting(t([1.0]), t([1.0]), a, c).data
    assert np.allclose(pure, [1.0, 0.0])
    mix = M.write_weighting(t([0.5]), t([0.5]), a, c).data
    assert np.allclose(mix, [0.25, 0.25])


def test_write_examples():
    m = t([[1.0, 1.0]])
    noop = M.write(m, t([0.0]), t([1.0, 1.0]), t([0.5, 0.5])).data
    assert np.array_equal(noop, m.data)
    replaced = M.write(m, t([1.0]), t([1.0, 1.0]), t([0.5, 0.5])).data
    assert np.allclose(replaced, [[0.5, 0.5]])
    keep = M.write(m, t([0.7]), t([0.0, 0.0]), t([0.0, 0.0])).data
    assert np.array_equal(keep, m.data)


def test_read_block_weighting_behavior():
    m = t([[1.0, 2.0], [3.0, 4.0]])
    # convex row combination via a forced weighting
    r = T.matmul_t(m, t([0.5, 0.5])).data
    assert np.allclose(r, [2.0, 3.0])
    one_hot = T.matmul_t(m, t([0.0, 1.0])).data
    assert np.allclose(one_hot, [3.0, 4.0])
    # content-addressed read with a sharp matching key selects that row;
    # rows must be well separated in angle for the softmax to saturate
    ortho = t([[1.0, 0.0], [0.0, 1.0]])
    weights, reads = M.read_block(ortho, [t([0.0, 1.0])], t([60.0]))
    assert np.allclose(weights[0].data.sum(), 1.0)
    assert np.allclose(reads[0].data, [0.0, 1.0], atol=1e-3)


def gate_logits_from(arr, K, R):
    return AttentiveGateLogits(logits=t(np.asarray(arr, dtype=float).reshape(-1)), K=K, R=R)


def test_attentive_read_examples():
    r1, r2 = t([1.0, 0.0]), t([0.0, 1.0])
    equal = gate_logits_from([0.0, 0.0], K=2, R=1)
    reads, gates = M.attentive_read([[r1], [r2]], equal)
    assert np.allclose(reads[0].data, [0.5, 0.5])
    assert np.allclose(gates, 0.5)

    skew = gate_logits_from([math.log(2.0), 0.0], K=2, R=1)
    reads, _ = M.attentive_read([[r1], [r2]], skew)
    assert np.allclose(reads[0].data, [2.0 / 3.0, 1.0 / 3.0])

    sat = gate_logits_from([30.0, 0.0], K=2, R=1)
    reads, _ = M.attentive_read([[r1], [r2]], sat)
    assert np.allclose(reads[0].data, r1.data, atol=1e-12)


def test_attentive_read_softmax_is_over_blocks_not_heads():
    # two heads, two blocks; head gates must each sum to 1 over blocks
    rng = np.random.default_rng(0)
    per_block = [[t(rng.normal(size=3)) for _ in range(2)] for _ in range(2)]
    gl = gate_logits_from(rng.normal(size=4), K=2, R=2)
    _, gates = M.attentive_read(per_block, gl)
    assert np.allclose(gates.sum(axis=0), 1.0)


# ---------------------------------------------------------------------------
# whole-step behavior

def run_block_pipeline(block, ops):
    """Straight-line single-block composition used as the K=1 oracle."""
    c_w = M.content_address(block.memory, ops.write_key, ops.write_strength)
    psi = M.retention(ops.free_gates, block.read_w)
    u = M.update_usage(block.usage, block.write_w, psi)
    a = M.allocation(u)
    w_w = M.write_weighting(ops.write_gate, ops.alloc_gate, a, c_w)
    mem = M.write(block.memory, w_w, ops.erase, ops.write_values)
    w_r, reads = M.read_block(mem, ops.read_keys, ops.read_strengths)
    return M.BlockState(memory=mem, usage=u, write_w=w_w, read_w=w_r), reads


def test_single_block_reduction_over_100_steps():
    cfg = tiny_cfg(K=1, A=6, L=4, R=2)
    rng = np.random.default_rng(42)
    state = M.zero_memory_state(cfg)
    oracle = M.zero_memory_state(cfg)
    for _ in range(100):
        blocks_ops, gate_logits = random_ops(cfg, rng)
        state, _ = M.memory_step(state, blocks_ops, gate_logits)
        ob, oreads = run_block_pipeline(oracle.blocks[0], blocks_ops[0])
        oracle = M.MemoryState(blocks=[ob], read_out=oreads)
        sb = state.blocks[0]
        assert np.allclose(sb.memory.data, ob.memory.data, atol=1e-12)
        assert np.allclose(sb.usage.data, ob.usage.data, atol=1e-12)
        assert np.allclose(sb.write_w.data, ob.write_w.data, atol=1e-12)
        for got, want in zip(state.read_out, oracle.read_out):
            assert np.allclose(got.data, want.data, atol=1e-12)


def test_blocks_evolve_independently():
    cfg = tiny_cfg(K=3, A=5, L=4, R=1)
    rng = np.random.default_rng(9)
    xi = rng.normal(size=cfg.interface_width)
    state = M.zero_memory_state(cfg)
    # warm up one random step so states are nontrivial
    ops, gl = parse_interface(Tensor(rng.normal(size=cfg.interface_width)), cfg)
    state, _ = M.memory_step(state, ops, gl)

    base_ops, base_gl = parse_interface(Tensor(xi.copy()), cfg)
    base, _ = M.memory_step(state, base_ops, base_gl)

    perturbed = xi.copy()
    perturbed[:cfg.block_width] += rng.normal(size=cfg.block_width)  # block 0 only
    pert_ops, pert_gl = parse_interface(Tensor(perturbed), cfg)
    pert, _ = M.memory_step(state, pert_ops, pert_gl)

    assert not np.array_equal(base.blocks[0].memory.data, pert.blocks[0].memory.data)
    for k in (1, 2):
        assert np.array_equal(base.blocks[k].memory.data, pert.blocks[k].memory.data)
        assert np.array_equal(base.blocks[k].usage.data, pert.blocks[k].usage.data)
        assert np.array_equal(base.blocks[k].write_w.data, pert.blocks[k].write_w.data)
        for a, b in zip(base.blocks[k].read_w, pert.blocks[k].read_w):
            assert np.array_equal(a.data, b.data)


def test_addressing_invariants_random_episodes():
    cfg = tiny_cfg(K=2, A=6, L=4, R=2)
    rng = np.random.default_rng(100)
    for _ in range(20):
        state = M.zero_memory_state(cfg)
        for _ in range(25):
            ops, gl = random_ops(cfg, rng, scale=2.0)
            state, _ = M.memory_step(state, ops, gl)
            for b in state.blocks:
                u = b.usage.data
                assert ((u >= -1e-12) & (u <= 1 + 1e-12)).all()
                assert (b.write_w.data >= -1e-12).all()
                assert b.write_w.data.sum() <= 1 + 1e-9
                for w in b.read_w:
                    assert (w.data >= -1e-12).all()
                    assert abs(w.data.sum() - 1.0) <= 1e-9


def test_memory_capacity_of_copy_configuration():
    # two blocks of 64 addresses x 36 words = 4608 stored floats (~4.6K)
    cfg = ModelConfig(K=2, A=64, L=36, R=1, d_h=8, d_i=10, d_o=10)
    state = M.zero_memory_state(cfg)
    total = sum(b.memory.data.size for b in state.blocks)
    assert total == 4608


def test_memory_step_gradients_match_fd():
    cfg = tiny_cfg(K=2, A=4, L=3, R=2)
    rng = np.random.default_rng(21)
    xi_val = rng.normal(0, 0.8, cfg.interface_width)
    xi = Tensor(xi_val, requires_grad=True)
    probe = [rng.normal(size=cfg.L) for _ in range(cfg.R)]

    def fn():
        state = M.zero_memory_state(cfg)
        for _ in range(3):
            ops, gl = parse_interface(xi, cfg)
            state, _ = M.memory_step(state, ops, gl)
        parts = [T.tsum(T.mul(r, t(p))) for r, p in zip(state.read_out, probe)]
        total = parts[0]
        for extra in parts[1:]:
            total = T.add(total, extra)
        return total

    assert max_rel_err(fn, [xi]) < REL_TOL
