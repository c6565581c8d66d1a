"""Central finite-difference verification of analytic gradients.

Every differentiable op and the fully unrolled model are checked against
f(x+h) - f(x-h) over 2h at h=1e-5 in float64. The comparison is
rel_err = |a - b| / max(|a|, |b|, 1e-4); the floor keeps finite-difference
round-off (~1e-9 absolute here) from registering on near-zero gradients
while still flagging genuine errors on any gradient of working magnitude.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor

FD_STEP = 1e-5
REL_TOL = 1e-4
_REL_FLOOR = 1e-4


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), _REL_FLOOR)
    return np.abs(a - b) / denom


def analytic_grads(fn, params):
    """Run fn once under a fresh tape and return d(fn)/d(p) for each param."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else np.asarray(p.grad)
            for p in params]


def fd_grads(fn, params, h=FD_STEP):
    """Central finite differences of fn with respect to every param element."""
    grads = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn().item()
            flat[i] = keep - h
            dn = fn().item()
            flat[i] = keep
            gflat[i] = (up - dn) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(fn, params, h=FD_STEP):
    """Worst-case relative disagreement between tape and finite differences.

    fn must be deterministic and side-effect free in params: each call
    re-runs the forward pass on the current param values.
    """
    ana = analytic_grads(fn, params)
    num = fd_grads(fn, params, h=h)
    worst = 0.0
    for a, n in zip(ana, num):
        if a.size:
            worst = max(worst, float(rel_err(a, n).max()))
    return worst


# ---------------------------------------------------------------------------
# the per-op sweep

def op_cases(rng):
    """(name, builder) pairs; each builder returns (fn, params) on fresh data."""
    def t(data, rg=True):
        return Tensor(data, requires_grad=rg)

    def vec(n=5, lo=-2.0, hi=2.0):
        return t(rng.uniform(lo, hi, n))

    def mat(m=4, n=5):
        return t(rng.uniform(-2.0, 2.0, (m, n)))

    def reduce_fn(expr, *params):
        def fn():
            out = expr()
            return out if out.data.size == 1 else T.tsum(out)
        return fn, list(params)

    def case_add():
        a, b = vec(), vec()
        return reduce_fn(lambda: T.add(a, b), a, b)

    def case_sub():
        a, b = vec(), vec()
        return reduce_fn(lambda: T.sub(a, b), a, b)

    def case_mul():
        a, b = vec(), vec()
        return reduce_fn(lambda: T.mul(a, b), a, b)

    def case_div():
        a = vec()
        b = t(rng.uniform(0.5, 2.0, 5) * rng.choice([-1.0, 1.0], 5))
        return reduce_fn(lambda: T.div(a, b), a, b)

    def case_scalar_mix():
        a, s = vec(), t(rng.uniform(0.5, 2.0))
        return reduce_fn(lambda: T.mul(T.add(a, s), s), a, s)

    def case_neg():
        a = vec()
        return reduce_fn(lambda: T.neg(a), a)

    def case_exp():
        a = vec()
        return reduce_fn(lambda: T.exp(a), a)

    def case_log():
        a = t(rng.uniform(0.2, 3.0, 5))
        return reduce_fn(lambda: T.log(a), a)

    def case_tanh():
        a = vec()
        return reduce_fn(lambda: T.tanh(a), a)

    def case_sigmoid():
        a = vec()
        return reduce_fn(lambda: T.sigmoid(a), a)

    def case_relu():
        a = t(rng.uniform(0.1, 2.0, 5) * rng.choice([-1.0, 1.0], 5))
        return reduce_fn(lambda: T.relu(a), a)

    def case_oneplus():
        a = vec(lo=-4, hi=4)
        return reduce_fn(lambda: T.oneplus(a), a)

    def case_softmax():
        a = vec(lo=-3, hi=3)
        w = rng.uniform(-1, 1, 5)
        return reduce_fn(lambda: T.tsum(T.mul(T.softmax(a), Tensor(w))), a)

    def case_matmul_mm():
        a, b = mat(3, 4), mat(4, 2)
        w = rng.uniform(-1, 1, (3, 2))
        return reduce_fn(lambda: T.tsum(T.mul(T.matmul(a, b), Tensor(w))), a, b)

    def case_matmul_mv():
        a, b = mat(3, 4), vec(4)
        return reduce_fn(lambda: T.matmul(a, b), a, b)

    def case_matmul_vm():
        a, b = vec(3), mat(3, 4)
        return reduce_fn(lambda: T.matmul(a, b), a, b)

    def case_matmul_t():
        m, w = mat(4, 3), vec(4)
        return reduce_fn(lambda: T.matmul_t(m, w), m, w)

    def case_outer():
        u, v = vec(3), vec(4)
        w = rng.uniform(-1, 1, (3, 4))
        return reduce_fn(lambda: T.tsum(T.mul(T.outer(u, v), Tensor(w))), u, v)

    def case_concat_slice():
        a, b = vec(3), vec(4)
        return reduce_fn(lambda: T.slice_(T.concat([a, b]), 2, 6), a, b)

    def case_gather():
        a = vec(6)
        idx = rng.integers(0, 6, 4)
        return reduce_fn(lambda: T.gather(a, idx), a)

    def case_layer_norm():
        x, g, b = vec(6), vec(6), vec(6)
        return reduce_fn(lambda: T.layer_norm(x, g, b), x, g, b)

    def case_cosine_rows():
        m = t(rng.uniform(-2, 2, (4, 5)) + 0.1)
        k = t(rng.uniform(-2, 2, 5) + 0.1)
        return reduce_fn(lambda: T.cosine_rows(m, k), m, k)

    def case_cosine_similarity():
        a = t(rng.uniform(0.2, 2.0, 5) * rng.choice([-1.0, 1.0], 5))
        b = t(rng.uniform(0.2, 2.0, 5) * rng.choice([-1.0, 1.0], 5))
        return reduce_fn(lambda: T.cosine_similarity(a, b), a, b)

    def case_weighted_sum():
        vs = [vec(4) for _ in range(3)]
        w = vec(3)
        return reduce_fn(lambda: T.weighted_sum(vs, w), *(vs + [w]))

    def case_sce_logits():
        z = vec(6, lo=-3, hi=3)
        cls = int(rng.integers(0, 6))
        return reduce_fn(lambda: T.sce_logits(z, cls), z)

    def case_bce_logits():
        z = vec(6, lo=-3, hi=3)
        tgt = rng.integers(0, 2, 6).astype(float)
        return reduce_fn(lambda: T.bce_logits(z, tgt), z)

    def case_dropout():
        x = vec(12)
        seed = int(rng.integers(0, 2**31))

        def expr():
            return T.dropout(x, 0.4, True, np.random.default_rng(seed))
        return reduce_fn(expr, x)

    def case_embed_row():
        e = t(rng.uniform(-1, 1, (4, 3)))
        row = int(rng.integers(0, 4))
        return reduce_fn(lambda: T.embed_row(e, row), e)

    def case_allocation():
        from .memory import allocation
        # keep usage values separated so the sort order is fd-stable
        u = t(rng.permutation(np.linspace(0.05, 0.95, 6)
                              + rng.uniform(-0.02, 0.02, 6)))
        probe = rng.normal(size=6)
        return reduce_fn(lambda: T.tsum(T.mul(allocation(u), Tensor(probe))), u)

    def case_lstm_c():
        z, cp = vec(12), vec(3)
        return reduce_fn(lambda: T.lstm_c(z, cp), z, cp)

    def case_lstm_h():
        z, c = vec(12), vec(3)
        return reduce_fn(lambda: T.lstm_h(z, c), z, c)

    def case_scaled_softmax():
        x = vec(5, lo=-2, hi=2)
        beta = t(rng.uniform(1.0, 3.0, 1))
        probe = rng.normal(size=5)
        return reduce_fn(
            lambda: T.tsum(T.mul(T.scaled_softmax(x, beta), Tensor(probe))), x, beta)

    def case_retention_usage():
        from .memory import _retention_usage_fused
        f = t(rng.uniform(0.05, 0.95, 2))
        ws = [t(rng.uniform(0.0, 0.45, 5)) for _ in range(2)]
        up = t(rng.uniform(0.0, 0.9, 5))
        wp = t(rng.uniform(0.0, 0.5, 5))
        return reduce_fn(lambda: _retention_usage_fused(f, ws, up, wp),
                         f, ws[0], ws[1], up, wp)

    def case_write_weighting():
        from .memory import _write_weighting_fused
        gw, ga = t(rng.uniform(0.1, 0.9, 1)), t(rng.uniform(0.1, 0.9, 1))
        a, c = t(rng.uniform(0, 0.5, 5)), t(rng.uniform(0, 0.5, 5))
        return reduce_fn(lambda: _write_weighting_fused(gw, ga, a, c), gw, ga, a, c)

    def case_memory_write():
        from .memory import _write_fused
        m = mat(4, 3)
        w = t(rng.uniform(0, 0.5, 4))
        e = t(rng.uniform(0, 1, 3))
        v = vec(3)
        probe = rng.normal(size=(4, 3))
        return reduce_fn(
            lambda: T.tsum(T.mul(_write_fused(m, w, e, v), Tensor(probe))), m, w, e, v)

    return [(k[5:], v) for k, v in sorted(locals().items()) if k.startswith("case_")]


def run_op_suite(samples=100, seed=7):
    """Worst relative error per op over `samples` random inputs each."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, builder in op_cases(rng):
        worst = 0.0
        for _ in range(samples):
            fn, params = builder()
            worst = max(worst, max_rel_err(fn, params))
        results[name] = worst
    return results


# ---------------------------------------------------------------------------
# full-model check: a 6-step unrolled episode with refresh loss and dropout

def model_check(K=2, A=4, L=5, R=2, d_h=16, p=0.5, p_dp=0.25, steps=6,
                seed=123, recon="reuse"):
    """Max relative FD error over every parameter of a tiny unrolled model.

    The refresh-sample mask and the dropout masks are regenerated from
    fixed seeds on every evaluation, so the objective is a deterministic
    function of the parameters.
    """
    from .config import ModelConfig
    from .tasks import TaskSpec
    from .trainer import episode_objective, build_model
    from .objectives import PhaseMask

    rng = np.random.default_rng(seed)
    if recon == "reuse":
        d_i = d_o = 4
        spec = TaskSpec("gradcheck-reuse", d_i=d_i, d_o=d_o,
                        task_kind="sigmoid_ce", mr_kind="sigmoid_ce",
                        recon="reuse", metric="bits")
        targets = rng.integers(0, 2, (steps, d_o)).astype(float)
    else:
        d_i, d_o = 4, 3
        spec = TaskSpec("gradcheck-linear", d_i=d_i, d_o=d_o,
                        task_kind="softmax_ce", mr_kind="l2",
                        recon="linear", metric="argmax")
        targets = np.zeros((steps, d_o))
        for s in range(steps):
            targets[s, rng.integers(0, d_o)] = 1.0

    cfg = ModelConfig(K=K, A=A, L=L, R=R, d_h=d_h, d_i=d_i, d_o=d_o,
                      p=p, p_dp=p_dp)
    model = build_model(spec, cfg, seed=seed)
    inputs = rng.normal(size=(steps, d_i))
    story = np.zeros(steps, dtype=np.uint8)
    story[:steps - 2] = 1
    answer = np.zeros(steps, dtype=np.uint8)
    answer[steps - 2:] = 1
    mask = PhaseMask(story=story, answer=answer)
    mrl_seed = int(rng.integers(0, 2**31))
    drop_seed = int(rng.integers(0, 2**31))

    def fn():
        loss, _, _ = episode_objective(
            model, spec, inputs, targets, mask, p=p,
            rng_mrl=np.random.default_rng(mrl_seed),
            rng_drop=np.random.default_rng(drop_seed),
            training=True, mrl_enabled=True)
        return loss

    return max_rel_err(fn, list(model.params.values()))
