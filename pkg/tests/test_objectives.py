import math

import numpy as np
import pytest

from damnet import objectives as O
from damnet import tensor as T
from damnet.tensor import Tensor


def test_phase_mask_validation():
    with pytest.raises(ValueError):
        O.PhaseMask(story=[1, 1], answer=[1, 0])
    with pytest.raises(ValueError):
        O.PhaseMask(story=[1, 0, 0], answer=[0, 0, 1], sample=[1, 1, 0])
    m = O.PhaseMask(story=[1, 1, 0], answer=[0, 0, 1], sample=[0, 1, 0])
    assert m.T == 3


def test_sample_mask_degenerate_probabilities():
    story = np.array([1, 1, 0, 1, 0], dtype=np.uint8)
    rng = np.random.default_rng(0)
    assert np.array_equal(O.sample_mask(story, 0.0, rng), np.zeros(5, dtype=np.uint8))
    assert np.array_equal(O.sample_mask(story, 1.0, rng), story)


def test_sample_mask_zero_p_consumes_no_draws():
    story = np.ones(50, dtype=np.uint8)
    a = np.random.default_rng(9)
    b = np.random.default_rng(9)
    O.sample_mask(story, 0.0, a)
    assert a.random() == b.random()


def test_sample_mask_restricted_to_story():
    story = np.array([1, 0, 1, 0] * 25, dtype=np.uint8)
    rng = np.random.default_rng(1)
    for _ in range(50):
        alpha = O.sample_mask(story, 0.7, rng)
        assert not (alpha & ~story.astype(bool)).any()


def test_sample_mask_binomial_statistics():
    # E[sum alpha] = n*p and Var = n*p*(1-p) for n=100, p=0.3
    rng = np.random.default_rng(2)
    story = np.ones(100, dtype=np.uint8)
    counts = np.array([O.sample_mask(story, 0.3, rng).sum() for _ in range(10_000)])
    assert 29.0 <= counts.mean() <= 31.0
    assert abs(counts.var() - 21.0) <= 0.2 * 21.0


def test_task_loss_examples():
    # no answer steps -> exactly zero
    zero = O.task_loss([None], np.zeros((1, 4)), [0], "softmax_ce")
    assert zero.item() == 0.0
    # one answer step, uniform logits over 4 classes -> ln 4
    outs = [Tensor(np.zeros(4))]
    tgt = np.array([[0.0, 0.0, 1.0, 0.0]])
    assert abs(O.task_loss(outs, tgt, [1], "softmax_ce").item() - math.log(4.0)) < 1e-12
    # saturated sigmoid logits matching targets -> ~0
    outs = [Tensor(np.array([30.0, -30.0]))]
    tgt = np.array([[1.0, 0.0]])
    assert O.task_loss(outs, tgt, [1], "sigmoid_ce").item() < 1e-12


def test_mr_loss_examples():
    assert O.mr_loss([None, None], np.zeros((2, 3)), [0, 0], "l2").item() == 0.0
    recons = [Tensor(np.array([1.0, 0.0]))]
    assert O.mr_loss(recons, np.array([[1.0, 0.0]]), [1], "l2").item() == 0.0
    recons = [Tensor(np.array([0.0, 0.0]))]
    assert O.mr_loss(recons, np.array([[1.0, 0.0]]), [1], "l2").item() == 1.0


def test_mr_loss_ignores_unsampled_steps():
    rng = np.random.default_rng(3)
    recons = [Tensor(rng.normal(size=3)) for _ in range(4)]
    inputs = rng.normal(size=(4, 3))
    sample = np.array([1, 0, 1, 0])
    base = O.mr_loss(recons, inputs, sample, "l2").item()
    tweaked = inputs.copy()
    tweaked[1] += 100.0
    tweaked[3] -= 50.0
    assert O.mr_loss(recons, tweaked, sample, "l2").item() == base


def test_mr_loss_gradient_only_at_sampled_steps():
    rng = np.random.default_rng(8)
    recons = [Tensor(rng.normal(size=3), requires_grad=True) for _ in range(4)]
    inputs = rng.normal(size=(4, 3))
    sample = np.array([0, 1, 0, 1])
    with T.Tape() as tape:
        loss = O.mr_loss(recons, inputs, sample, "l2")
        tape.backward(loss)
    assert recons[0].grad is None and recons[2].grad is None
    assert np.abs(recons[1].grad).sum() > 0
    assert np.allclose(recons[3].grad, 2 * (recons[3].data - inputs[3]))


def test_gamma_examples():
    story = np.ones(10, dtype=np.uint8)
    story[7:] = 0
    answer = np.zeros(10, dtype=np.uint8)
    answer[7:] = 1
    sample = np.zeros(10, dtype=np.uint8)
    sample[:6] = 1
    assert O.gamma(story, sample, answer) == 2.0       # 6 sampled / 3 answers
    sample[:] = 0
    sample[0] = 1
    assert O.gamma(story, sample, answer) == 1.0       # clamp at gamma_hat = 1/3
    sample[:] = 0
    assert O.gamma(story, sample, answer) == 1.0       # clamp at 0
    with pytest.raises(ValueError):
        O.gamma(story, sample, np.zeros(10, dtype=np.uint8))


def test_gamma_depends_only_on_counts():
    story = np.ones(12, dtype=np.uint8)
    story[8:] = 0
    answer = 1 - story
    rng = np.random.default_rng(4)
    vals = set()
    for _ in range(20):
        sample = np.zeros(12, dtype=np.uint8)
        sample[rng.choice(8, size=6, replace=False)] = 1
        vals.add(O.gamma(story, sample, answer))
    assert vals == {1.5}


def test_total_loss_examples():
    task = Tensor(0.5)
    mr = Tensor(0.3)
    assert abs(O.total_loss(task, mr, 2.0).item() - 1.3) < 1e-15
    assert O.total_loss(Tensor(0.0), Tensor(0.0), 1.0).item() == 0.0
    # p=0 shape: gamma=1 and zero refresh loss leaves the task loss bit-exact
    task_val = 0.7312498712
    reduced = O.total_loss(Tensor(task_val), Tensor(0.0), 1.0).item()
    assert reduced == task_val


def test_total_loss_gradient_routes_through_gamma_scale():
    x = Tensor(np.array([0.4, -0.2]), requires_grad=True)
    with T.Tape() as tape:
        task = T.tsum(T.mul(x, x))
        mr = T.tsum(x)
        loss = O.total_loss(task, mr, 3.0)
        tape.backward(loss)
    assert np.allclose(x.grad, 3.0 * 2.0 * x.data + 1.0)


def test_step_loss_unknown_kind():
    with pytest.raises(ValueError):
        O.step_loss(Tensor(np.zeros(2)), np.zeros(2), "huber")
