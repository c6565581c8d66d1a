"""Task loss, the input-refreshing auxiliary loss, and their dynamic balance.

An episode is split into a story phase (inputs worth remembering) and an
answer phase (steps with targets). The refresh loss reconstructs the
inputs of Bernoulli-sampled story steps; the task loss is re-weighted by
gamma = max(1, sampled_story_steps / answer_steps) so the auxiliary term
cannot swamp the objective on long stories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

TASK_KINDS = ("sigmoid_ce", "softmax_ce", "l2")


@dataclass
class PhaseMask:
    """Per-step 0/1 indicators: story phase, answer phase, refresh samples."""
    story: np.ndarray
    answer: np.ndarray
    sample: np.ndarray | None = None

    def __post_init__(self):
        self.story = np.asarray(self.story, dtype=np.uint8)
        self.answer = np.asarray(self.answer, dtype=np.uint8)
        if self.story.shape != self.answer.shape:
            raise ValueError("story/answer masks differ in length")
        if (self.story & self.answer).any():
            raise ValueError("a step cannot be in both story and answer phase")
        if self.sample is not None:
            self.sample = np.asarray(self.sample, dtype=np.uint8)
            _check_sample(self.sample, self.story)

    @property
    def T(self):
        return int(self.story.shape[0])


@dataclass
class LossReport:
    """Scalar summary of one episode's objective."""
    task_loss: float
    mr_loss: float
    gamma: float
    total: float
    sampled_count: int


def _check_sample(sample, story):
    if sample.shape != story.shape:
        raise ValueError("sample mask length mismatch")
    if (sample & ~story.astype(bool)).any():
        raise ValueError("sample mask set outside the story phase")


def sample_mask(story, p, rng):
    """Independent Bernoulli(p) per story step; zero elsewhere.

    p=0 and p=1 short-circuit without consuming RNG draws, so a p=0 run
    shares every other random stream with a run that has the refresh loss
    compiled out.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"reproducing probability out of [0,1]: {p}")
    story = np.asarray(story, dtype=np.uint8)
    alpha = np.zeros_like(story)
    if p == 0.0:
        return alpha
    if p == 1.0:
        return story.copy()
    idx = np.nonzero(story)[0]
    alpha[idx] = rng.random(idx.shape[0]) < p
    return alpha


def step_loss(pred, target, kind):
    """Single-step loss; target is a constant vector (or class id for softmax)."""
    if kind == "sigmoid_ce":
        return T.bce_logits(pred, target)
    if kind == "softmax_ce":
        cls = int(target) if np.ndim(target) == 0 else int(np.argmax(target))
        return T.sce_logits(pred, cls)
    if kind == "l2":
        d = T.sub(pred, Tensor(np.asarray(target, dtype=np.float64)))
        return T.tsum(T.mul(d, d))
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {TASK_KINDS}")


def _masked_sum(preds, targets, mask, kind):
    total = None
    for t in np.nonzero(mask)[0]:
        if preds[t] is None:
            raise ValueError(f"missing prediction at masked step {t}")
        term = step_loss(preds[t], targets[t], kind)
        total = term if total is None else T.add(total, term)
    return Tensor(0.0) if total is None else total


def task_loss(outputs, targets, answer, kind):
    """Sum of per-step losses over answer steps; other steps contribute zero."""
    return _masked_sum(outputs, targets, np.asarray(answer, dtype=np.uint8), kind)


def mr_loss(recons, inputs, sample, kind):
    """Reconstruction loss of each sampled story step's own input."""
    return _masked_sum(recons, inputs, np.asarray(sample, dtype=np.uint8), kind)


def gamma(story, sample, answer):
    """max(1, sampled story steps / answer steps); depends only on counts."""
    story = np.asarray(story, dtype=np.uint8)
    answer = np.asarray(answer, dtype=np.uint8)
    sample = np.asarray(sample, dtype=np.uint8)
    _check_sample(sample, story)
    n_answer = int(answer.sum())
    if n_answer < 1:
        raise ValueError("gamma needs at least one answer step")
    g_hat = float((story & sample).sum()) / n_answer
    return g_hat if g_hat >= 1.0 else 1.0


def total_loss(task, mr, g):
    """L = gamma * task + mr (the sample-masked sum is folded into mr)."""
    return T.add(T.mul(task, float(g)), mr)
