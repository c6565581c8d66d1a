"""Training loop: RMSprop with momentum, gradient clipping, metrics, eval.

Determinism contract: a (seed, config) pair fixes the whole metric stream.
Four independent RNG streams are derived from the seed (data, refresh-loss
sampling, dropout, evaluation) so that enabling or disabling one consumer
never shifts the draws seen by another; in particular a run with p=0 is
bit-identical to a run with the refresh loss disabled outright.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import objectives as O
from .babi import babi_batch
from .config import ModelConfig
from .model import DamModel, HeadSpec
from .tasks import TaskSpec, generate
from .tensor import NonFiniteError, Tape

METRIC_COLUMNS = ("iter", "loss_task", "loss_mr", "gamma", "metric", "seconds")


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""


def rng_streams(seed, names=("data", "mrl", "dropout", "eval")):
    """Independent named generators derived from one seed."""
    out = {}
    for name in names:
        tag = int.from_bytes(hashlib.blake2s(name.encode(), digest_size=8).digest(), "little")
        out[name] = np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
    return out


class RmsProp:
    """ms <- d*ms + (1-d)*g^2; mom <- m*mom + lr*g/sqrt(ms+eps); p <- p - mom."""

    def __init__(self, params, lr, decay=0.9, momentum=0.9, eps=1e-10):
        self.params = params
        self.lr = lr
        self.decay = decay
        self.momentum = momentum
        self.eps = eps
        self.ms = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.mom = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            self.ms[name] = self.decay * self.ms[name] + (1.0 - self.decay) * g * g
            self.mom[name] = (self.momentum * self.mom[name]
                              + self.lr * g / np.sqrt(self.ms[name] + self.eps))
            p.data = p.data - self.mom[name]


def clip_gradients(params, max_norm):
    """Global-norm clipping across every parameter gradient; returns the norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# ---------------------------------------------------------------------------
# one episode: forward, losses, metric bookkeeping

@dataclass
class MetricAccum:
    kind: str
    hits: float = 0.0
    count: int = 0

    def update(self, pred, target):
        if self.kind == "bits":
            bits = (pred > 0).astype(np.float64)
            self.hits += float(np.abs(bits - target).sum())
            self.count += target.shape[0]
        elif self.kind == "argmax":
            want = int(target) if np.ndim(target) == 0 else int(np.argmax(target))
            self.hits += float(int(np.argmax(pred)) == want)
            self.count += 1
        elif self.kind == "wer":
            self.hits += float(int(np.argmax(pred)) != int(target))
            self.count += 1
        else:
            raise ValueError(f"unknown metric kind {self.kind!r}")

    def value(self):
        if self.count == 0:
            return 0.0
        if self.kind == "bits":
            return 1.0 - self.hits / self.count     # accuracy in [0,1]
        if self.kind == "argmax":
            return self.hits / self.count           # accuracy in [0,1]
        return 100.0 * self.hits / self.count       # word error rate in %


def episode_objective(model, spec, inputs, targets, mask, *, p, rng_mrl, rng_drop,
                      training=True, mrl_enabled=True, metric=None,
                      collect_gates=False):
    """Forward one episode and assemble its total loss and report."""
    T_b = mask.T
    answer = mask.answer.astype(bool)
    if mrl_enabled and training:
        alpha = O.sample_mask(mask.story, p, rng_mrl)
    else:
        alpha = np.zeros(T_b, dtype=np.uint8)
    sampled = alpha.astype(bool)

    reuse = spec.recon == "reuse"
    need_output = answer | (sampled if reuse else False)
    need_recon = np.zeros(T_b, dtype=bool) if reuse else sampled

    outputs, recons, gates = model.rollout(
        inputs[:T_b], rng=rng_drop, training=training,
        need_output=need_output, need_recon=need_recon,
        collect_gates=collect_gates)

    task = O.task_loss(outputs, targets[:T_b], mask.answer, spec.task_kind)
    if mrl_enabled:
        recon_list = outputs if reuse else recons
        mr = O.mr_loss(recon_list, inputs[:T_b], alpha, spec.mr_kind)
        g = O.gamma(mask.story, alpha, mask.answer)
        total = O.total_loss(task, mr, g)
        mr_val = mr.item()
    else:
        total = task
        g, mr_val = 1.0, 0.0

    if metric is not None:
        for t in np.nonzero(answer)[0]:
            metric.update(outputs[t].data, targets[t])

    report = O.LossReport(task_loss=task.item(), mr_loss=mr_val, gamma=g,
                          total=total.item(), sampled_count=int(alpha.sum()))
    return total, report, gates


def make_batch(spec, rngs, batch, task_params, corpus=None):
    if spec.name == "babi":
        if corpus is None:
            raise ValueError("babi training needs a loaded corpus")
        return babi_batch(corpus, rngs["data"], batch, split="train")
    return generate(spec.name, rngs["data"], batch, **task_params)


def evaluate(model, spec, batch):
    """Deterministic evaluation (dropout off, no recording) over a batch."""
    metric = MetricAccum(spec.metric)
    task_sum = 0.0
    for b in range(batch.batch_size):
        _, rep, _ = episode_objective(
            model, spec, batch.inputs[b], batch.targets[b], batch.masks[b],
            p=0.0, rng_mrl=None, rng_drop=None, training=False,
            mrl_enabled=False, metric=metric)
        task_sum += rep.task_loss
    return EvalResult(metric=metric.value(),
                      task_loss=task_sum / batch.batch_size,
                      episodes=batch.batch_size)


@dataclass
class EvalResult:
    metric: float
    task_loss: float
    episodes: int


@dataclass
class TrainRecord:
    """Everything needed to resume: model, optimizer, RNG streams, counters."""
    model: DamModel
    opt: RmsProp
    rngs: dict
    iteration: int
    meta: dict


@dataclass
class TrainResult:
    record: TrainRecord
    rows: list = field(default_factory=list)         # metric CSV rows
    eval_history: list = field(default_factory=list)  # (iteration, metric)
    reached_target_at: int | None = None


def head_spec_for(spec: TaskSpec) -> HeadSpec:
    return HeadSpec(mlp=spec.mlp, recon=spec.recon, vocab=spec.vocab)


def build_model(spec: TaskSpec, cfg: ModelConfig, seed) -> DamModel:
    return DamModel(cfg, head_spec_for(spec), seed=seed)


def _write_rows(path, rows, fresh):
    fresh = fresh or not Path(path).exists()
    with open(path, "w" if fresh else "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def train(spec: TaskSpec, cfg: ModelConfig, *, seed=0, iterations=1000, batch=16,
          lr=1e-4, task_params=None, corpus=None, out_dir=None,
          checkpoint_every=1000, max_grad_norm=10.0, mrl_enabled=True,
          log_gates=False, eval_every=0, eval_episodes=16, target_metric=None,
          resume: TrainRecord | None = None) -> TrainResult:
    """Run the optimization loop; returns the final record plus metric rows.

    Loss for one iteration is the batch mean of per-episode totals
    (gamma * task + refresh). Checkpoints go to out_dir every
    checkpoint_every iterations and at the end; a non-finite loss or
    gradient aborts with the last good checkpoint left on disk.
    """
    from .checkpoint import save_checkpoint  # local import to avoid a cycle

    task_params = dict(task_params or {})
    if resume is not None:
        model, opt, rngs = resume.model, resume.opt, resume.rngs
        start = resume.iteration
        meta = resume.meta
    else:
        model = build_model(spec, cfg, seed)
        opt = RmsProp(model.params, lr)
        rngs = rng_streams(seed)
        start = 0
        meta = {"task": spec.name, "seed": int(seed), "lr": lr, "batch": int(batch),
                "mrl_enabled": bool(mrl_enabled), "task_params": task_params,
                "max_grad_norm": float(max_grad_norm)}

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.damc" if out else None

    result = TrainResult(record=TrainRecord(model, opt, rngs, start, meta))
    gate_rows = []
    t0 = time.perf_counter()

    for it in range(start + 1, iterations + 1):
        ep = make_batch(spec, rngs, batch, task_params, corpus=corpus)
        metric = MetricAccum(spec.metric)
        reports = []
        try:
            with Tape() as tape:
                total = None
                for b in range(ep.batch_size):
                    loss_b, rep, gates = episode_objective(
                        model, spec, ep.inputs[b], ep.targets[b], ep.masks[b],
                        p=cfg.p, rng_mrl=rngs["mrl"], rng_drop=rngs["dropout"],
                        training=True, mrl_enabled=mrl_enabled, metric=metric,
                        collect_gates=log_gates and b == 0)
                    reports.append(rep)
                    total = loss_b if total is None else total + loss_b
                    if log_gates and b == 0:
                        for t, gm in enumerate(gates):
                            gate_rows.append([it, t] + [f"{v:.8g}" for v in gm.reshape(-1)])
                mean_loss = total * (1.0 / ep.batch_size)
                model.zero_grads()
                tape.backward(mean_loss)
            clip_gradients(model.params, max_grad_norm)
            opt.step()
        except NonFiniteError as err:
            _flush_outputs(out, result.rows, gate_rows, start, log_gates)
            raise TrainingAborted(
                f"iteration {it}: {err}; last checkpoint retained") from err

        result.record.iteration = it
        row = (it,
               float(np.mean([r.task_loss for r in reports])),
               float(np.mean([r.mr_loss for r in reports])),
               float(np.mean([r.gamma for r in reports])),
               metric.value(),
               time.perf_counter() - t0)
        result.rows.append(row)

        if eval_every and it % eval_every == 0:
            ev_batch = _eval_batch(spec, rngs, eval_episodes, task_params, corpus)
            ev = evaluate(model, spec, ev_batch)
            result.eval_history.append((it, ev.metric))
            if target_metric is not None and _metric_reached(spec, ev.metric, target_metric):
                result.reached_target_at = it
                break

        if ckpt_path and it % checkpoint_every == 0:
            save_checkpoint(ckpt_path, result.record)

    _flush_outputs(out, result.rows, gate_rows, start, log_gates)
    if ckpt_path:
        save_checkpoint(ckpt_path, result.record)
    return result


def _metric_reached(spec, value, target):
    if spec.metric == "wer":
        return value <= target
    return value >= target


def _eval_batch(spec, rngs, episodes, task_params, corpus):
    if spec.name == "babi":
        return babi_batch(corpus, rngs["eval"], episodes, split="test")
    return generate(spec.name, rngs["eval"], episodes, **task_params)


def _flush_outputs(out, rows, gate_rows, start, log_gates):
    if out is None:
        return
    _write_rows(out / "metrics.csv", rows, fresh=start == 0)
    if log_gates and gate_rows:
        path = out / "gates.csv"
        fresh = start == 0
        with open(path, "w" if fresh else "a", newline="") as fh:
            w = csv.writer(fh)
            if fresh and gate_rows:
                k_r = len(gate_rows[0]) - 2
                w.writerow(["iter", "step"] + [f"g{j}" for j in range(k_r)])
            w.writerows(gate_rows)
