"""Command line: train / eval / gradcheck / datagen over key=value configs.

Configuration resolution order: task defaults, then the --config file
(one `key=value` per line, '#' comments), then explicit flags. Unknown
keys are rejected. The effective configuration is echoed into the output
directory as effective.cfg for provenance.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from .babi import BabiFormatError, episodes_from, load_babi
from .checkpoint import CheckpointError, load_train_record, read_checkpoint
from .config import ModelConfig
from .episodefile import EpisodeFileError, write_episodes
from .gradcheck import REL_TOL, model_check, run_op_suite
from .objectives import sample_mask
from .tasks import TASK_NAMES, generate, task_spec
from .tensor import NonFiniteError
from .trainer import TrainingAborted, evaluate, train

# key -> (type, default, help); None defaults fall back to task defaults
_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}

KEYS = {
    "task": (str, None, f"task name, one of {', '.join(TASK_NAMES)}"),
    "seed": (int, 0, "base seed for all random streams"),
    "out": (str, None, "output directory (metrics, checkpoints, config echo)"),
    "checkpoint": (str, None, "checkpoint file to load (eval) or resume from (train)"),
    "K": (int, None, "memory blocks"),
    "A": (int, None, "addresses per block"),
    "L": (int, None, "word length per address"),
    "R": (int, None, "read heads"),
    "d_h": (int, None, "controller hidden width"),
    "p": (float, None, "reproducing probability of the refresh loss"),
    "p_dp": (float, 0.0, "dropout probability on the normalized hidden state"),
    "lr": (float, None, "learning rate"),
    "batch": (int, None, "episodes per iteration"),
    "iterations": (int, None, "training iterations"),
    "checkpoint_every": (int, 1000, "checkpoint cadence in iterations"),
    "max_grad_norm": (float, 10.0, "global gradient-norm clip"),
    "threads": (int, 1, "worker threads (only 1 is implemented; >1 warns)"),
    "babi_path": (str, None, "bAbI en-10k directory (or env DAM_BABI_PATH)"),
    "eval_episodes": (int, 64, "episodes per evaluation"),
    "eval_every": (int, 0, "evaluate every N iterations during training (0: never)"),
    "target_metric": (float, None, "stop training once the eval metric reaches this"),
    "log_gates": (bool, False, "append per-step attentive-gate values to gates.csv"),
    "mrl_enabled": (bool, True, "false compiles the refresh loss out entirely"),
    "episodes": (int, 64, "episode count for datagen"),
    "gc_samples": (int, 100, "random inputs per op in gradcheck"),
    # generator parameters
    "W": (int, None, "data word width (copy, recall tasks)"),
    "li_lo": (int, None, "min story length / item count"),
    "li_hi": (int, None, "max story length / item count"),
    "li": (int, None, "stored vector count (repr_recall)"),
    "n_items": (int, None, "vectors per item (assoc_recall)"),
    "n_seg": (int, None, "half the segment count (repr_recall)"),
    "lc_lo": (int, None, "min cue count (repr_recall)"),
    "lc_hi": (int, None, "max cue count (repr_recall)"),
    "n_points": (int, None, "fixed point count (convex_hull; default draws 5..20)"),
}

_TASK_PARAM_KEYS = {
    "copy": ("W", "li_lo", "li_hi"),
    "assoc_recall": ("W", "n_items", "li_lo", "li_hi"),
    "repr_recall": ("W", "li", "n_seg", "lc_lo", "lc_hi"),
    "nth_farthest": (),
    "convex_hull": ("n_points",),
    "babi": (),
}


class CliError(ValueError):
    pass


def _convert(key, raw):
    if key not in KEYS:
        raise CliError(f"unknown configuration key {key!r}")
    typ = KEYS[key][0]
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        val = _BOOL.get(str(raw).strip().lower())
        if val is None:
            raise CliError(f"key {key!r} expects true/false, got {raw!r}")
        return val
    try:
        return typ(raw)
    except ValueError as err:
        raise CliError(f"key {key!r}: {err}") from err


def parse_config_file(path):
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise CliError(f"cannot read config file: {err}") from err
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        cfg[key.strip()] = _convert(key.strip(), raw.strip())
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dam",
        description="distributed associative memory network with refresh loss")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (("train", "run the training loop"),
                        ("eval", "evaluate a checkpoint"),
                        ("gradcheck", "finite-difference gradient verification"),
                        ("datagen", "write generated episodes to a binary file")):
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", default=None, help="key=value configuration file")
        for key, (typ, _, help_text) in KEYS.items():
            p.add_argument(f"--{key}", default=None, metavar="V", help=help_text)
    return parser


def resolve(args):
    """Merge task defaults <- config file <- command-line flags.

    cfg["_explicit"] records which keys the user actually set, so resume
    can tell a deliberate override (say, a fine-tuning --lr) from a
    default that should defer to the checkpoint.
    """
    cfg = {k: d for k, (_, d, _) in KEYS.items() if d is not None}
    explicit = set()
    if args.config:
        file_cfg = parse_config_file(args.config)
        explicit |= set(file_cfg)
        cfg.update(file_cfg)
    for key in KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            cfg[key] = _convert(key, raw)
            explicit.add(key)
    cfg["_explicit"] = explicit
    task = cfg.get("task")
    if task is not None:
        if task not in TASK_NAMES:
            raise CliError(f"unknown task {task!r}; expected one of {TASK_NAMES}")
        for key, val in task_spec(task, **_gen_params(cfg, task)).defaults.items():
            cfg.setdefault(key, val)
    if cfg.get("threads", 1) > 1:
        print("warning: threads > 1 requested; running single-threaded", file=sys.stderr)
    return cfg


def _gen_params(cfg, task):
    params = {}
    for key in _TASK_PARAM_KEYS.get(task, ()):
        if cfg.get(key) is not None:
            params[key] = cfg[key]
    for key in _TASK_PARAM_KEYS["copy"] + ("n_items", "n_seg", "lc_lo", "lc_hi",
                                            "li", "n_points"):
        if cfg.get(key) is not None and key not in _TASK_PARAM_KEYS.get(task, ()):
            raise CliError(f"key {key!r} does not apply to task {task!r}")
    return params


def _model_config(cfg, spec):
    missing = [k for k in ("K", "A", "L", "R", "d_h") if cfg.get(k) is None]
    if missing:
        raise CliError(f"missing model keys: {', '.join(missing)}")
    return ModelConfig(K=cfg["K"], A=cfg["A"], L=cfg["L"], R=cfg["R"],
                       d_h=cfg["d_h"], d_i=spec.d_i, d_o=spec.d_o,
                       p_dp=cfg.get("p_dp", 0.0), p=cfg.get("p", 0.0))


def echo_config(cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={cfg[k]}" for k in sorted(cfg)
             if cfg[k] is not None and k in KEYS]
    (out_dir / "effective.cfg").write_text("\n".join(lines) + "\n")


def _babi_corpus(cfg):
    path = cfg.get("babi_path") or os.environ.get("DAM_BABI_PATH")
    if not path:
        raise CliError("babi task needs --babi_path or DAM_BABI_PATH")
    return load_babi(path, strict=True)


def cmd_train(cfg):
    explicit = cfg.get("_explicit", set())
    if cfg.get("checkpoint"):
        # the checkpoint supplies task, shape, and training settings;
        # explicit flags (say a fine-tuning --lr) override it
        meta = read_checkpoint(cfg["checkpoint"])[0]
        if "task" in explicit and cfg.get("task") != meta["task"]:
            raise CliError(
                f"checkpoint trains {meta['task']!r}, requested {cfg.get('task')!r}")
        cfg["task"] = meta["task"]
        for key in ("K", "A", "L", "R", "d_h", "p", "p_dp",
                    "lr", "batch", "mrl_enabled"):
            if key not in explicit and key in meta:
                cfg[key] = meta[key]
        if not any(k in explicit for k in _TASK_PARAM_KEYS.get(meta["task"], ())):
            cfg.update(meta.get("task_params", {}))
    if not cfg.get("task"):
        raise CliError("train needs --task")
    task = cfg["task"]
    params = _gen_params(cfg, task)
    spec = task_spec(task, **params)
    for key, val in spec.defaults.items():
        cfg.setdefault(key, val)
    corpus = _babi_corpus(cfg) if task == "babi" else None
    model_cfg = _model_config(cfg, spec)
    if cfg.get("out"):
        echo_config(cfg, cfg["out"])
    resume = None
    if cfg.get("checkpoint"):
        resume = load_train_record(cfg["checkpoint"], expect_cfg=model_cfg)
        if "lr" in explicit:
            resume.opt.lr = cfg["lr"]
            resume.meta["lr"] = cfg["lr"]
    result = train(spec, model_cfg,
                   seed=cfg["seed"], iterations=cfg["iterations"],
                   batch=cfg["batch"], lr=cfg["lr"], task_params=params,
                   corpus=corpus, out_dir=cfg.get("out"),
                   checkpoint_every=cfg["checkpoint_every"],
                   max_grad_norm=cfg["max_grad_norm"],
                   mrl_enabled=cfg["mrl_enabled"], log_gates=cfg["log_gates"],
                   eval_every=cfg["eval_every"],
                   eval_episodes=cfg["eval_episodes"],
                   target_metric=cfg.get("target_metric"))
    if result.rows:
        last = result.rows[-1]
        print(f"iter {last[0]}: loss_task={last[1]:.6g} loss_mr={last[2]:.6g} "
              f"gamma={last[3]:.4g} metric={last[4]:.4g}")
    if result.reached_target_at:
        print(f"target metric reached at iteration {result.reached_target_at}")
    if cfg.get("out"):
        print(f"outputs in {cfg['out']}")
    return 0


def cmd_eval(cfg):
    if not cfg.get("checkpoint"):
        raise CliError("eval needs --checkpoint")
    record = load_train_record(cfg["checkpoint"])
    task = record.meta["task"]
    params = record.meta.get("task_params", {})
    spec = task_spec(task, **params)
    rng = np.random.default_rng(cfg["seed"] + 0x5EED)
    if task == "babi":
        corpus = _babi_corpus(cfg)
        n = min(cfg["eval_episodes"], len(corpus.test))
        batch = episodes_from(corpus, rng.choice(len(corpus.test), n, replace=False))
    else:
        batch = generate(task, rng, cfg["eval_episodes"], **params)
    res = evaluate(record.model, spec, batch)
    unit = "wer%" if spec.metric == "wer" else "accuracy"
    print(f"task={task} episodes={res.episodes} {unit}={res.metric:.4f} "
          f"task_loss={res.task_loss:.6g}")
    if cfg.get("out"):
        echo_config(cfg, cfg["out"])
    return 0


def cmd_gradcheck(cfg):
    t0 = time.perf_counter()
    results = run_op_suite(samples=cfg["gc_samples"], seed=7)
    worst = 0.0
    for name in sorted(results):
        err = results[name]
        worst = max(worst, err)
        print(f"op {name:20s} max rel err {err:.3e}")
    explicit = cfg.get("_explicit", set())
    dims = dict(K=cfg.get("K") or 2, A=cfg.get("A") or 4, L=cfg.get("L") or 5,
                R=cfg.get("R") or 2, d_h=cfg.get("d_h") or 16)
    p = cfg["p"] if "p" in explicit else 0.5
    p_dp = cfg["p_dp"] if "p_dp" in explicit else 0.25
    for recon in ("reuse", "linear"):
        err = model_check(p=p, p_dp=p_dp, recon=recon, **dims)
        worst = max(worst, err)
        print(f"model ({recon} reconstruction head) max rel err {err:.3e}")
    print(f"gradcheck worst {worst:.3e} (tolerance {REL_TOL:g}) "
          f"in {time.perf_counter() - t0:.1f}s")
    if worst >= REL_TOL:
        print("gradcheck FAILED", file=sys.stderr)
        return 1
    print("gradcheck passed")
    return 0


def cmd_datagen(cfg):
    if not cfg.get("task"):
        raise CliError("datagen needs --task")
    task = cfg["task"]
    if task == "babi":
        raise CliError("datagen covers the synthetic tasks; babi loads from disk")
    if not cfg.get("out"):
        raise CliError("datagen needs --out FILE")
    params = _gen_params(cfg, task)
    rng = np.random.default_rng(cfg["seed"])
    batches = []
    for _ in range(cfg["episodes"]):
        ep = generate(task, rng, 1, **params)
        if cfg.get("p"):
            for m in ep.masks:
                m.sample = sample_mask(m.story, cfg["p"], rng)
        batches.append(ep)
    write_episodes(cfg["out"], batches)
    print(f"wrote {cfg['episodes']} episodes to {cfg['out']}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        handler = {"train": cmd_train, "eval": cmd_eval,
                   "gradcheck": cmd_gradcheck, "datagen": cmd_datagen}[args.command]
        return handler(cfg)
    except (CliError, CheckpointError, BabiFormatError, EpisodeFileError,
            NonFiniteError, TrainingAborted, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
