"""The full memory-network model: parameters, one step, episode rollout.

A step runs controller -> interface emit/parse -> per-block write-then-read
-> attentive read -> output head. Parameters are float64 tensors in a flat
named dict so the optimizer and checkpoints can treat them uniformly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .controller import (ControllerState, controller_step, emit_interface,
                         output_head, parse_interface, zero_controller_state)
from .memory import MemoryState, memory_step, zero_memory_state
from .tensor import Tensor


@dataclass
class HeadSpec:
    """Task-side head layout.

    mlp: (hidden_width, n_layers) for a rectifier MLP tail after the output
    projection, or None for a plain linear output. recon: 'reuse' feeds the
    task output itself to the refresh loss, 'linear' adds a dedicated
    input-reconstruction projection. vocab: embedding table size for
    token-id inputs (None for dense vector inputs).
    """
    mlp: tuple | None = None
    recon: str = "reuse"
    vocab: int | None = None


@dataclass
class StepResult:
    output: Tensor | None
    recon: Tensor | None
    ctrl: ControllerState
    mem: MemoryState
    gates: np.ndarray      # [K, R] softmaxed attentive gates, for diagnostics


def _param_rng(seed, name):
    tag = int.from_bytes(hashlib.blake2s(name.encode(), digest_size=8).digest(), "little")
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def _uniform(seed, name, shape, bound):
    return Tensor(_param_rng(seed, name).uniform(-bound, bound, shape), requires_grad=True)


class DamModel:
    """Parameter container plus the step/rollout functions that use them.

    Each parameter is initialized from an RNG stream derived from (seed,
    parameter name), so adding or removing an optional head never shifts
    the initialization of the others.
    """

    def __init__(self, cfg: ModelConfig, head: HeadSpec | None = None, seed: int = 0):
        self.cfg = cfg
        self.head = head or HeadSpec()
        self.seed = seed
        p = {}
        d_h, d_i, d_o = cfg.d_h, cfg.d_i, cfg.d_o
        read_width = cfg.R * cfg.L
        lstm_in = d_i + read_width + d_h
        bound = 1.0 / np.sqrt(d_h)

        p["lstm_w"] = _uniform(seed, "lstm_w", (4 * d_h, lstm_in), bound)
        lstm_b = np.zeros(4 * d_h)
        lstm_b[d_h:2 * d_h] = 1.0  # forget-gate bias favors remembering early on
        p["lstm_b"] = Tensor(lstm_b, requires_grad=True)
        p["ln_gain"] = Tensor(np.ones(d_h), requires_grad=True)
        p["ln_bias"] = Tensor(np.zeros(d_h), requires_grad=True)
        p["w_xi"] = _uniform(seed, "w_xi", (cfg.interface_width, d_h), bound)

        y_in = d_h + read_width
        if self.head.mlp is None:
            p["w_y"] = _uniform(seed, "w_y", (d_o, y_in), 1.0 / np.sqrt(y_in))
        else:
            width, layers = self.head.mlp
            p["w_y"] = _uniform(seed, "w_y", (width, y_in), 1.0 / np.sqrt(y_in))
            for j in range(layers):
                n_out = d_o if j == layers - 1 else width
                p[f"mlp_w{j}"] = _uniform(seed, f"mlp_w{j}", (n_out, width), 1.0 / np.sqrt(width))
                p[f"mlp_b{j}"] = Tensor(np.zeros(n_out), requires_grad=True)
        if self.head.recon == "linear":
            p["w_mr"] = _uniform(seed, "w_mr", (d_i, y_in), 1.0 / np.sqrt(y_in))
            p["b_mr"] = Tensor(np.zeros(d_i), requires_grad=True)
        if self.head.vocab is not None:
            p["embed"] = _uniform(seed, "embed", (self.head.vocab, d_i), 1.0 / np.sqrt(d_i))

        self.params = p

    # -- plumbing ----------------------------------------------------------

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def _mlp_layers(self):
        if self.head.mlp is None:
            return ()
        _, layers = self.head.mlp
        return [(self.params[f"mlp_w{j}"], self.params[f"mlp_b{j}"]) for j in range(layers)]

    def init_state(self):
        return zero_controller_state(self.cfg), zero_memory_state(self.cfg)

    def input_tensor(self, raw):
        """Dense vectors pass through; token ids go through the embedding."""
        if self.head.vocab is not None:
            return T.embed_row(self.params["embed"], int(raw))
        return Tensor(np.asarray(raw, dtype=np.float64))

    # -- the step ----------------------------------------------------------

    def step(self, x, ctrl, mem, rng=None, training=False,
             need_output=True, need_recon=False) -> StepResult:
        """One full model step; reads see the post-write memory contents."""
        p = self.params
        h_norm, ctrl2 = controller_step(x, mem.read_out, ctrl,
                                        p["lstm_w"], p["lstm_b"],
                                        p["ln_gain"], p["ln_bias"])
        xi = emit_interface(h_norm, p["w_xi"])
        blocks_ops, gate_logits = parse_interface(xi, self.cfg)
        mem2, gates = memory_step(mem, blocks_ops, gate_logits)

        out = recon = None
        if need_output or need_recon:
            h_dp = T.dropout(h_norm, self.cfg.p_dp, training, rng)
            if need_output or (need_recon and self.head.recon == "reuse"):
                out = output_head(h_dp, mem2.read_out, p["w_y"], self._mlp_layers())
            if need_recon:
                if self.head.recon == "reuse":
                    recon = out
                else:
                    joint = T.concat([h_dp] + list(mem2.read_out))
                    recon = T.add(T.matmul(p["w_mr"], joint), p["b_mr"])
        return StepResult(output=out, recon=recon, ctrl=ctrl2, mem=mem2, gates=gates)

    def rollout(self, inputs, rng=None, training=False,
                need_output=None, need_recon=None, collect_gates=False):
        """Run a whole input sequence; returns per-step outputs/recons/gates.

        need_output / need_recon are per-step boolean vectors (None means
        outputs at every step, reconstructions never).
        """
        steps = len(inputs)
        ctrl, mem = self.init_state()
        outputs = [None] * steps
        recons = [None] * steps
        gates = []
        for t in range(steps):
            x = self.input_tensor(inputs[t])
            want_y = True if need_output is None else bool(need_output[t])
            want_r = False if need_recon is None else bool(need_recon[t])
            res = self.step(x, ctrl, mem, rng=rng, training=training,
                            need_output=want_y, need_recon=want_r)
            ctrl, mem = res.ctrl, res.mem
            outputs[t] = res.output
            recons[t] = res.recon
            if collect_gates:
                gates.append(res.gates)
        return outputs, recons, gates
