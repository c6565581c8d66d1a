"""LSTM controller: state update, interface emission/parsing, output head.

The controller consumes the external input concatenated with the previous
read-outs, layer-normalizes its new hidden state, and projects it to one
operator slice per memory block plus the attentive-gate logits. Slice
order within a block: write key, write strength, erase, write values,
free gates, allocation gate, write gate, read keys, read strengths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .tensor import Tensor


@dataclass
class ControllerState:
    """Raw (pre-norm) hidden and cell vectors carried across steps."""
    h: Tensor
    c: Tensor


@dataclass
class BlockOperators:
    """One block's operators with activations already applied."""
    write_key: Tensor        # [L]
    write_strength: Tensor   # [1], >= 1
    erase: Tensor            # [L] in [0,1]
    write_values: Tensor     # [L]
    free_gates: Tensor       # [R] in [0,1]
    alloc_gate: Tensor       # [1] in [0,1]
    write_gate: Tensor       # [1] in [0,1]
    read_keys: list          # R tensors [L]
    read_strengths: Tensor   # [R], >= 1


@dataclass
class AttentiveGateLogits:
    """Raw block-selection logits, block-major: logits[k*R + i] for head i."""
    logits: Tensor           # [K*R]
    K: int
    R: int

    def head_logits(self, i):
        """The K logits competing for read head i (softmaxed over blocks)."""
        return T.gather(self.logits, [k * self.R + i for k in range(self.K)])


def zero_controller_state(cfg: ModelConfig) -> ControllerState:
    return ControllerState(h=Tensor(np.zeros(cfg.d_h)), c=Tensor(np.zeros(cfg.d_h)))


def controller_step(x, r_prev, state, lstm_w, lstm_b, ln_gain, ln_bias):
    """One LSTM step over [x; r_prev...; h_prev]; returns (h_norm, new state).

    Gate order in the packed projection is input, forget, candidate, output.
    """
    joint = T.concat([x] + list(r_prev) + [state.h])
    z = T.add(T.matmul(lstm_w, joint), lstm_b)
    c = T.lstm_c(z, state.c)
    h = T.lstm_h(z, c)
    h_norm = T.layer_norm(h, ln_gain, ln_bias)
    return h_norm, ControllerState(h=h, c=c)


def emit_interface(h_norm, w_xi):
    """Project the normalized hidden state to the raw interface vector."""
    return T.matmul(w_xi, h_norm)


def interface_layout(cfg: ModelConfig):
    """Slice plan covering the interface vector exactly, in emission order.

    Returns (per_block, gate_range) where per_block[k] maps field name to
    an index range into the interface vector and gate_range addresses the
    trailing K*R attentive logits.
    """
    L, R = cfg.L, cfg.R
    per_block = []
    off = 0
    for _ in range(cfg.K):
        fields = {}
        for name, width in (
            ("write_key", L),
            ("write_strength", 1),
            ("erase", L),
            ("write_values", L),
            ("free_gates", R),
            ("alloc_gate", 1),
            ("write_gate", 1),
            ("read_keys", L * R),
            ("read_strengths", R),
        ):
            fields[name] = (off, off + width)
            off += width
        per_block.append(fields)
    gate_range = (off, off + cfg.K * R)
    assert gate_range[1] == cfg.interface_width
    return per_block, gate_range


def parse_interface(xi, cfg: ModelConfig):
    """Split the interface vector into per-block operators plus gate logits.

    Strengths pass through oneplus (>= 1), erase and all gates through the
    sigmoid; keys and write values stay raw. The attentive logits stay raw
    here and are softmaxed over blocks at read time.
    """
    if xi.data.shape != (cfg.interface_width,):
        raise ValueError(f"interface width {xi.data.shape} != ({cfg.interface_width},)")
    per_block, gate_range = interface_layout(cfg)
    L, R = cfg.L, cfg.R
    blocks = []
    for fields in per_block:
        def cut(name):
            lo, hi = fields[name]
            return T.slice_(xi, lo, hi)

        rk_lo, _ = fields["read_keys"]
        blocks.append(BlockOperators(
            write_key=cut("write_key"),
            write_strength=T.oneplus(cut("write_strength")),
            erase=T.sigmoid(cut("erase")),
            write_values=cut("write_values"),
            free_gates=T.sigmoid(cut("free_gates")),
            alloc_gate=T.sigmoid(cut("alloc_gate")),
            write_gate=T.sigmoid(cut("write_gate")),
            read_keys=[T.slice_(xi, rk_lo + i * L, rk_lo + (i + 1) * L) for i in range(R)],
            read_strengths=T.oneplus(cut("read_strengths")),
        ))
    gates = AttentiveGateLogits(logits=T.slice_(xi, *gate_range), K=cfg.K, R=cfg.R)
    return blocks, gates


def output_head(h_dropped, r, w_y, mlp_layers=()):
    """y = w_y @ [h_dropped; r_1..r_R], optionally through a rectifier MLP tail.

    mlp_layers is a sequence of (weight, bias) pairs applied after y with
    ReLU between consecutive layers (and before the first).
    """
    y = T.matmul(w_y, T.concat([h_dropped] + list(r)))
    for j, (w, b) in enumerate(mlp_layers):
        y = T.relu(y) if j == 0 else y
        y = T.add(T.matmul(w, y), b)
        if j < len(mlp_layers) - 1:
            y = T.relu(y)
    return y
