"""Dimensional hyperparameters shared by the controller, memory, and trainer."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ModelConfig:
    """Sizes and probabilities that fix every tensor shape in the model.

    K: memory blocks; A: addresses per block; L: word length; R: read heads;
    d_h: controller width; d_i/d_o: input/output width; p_dp: dropout
    probability; p: reproducing probability for the refresh loss.
    """

    K: int
    A: int
    L: int
    R: int
    d_h: int
    d_i: int
    d_o: int
    p_dp: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        for name in ("K", "A", "L", "R", "d_h", "d_i", "d_o"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"reproducing probability p out of [0,1]: {self.p}")
        if not (0.0 <= self.p_dp < 1.0):
            raise ValueError(f"dropout probability p_dp out of [0,1): {self.p_dp}")

    @property
    def block_width(self):
        """Raw operator slice width per memory block."""
        return self.L * self.R + 3 * self.L + 2 * self.R + 3

    @property
    def interface_width(self):
        """Width of the full interface vector: K blocks plus K*R gate logits."""
        return self.K * (self.L * self.R + 3 * self.L + 3 * self.R + 3)
