"""Per-node categorical controller trained with the risk-seeking policy gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z)
    e = np.exp(z)
    return e / e.sum()


@dataclass
class ControllerState:
    logits: list[np.ndarray]
    lr: float = 0.002
    epsilon: float = 0.1
    nu_q: float = 0.5
    step: int = 0

    def __post_init__(self):
        self.logits = [np.array(row, dtype=float) for row in self.logits]
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.nu_q < 1.0:
            raise ValueError("quantile level nu_q must lie in (0, 1)")
        if any(row.ndim != 1 or row.size < 1 for row in self.logits):
            raise ValueError("each node needs a non-empty logit vector")

    @classmethod
    def uniform(cls, sizes: Sequence[int], **kw) -> "ControllerState":
        return cls([np.zeros(n) for n in sizes], **kw)

    def probs(self) -> list[np.ndarray]:
        return [softmax(row) for row in self.logits]

    def to_dict(self) -> dict:
        return {"logits": [row.tolist() for row in self.logits], "epsilon": self.epsilon,
                "nu_q": self.nu_q, "lr": self.lr, "step": self.step}

    @classmethod
    def from_dict(cls, rec: dict) -> "ControllerState":
        return cls(rec["logits"], lr=rec["lr"], epsilon=rec["epsilon"], nu_q=rec["nu_q"], step=rec["step"])


@dataclass
class ScoredBatch:
    sequences: list[tuple[int, ...]]
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if len(self.sequences) != self.scores.size:
            raise ValueError("sequences and scores differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")


def sample_sequence(c: ControllerState, rng: np.random.Generator) -> tuple[int, ...]:
    """One operator per node: uniform with prob. epsilon, else from the softmax."""
    out = []
    for row in c.logits:
        if rng.random() < c.epsilon:
            out.append(int(rng.integers(row.size)))
        else:
            out.append(int(rng.choice(row.size, p=softmax(row))))
    return tuple(out)


def log_prob(c: ControllerState, e: Sequence[int]) -> float:
    return float(sum(math.log(softmax(row)[k]) for row, k in zip(c.logits, e)))


def log_prob_grad(c: ControllerState, e: Sequence[int]) -> np.ndarray:
    """Gradient of ``sum_i log p_i(e_i)`` w.r.t. the flattened logits."""
    if len(e) != len(c.logits):
        raise ValueError("sequence length does not match controller")
    parts = []
    for row, k in zip(c.logits, e):
        g = -softmax(row)
        g[k] += 1.0
        parts.append(g)
    return np.concatenate(parts)


def quantile_threshold(scores, nu_q: float) -> float:
    """Lower empirical (1 - nu_q)-quantile: the ceil((1 - nu_q) N)-th smallest score."""
    s = np.sort(np.asarray(scores, dtype=float))
    # guard against (1 - nu_q) * N landing a hair above an integer
    k = max(1, math.ceil((1.0 - nu_q) * s.size - 1e-9))
    return float(s[k - 1])


def policy_gradient(c: ControllerState, batch: ScoredBatch) -> np.ndarray:
    """Risk-seeking estimate ``(1/N) sum (S - S_q) 1{S >= S_q} grad log p``."""
    N = batch.scores.size
    if N < 1:
        raise ValueError("empty batch")
    thr = quantile_threshold(batch.scores, c.nu_q)
    total = np.zeros(sum(row.size for row in c.logits))
    for e, s in zip(batch.sequences, batch.scores):
        # terms with s == thr carry zero advantage
        if s > thr:
            total += (s - thr) * log_prob_grad(c, e)
    return total / N


def update(c: ControllerState, batch: ScoredBatch) -> ControllerState:
    """Gradient ascent step; returns a new state."""
    g = policy_gradient(c, batch)
    flat = np.concatenate(c.logits) + c.lr * g
    rows, pos = [], 0
    for row in c.logits:
        rows.append(flat[pos:pos + row.size])
        pos += row.size
    return ControllerState(rows, lr=c.lr, epsilon=c.epsilon, nu_q=c.nu_q, step=c.step + 1)
