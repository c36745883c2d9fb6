"""Adam and BFGS for the continuous tree parameters, plus the candidate score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class AdamConfig:
    lr: float = 1e-3
    steps: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    schedule: str = "constant"  # or "cosine": lr -> lr * final_frac
    final_frac: float = 0.01

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("Adam learning rate must be positive")
        if self.steps < 0:
            raise ValueError("Adam step count must be non-negative")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.schedule!r}")

    def lr_at(self, t: int) -> float:
        if self.schedule == "constant" or self.steps <= 1:
            return self.lr
        lo = self.lr * self.final_frac
        return lo + 0.5 * (self.lr - lo) * (1.0 + math.cos(math.pi * t / (self.steps - 1)))


@dataclass
class BfgsConfig:
    step: float = 1.0
    max_steps: int = 20
    gtol: float = 1e-10
    c1: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 50
    curvature_eps: float = 1e-12

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("BFGS max_steps must be non-negative")


@dataclass
class OptimizeResult:
    theta: np.ndarray
    value: float
    iterations: int
    status: str = "ok"  # ok | converged | nonfinite | line_search_failed

    def __iter__(self):
        yield self.theta
        yield self.value


def adam_run(objective: Objective, theta0, cfg: AdamConfig) -> OptimizeResult:
    """Adam with bias correction; returns the best iterate seen."""
    theta = np.array(theta0, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    best_theta, best_val = theta.copy(), math.inf
    b1, b2 = cfg.beta1, cfg.beta2
    for t in range(cfg.steps):
        val, g = objective(theta)
        if not (math.isfinite(val) and np.all(np.isfinite(g))):
            if math.isinf(best_val):
                best_val = val
            return OptimizeResult(best_theta, best_val, t, "nonfinite")
        if val < best_val:
            best_theta, best_val = theta.copy(), val
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** (t + 1))
        vhat = v / (1.0 - b2 ** (t + 1))
        theta = theta - cfg.lr_at(t) * mhat / (np.sqrt(vhat) + cfg.eps_hat)
    val, g = objective(theta)
    if math.isfinite(val) and val < best_val:
        best_theta, best_val = theta.copy(), val
    return OptimizeResult(best_theta, best_val, cfg.steps)


def bfgs_run(objective: Objective, theta0, cfg: BfgsConfig) -> OptimizeResult:
    """BFGS on the inverse Hessian with Armijo backtracking from ``cfg.step``."""
    x = np.array(theta0, dtype=float)
    f, g = objective(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        return OptimizeResult(x, f, 0, "nonfinite")
    n = x.size
    H = np.eye(n)
    scaled = False
    for k in range(cfg.max_steps):
        if np.linalg.norm(g) <= cfg.gtol:
            return OptimizeResult(x, f, k, "converged")
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            # lost descent; restart from steepest descent
            H = np.eye(n)
            p = -g
            slope = -float(g @ g)
        t = cfg.step
        for _ in range(cfg.max_backtracks):
            x_new = x + t * p
            f_new, g_new = objective(x_new)
            if math.isfinite(f_new) and f_new <= f + cfg.c1 * t * slope:
                break
            t *= cfg.shrink
        else:
            return OptimizeResult(x, f, k, "line_search_failed")
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > cfg.curvature_eps * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = np.eye(n) * (sy / float(y @ y))
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    status = "converged" if np.linalg.norm(g) <= cfg.gtol else "ok"
    return OptimizeResult(x, f, cfg.max_steps, status)


def score_from_loss(value: float) -> float:
    if not math.isfinite(value) or value < 0:
        return 0.0
    return 1.0 / (1.0 + value)


@dataclass
class ScoreResult:
    score: float
    loss: float
    theta: np.ndarray
    iterations: int


def compute_score(loss_fn, skel, ops, theta_init, t1: AdamConfig, t2: BfgsConfig) -> ScoreResult:
    """Coarse-tune θ (Adam then BFGS) and return ``1 / (1 + loss)``.

    ``loss_fn`` is a :class:`~fextn.problems.LossFunction` bound to the
    sample set.
    """

    def objective(theta):
        return loss_fn.value_and_grad(skel, ops, theta)

    first = adam_run(objective, theta_init, t1)
    second = bfgs_run(objective, first.theta, t2)
    best = second if second.value <= first.value else first
    return ScoreResult(score_from_loss(best.value), best.value, best.theta,
                       first.iterations + second.iterations)
