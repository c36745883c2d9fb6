"""Shallow tanh networks built the TransNet way.

Neurons are written as ``tanh(gamma * (a . y + r))`` with unit directions
``a`` and offsets ``r`` in [0, 1] spread uniformly, a single shape parameter
``gamma`` picked by grid search against Gaussian-random-field targets, and the
output layer fitted by linear least squares.  One-dimensional fits are
wrapped as :class:`TnOperator` so they can sit in an expression tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .operators import UnaryOperator

JITTERS = (1e-10, 1e-8, 1e-6)
SUP_GRID = 1001


@dataclass(frozen=True)
class FeatureBasis:
    directions: np.ndarray  # (M, d), unit rows
    offsets: np.ndarray  # (M,)
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("shape parameter gamma must be positive")
        if self.directions.ndim != 2 or self.directions.shape[0] != self.offsets.shape[0]:
            raise ValueError("directions must be (M, d) and offsets (M,)")

    @property
    def size(self) -> int:
        return self.offsets.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return self.gamma * self.directions

    @property
    def biases(self) -> np.ndarray:
        return self.gamma * self.offsets

    def design(self, Y) -> np.ndarray:
        """Design matrix ``[1, psi_1(y), ..., psi_M(y)]`` of shape (J, M+1)."""
        Y = np.asarray(Y, dtype=float)
        Y = Y[:, None] if Y.ndim == 1 and self.dim == 1 else np.atleast_2d(Y)
        Z = Y @ self.weights.T + self.biases
        return np.hstack([np.ones((Y.shape[0], 1)), np.tanh(Z)])


def sample_locations(M: int, d: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Directions uniform on the unit sphere (normalised Gaussians), offsets U[0, 1]."""
    if M < 1 or d < 1:
        raise ValueError("M and d must be positive")
    X = rng.standard_normal((M, d))
    a = X / np.linalg.norm(X, axis=1, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=M)
    return a, r


def make_basis(M: int, d: int, gamma: float, rng: np.random.Generator) -> FeatureBasis:
    a, r = sample_locations(M, d, rng)
    return FeatureBasis(a, r, float(gamma))


def sample_unit_ball(J: int, d: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.standard_normal((J, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * rng.uniform(0.0, 1.0, size=(J, 1)) ** (1.0 / d)


def grf_realize(points, corr_len: float, rng: np.random.Generator) -> np.ndarray:
    """One draw of a zero-mean GRF with kernel exp(-|y - y'|^2 / (2 corr_len^2))."""
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    if Y.shape[0] == 1 and np.ndim(points) == 1:
        Y = Y.T
    sq = np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    C = np.exp(-sq / (2.0 * corr_len**2))
    z = rng.standard_normal(Y.shape[0])
    for jitter in (0.0,) + JITTERS:
        try:
            L = scipy.linalg.cholesky(C + jitter * np.eye(len(C)), lower=True)
        except np.linalg.LinAlgError:
            continue
        return L @ z
    raise np.linalg.LinAlgError(f"GRF covariance not positive definite even with jitter {JITTERS[-1]:g}")


def ls_fit(basis: FeatureBasis, points, targets) -> tuple[np.ndarray, float]:
    """Least-squares output layer (intercept included).

    Returns the coefficients ``[alpha_0, ..., alpha_M]`` (minimum-norm when
    the design is rank deficient) and the attained sum of squared residuals.
    """
    g = np.asarray(targets, dtype=float).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("fit targets must be finite")
    Y = np.asarray(points, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != g.size or g.size < 1:
        raise ValueError("points and targets must have the same positive length")
    A = basis.design(Y)
    coef, *_ = scipy.linalg.lstsq(A, g, lapack_driver="gelsd")
    resid = A @ coef - g
    return coef, float(resid @ resid)


@dataclass
class GammaTuneConfig:
    M: int = 200
    dim: int = 1
    corr_len: float = 0.5
    realizations: int = 10
    samples: int = 500
    gamma_min: float = 0.1
    gamma_max: float = 2.0
    grid_size: int = 50

    def __post_init__(self):
        for key in ("M", "dim", "realizations", "samples", "grid_size"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be positive")
        if self.corr_len <= 0:
            raise ValueError("corr_len must be positive")
        if self.grid_size > 1 and not self.gamma_min < self.gamma_max:
            raise ValueError("gamma_min must be smaller than gamma_max")
        if self.gamma_min <= 0:
            raise ValueError("gamma_min must be positive")

    def grid(self) -> np.ndarray:
        if self.grid_size == 1:
            return np.array([float(self.gamma_min)])
        return np.linspace(self.gamma_min, self.gamma_max, self.grid_size)


@dataclass
class GammaTuneResult:
    gamma_opt: float
    grid: np.ndarray
    avg_mse: np.ndarray

    def to_csv(self) -> str:
        lines = ["gamma,avg_mse,is_opt"]
        for g, m in zip(self.grid, self.avg_mse):
            lines.append(f"{float(g)!r},{float(m)!r},{int(g == self.gamma_opt)}")
        return "\n".join(lines) + "\n"


def tune_gamma(cfg: GammaTuneConfig, rng: np.random.Generator) -> GammaTuneResult:
    """Grid search for the shared shape parameter against GRF auxiliaries."""
    data = []
    for _ in range(cfg.realizations):
        Y = sample_unit_ball(cfg.samples, cfg.dim, rng)
        data.append((Y, grf_realize(Y, cfg.corr_len, rng)))
    grid = cfg.grid()
    curve = np.empty(grid.size)
    for s, gamma in enumerate(grid):
        errs = []
        for Y, g in data:
            # fresh neuron locations for every (s, k) pair
            basis = make_basis(cfg.M, cfg.dim, gamma, rng)
            errs.append(ls_fit(basis, Y, g)[1])
        curve[s] = np.mean(errs)
    s_opt = int(np.argmin(curve))
    return GammaTuneResult(float(grid[s_opt]), grid, curve)


TARGETS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "x^2": np.square,
    "x^3": lambda y: y**3,
    "x^4": lambda y: y**4,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sin(x^2)": lambda y: np.sin(y**2),
    "x*sin(x)": lambda y: y * np.sin(y),
}


def tanh_derivs(z: np.ndarray, order: int) -> list[np.ndarray]:
    s = np.tanh(z)
    out = [s]
    if order >= 1:
        s1 = 1.0 - s * s
        out.append(s1)
    if order >= 2:
        s2 = -2.0 * s * s1
        out.append(s2)
    if order >= 3:
        out.append(-2.0 * (s1 * s1 + s * s2))
    return out


class TnOperator(UnaryOperator):
    """Frozen one-dimensional network ``sum_m c_m tanh(w_m y + b_m) + c_0``."""

    kind = "tn"

    def __init__(self, target_tag: str, basis: FeatureBasis, coef, fit_domain=(-1.0, 1.0),
                 fit_sup_error: float = math.nan):
        if basis.dim != 1:
            raise ValueError("TN operators are one-dimensional")
        self.target_tag = target_tag
        self.name = f"TN[{target_tag}]"
        self.basis = basis
        self.coef = np.asarray(coef, dtype=float)
        if self.coef.shape != (basis.size + 1,):
            raise ValueError("coefficient vector must have length M + 1")
        self.fit_domain = (float(fit_domain[0]), float(fit_domain[1]))
        self.fit_sup_error = float(fit_sup_error)
        self._w = basis.weights[:, 0]
        self._b = basis.biases

    def derivs(self, y, order):
        y = np.asarray(y, dtype=float)
        z = y[..., None] * self._w + self._b
        sig = tanh_derivs(z, order)
        c = self.coef[1:]
        out = [sig[0] @ c + self.coef[0]]
        for k in range(1, order + 1):
            out.append(sig[k] @ (c * self._w**k))
        return out

    def sup_error(self, target: Callable[[np.ndarray], np.ndarray]) -> float:
        grid = np.linspace(*self.fit_domain, SUP_GRID)
        return float(np.max(np.abs(self(grid) - target(grid))))

    def to_dict(self) -> dict:
        return {
            "target_tag": self.target_tag,
            "domain": list(self.fit_domain),
            "M": self.basis.size,
            "gamma": self.basis.gamma,
            "a": self.basis.directions[:, 0].tolist(),
            "r": self.basis.offsets.tolist(),
            "alpha": self.coef.tolist(),
            "fit_sup_error": self.fit_sup_error,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "TnOperator":
        basis = FeatureBasis(np.asarray(rec["a"], dtype=float)[:, None],
                             np.asarray(rec["r"], dtype=float), float(rec["gamma"]))
        if basis.size != rec["M"]:
            raise ValueError("serialised TN operator has inconsistent M")
        return cls(rec["target_tag"], basis, rec["alpha"], rec["domain"], rec["fit_sup_error"])


def build_tn_operator(target, fit_domain=(-1.0, 1.0), M: int = 200, gamma: float = 2.0,
                      J: int = 500, rng: np.random.Generator | None = None,
                      tag: str | None = None) -> TnOperator:
    """Fit a TN operator to a named target (see ``TARGETS``) or a callable."""
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(target, str):
        if target not in TARGETS:
            raise KeyError(f"unknown TN target {target!r}; known: {sorted(TARGETS)}")
        tag, fn = target, TARGETS[target]
    else:
        fn = target
        tag = tag or getattr(target, "__name__", "f")
    lo, hi = map(float, fit_domain)
    if not lo < hi:
        raise ValueError("fit domain must satisfy lo < hi")
    basis = make_basis(M, 1, gamma, rng)
    y = np.concatenate([[lo, hi], rng.uniform(lo, hi, size=max(J - 2, 0))])
    coef, _ = ls_fit(basis, y, fn(y))
    op = TnOperator(tag, basis, coef, (lo, hi))
    op.fit_sup_error = op.sup_error(fn)
    return op


def save_operators(ops, path) -> None:
    with open(path, "w") as fh:
        json.dump({"operators": [op.to_dict() for op in ops]}, fh)


def load_operators(path) -> list[TnOperator]:
    with open(path) as fh:
        rec = json.load(fh)
    return [TnOperator.from_dict(r) for r in rec["operators"]]
