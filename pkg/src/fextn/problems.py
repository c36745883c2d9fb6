"""Benchmark elliptic problems with manufactured solutions and the residual loss."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .expression import DomainError, PointSet, _Propagator

PENALTY = 1e10


class TrueSolution:
    """Analytic solution with value, gradient and Laplacian on (n, d) batches."""

    name = "?"

    def value(self, X):
        raise NotImplementedError

    def grad(self, X):
        raise NotImplementedError

    def lap(self, X):
        raise NotImplementedError


class HalfSquareSum(TrueSolution):
    name = "0.5*sum(x^2)"

    def value(self, X):
        return 0.5 * np.sum(X * X, axis=-1)

    def grad(self, X):
        return np.array(X, dtype=float)

    def lap(self, X):
        return np.full(X.shape[:-1], float(X.shape[-1]))


class CubeSum(TrueSolution):
    name = "sum(x^3)"

    def value(self, X):
        return np.sum(X**3, axis=-1)

    def grad(self, X):
        return 3.0 * X**2

    def lap(self, X):
        return 6.0 * np.sum(X, axis=-1)


class ExpMeanCos(TrueSolution):
    """u = exp(m), m = mean(cos x); Δu = u (|∇m|^2 + Δm)."""

    name = "exp(mean(cos(x)))"

    def value(self, X):
        return np.exp(np.mean(np.cos(X), axis=-1))

    def grad(self, X):
        d = X.shape[-1]
        return self.value(X)[..., None] * (-np.sin(X) / d)

    def lap(self, X):
        d = X.shape[-1]
        gm2 = np.sum(np.sin(X) ** 2, axis=-1) / d**2
        lm = -np.sum(np.cos(X), axis=-1) / d
        return self.value(X) * (gm2 + lm)


class Linear(TrueSolution):
    """u = <c, x> + c0; handy for estimator checks."""

    def __init__(self, coef, const: float = 0.0):
        self.coef = np.asarray(coef, dtype=float)
        self.const = float(const)
        self.name = "linear"

    def value(self, X):
        return X @ self.coef + self.const

    def grad(self, X):
        return np.broadcast_to(self.coef, X.shape).copy()

    def lap(self, X):
        return np.zeros(X.shape[:-1])


@dataclass(frozen=True)
class PdeProblem:
    """-nu Δu + mu u [+ u^2] = f on (lo, hi)^d, u = u* on the boundary."""

    name: str
    dim: int
    lo: float
    hi: float
    nu: float
    mu: float
    nonlinear: bool
    true_solution: TrueSolution = field(compare=False)
    lam: float = 100.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("domain bounds must satisfy lo < hi")
        if self.nu < 0:
            raise ValueError("diffusion coefficient must be non-negative")
        if self.lam <= 0:
            raise ValueError("boundary weight lambda must be positive")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    def operator(self, value, lap):
        out = -self.nu * lap + self.mu * value
        if self.nonlinear:
            out = out + value * value
        return out

    def rhs(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u = self.true_solution
        return self.operator(u.value(X), u.lap(X))

    def true_value(self, X):
        return self.true_solution.value(np.atleast_2d(np.asarray(X, dtype=float)))

    def metadata(self) -> dict:
        return {"name": self.name, "d": self.dim, "lo": self.lo, "hi": self.hi, "nu": self.nu,
                "mu": self.mu, "nonlinear": self.nonlinear, "lambda": self.lam,
                "true_solution": self.true_solution.name}


_PROBLEMS = {
    "poisson60": dict(dim=60, lo=-1.0, hi=1.0, nu=1.0, mu=0.0, nonlinear=False, sol=HalfSquareSum),
    "reactdiff60": dict(dim=60, lo=0.0, hi=1.0, nu=1.0, mu=1.0, nonlinear=False, sol=CubeSum),
    "semilinear55": dict(dim=55, lo=-1.0, hi=1.0, nu=1.0, mu=1.0, nonlinear=True, sol=ExpMeanCos),
}
PROBLEM_NAMES = tuple(_PROBLEMS)


def make_problem(name: str, d: int | None = None, nu: float | None = None, mu: float | None = None,
                 lam: float = 100.0) -> PdeProblem:
    if name not in _PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; known: {list(_PROBLEMS)}")
    spec = dict(_PROBLEMS[name])
    sol = spec.pop("sol")()
    p = PdeProblem(name=name, true_solution=sol, lam=lam, **spec)
    overrides = {k: v for k, v in dict(dim=d, nu=nu, mu=mu).items() if v is not None}
    return replace(p, **overrides) if overrides else p


def manufactured_rhs(p: PdeProblem, x):
    X = np.asarray(x, dtype=float)
    out = p.rhs(X)
    return float(out[0]) if X.ndim == 1 else out


@dataclass
class SampleSet:
    interior: np.ndarray
    boundary: np.ndarray
    seed: int | None = None


def sample_points(p: PdeProblem, n_int: int, n_bdy: int, rng: np.random.Generator) -> SampleSet:
    """Uniform interior points; boundary points pin one random coordinate to a face."""
    if n_int < 0 or n_bdy < 0:
        raise ValueError("sample counts must be non-negative")
    d = p.dim
    interior = rng.uniform(p.lo, p.hi, size=(n_int, d))
    # uniform() is half-open; reject the (measure-zero) lower face
    bad = np.any(interior <= p.lo, axis=1)
    while np.any(bad):
        interior[bad] = rng.uniform(p.lo, p.hi, size=(int(bad.sum()), d))
        bad = np.any(interior <= p.lo, axis=1)
    boundary = rng.uniform(p.lo, p.hi, size=(n_bdy, d))
    coord = rng.integers(0, d, size=n_bdy)
    side = np.where(rng.random(n_bdy) < 0.5, p.lo, p.hi)
    boundary[np.arange(n_bdy), coord] = side
    return SampleSet(interior, boundary)


class LossFunction:
    """Penalised least-squares residual bound to a fixed sample set.

    ``loss = mean_int (D u - f)^2 + lambda * mean_bdy (u - u*)^2``.
    Leaf-operator tables are cached per point set, so repeated calls for
    different parameters only redo the tree arithmetic.
    """

    def __init__(self, p: PdeProblem, samples: SampleSet):
        if len(samples.interior) == 0 and len(samples.boundary) == 0:
            raise ValueError("sample set is empty")
        self.problem = p
        self.interior = PointSet(samples.interior)
        self.boundary = PointSet(samples.boundary)
        self.f_int = p.rhs(samples.interior) if len(samples.interior) else np.zeros(0)
        self.g_bdy = p.true_value(samples.boundary) if len(samples.boundary) else np.zeros(0)

    def warm(self, unary_ops) -> None:
        self.interior.warm(unary_ops, 2)
        self.boundary.warm(unary_ops, 0)

    def terms(self, skel, ops, theta) -> tuple[float, float]:
        """(interior mean squared residual, boundary mean squared mismatch)."""
        p = self.problem
        r_int = b_mean = 0.0
        if len(self.f_int):
            out = _Propagator(skel, ops, theta, self.interior, jets=True, sens=False).run(False)
            r = p.operator(out.v, out.l) - self.f_int
            r_int = float(np.mean(r * r))
        if len(self.g_bdy):
            out = _Propagator(skel, ops, theta, self.boundary, jets=False, sens=False).run(False)
            b = out.v - self.g_bdy
            b_mean = float(np.mean(b * b))
        return r_int, b_mean

    def value(self, skel, ops, theta) -> float:
        try:
            r_int, b_mean = self.terms(skel, ops, theta)
        except DomainError:
            return PENALTY
        total = r_int + self.problem.lam * b_mean
        return total if np.isfinite(total) else PENALTY

    def value_and_grad(self, skel, ops, theta) -> tuple[float, np.ndarray]:
        p = self.problem
        theta = np.asarray(theta, dtype=float)
        total = 0.0
        grad = np.zeros(theta.size)
        try:
            with np.errstate(all="ignore"):
                if len(self.f_int):
                    out = _Propagator(skel, ops, theta, self.interior, jets=True, sens=True).run(False)
                    r = p.operator(out.v, out.l) - self.f_int
                    dop = -p.nu * out.dl + p.mu * out.dv
                    if p.nonlinear:
                        dop = dop + 2.0 * out.v[:, None] * out.dv
                    n = len(r)
                    total += float(np.mean(r * r))
                    grad += 2.0 * (r @ dop) / n
                if len(self.g_bdy):
                    out = _Propagator(skel, ops, theta, self.boundary, jets=False, sens=True).run(False)
                    b = out.v - self.g_bdy
                    n = len(b)
                    total += p.lam * float(np.mean(b * b))
                    grad += 2.0 * p.lam * (b @ out.dv) / n
        except DomainError:
            return PENALTY, np.zeros(theta.size)
        if not (np.isfinite(total) and np.all(np.isfinite(grad))):
            return PENALTY, np.zeros(theta.size)
        return total, grad


def loss(p: PdeProblem, skel, ops, theta, samples: SampleSet) -> float:
    return LossFunction(p, samples).value(skel, ops, theta)
