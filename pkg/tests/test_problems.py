import math

import numpy as np
import pytest

from conftest import builtin, fd_theta
from fextn.expression import ParamLayout, build_skeleton, init_theta
from fextn.operators import BUILTINS, BinaryOperator
from fextn.problems import (
    PENALTY,
    LossFunction,
    PdeProblem,
    loss,
    make_problem,
    manufactured_rhs,
    sample_points,
)


def half_square_expr(d):
    skel = build_skeleton(2, d)
    ops = [BUILTINS["x^2"], BinaryOperator("+"), BUILTINS["0"]]
    theta = ParamLayout(skel).pack({0: (0.5 * np.ones(d), 0.0), 2: (np.zeros(d), 0.0)})
    return skel, ops, theta


def fd_laplacian(fn, X, h=1e-4):
    lap = np.zeros(len(X))
    f0 = fn(X)
    for i in range(X.shape[1]):
        E = np.zeros_like(X)
        E[:, i] = h
        lap += (fn(X + E) - 2 * f0 + fn(X - E)) / h**2
    return lap


class TestProblems:
    def test_poisson(self):
        p = make_problem("poisson60")
        assert (p.dim, p.lo, p.hi, p.lam) == (60, -1.0, 1.0, 100.0)
        assert p.nu == 1.0 and p.mu == 0.0 and not p.nonlinear

    def test_reactdiff(self):
        p = make_problem("reactdiff60")
        assert (p.dim, p.lo, p.hi) == (60, 0.0, 1.0) and p.nu == p.mu == 1.0

    def test_semilinear(self):
        p = make_problem("semilinear55")
        assert p.dim == 55 and p.nonlinear

    def test_unknown(self):
        with pytest.raises(KeyError, match="unknown problem"):
            make_problem("heat3")

    def test_overrides_and_metadata(self):
        p = make_problem("reactdiff60", d=5, nu=0.5, mu=2.0, lam=10.0)
        assert p.metadata() == {"name": "reactdiff60", "d": 5, "lo": 0.0, "hi": 1.0, "nu": 0.5, "mu": 2.0,
                                "nonlinear": False, "lambda": 10.0, "true_solution": "sum(x^3)"}

    @pytest.mark.parametrize("kw", [dict(lo=1.0, hi=0.0), dict(nu=-1.0), dict(lam=0.0)])
    def test_invariants(self, kw):
        base = make_problem("poisson60", d=2)
        args = dict(name="x", dim=2, lo=-1.0, hi=1.0, nu=1.0, mu=0.0, nonlinear=False,
                    true_solution=base.true_solution, lam=100.0)
        args.update(kw)
        with pytest.raises(ValueError):
            PdeProblem(**args)


class TestRhs:
    def test_poisson_constant(self):
        p = make_problem("poisson60")
        X = np.random.default_rng(0).uniform(-1, 1, (5, 60))
        assert np.all(manufactured_rhs(p, X) == -60.0)

    def test_reactdiff_closed_form_and_fd(self):
        p = make_problem("reactdiff60")
        X = np.random.default_rng(1).uniform(0, 1, (10, 60))
        expect = -6 * X.sum(axis=1) + (X**3).sum(axis=1)
        assert np.allclose(manufactured_rhs(p, X), expect, rtol=1e-13)
        lap_fd = fd_laplacian(p.true_solution.value, X)
        lap = p.true_solution.lap(X)
        assert np.max(np.abs(lap - lap_fd) / np.abs(lap)) < 1e-6

    def test_semilinear_at_origin(self):
        p = make_problem("semilinear55")
        e = math.e
        assert manufactured_rhs(p, np.zeros(55)) == pytest.approx(e + e + e * e, rel=1e-14)

    def test_semilinear_laplacian_fd(self):
        p = make_problem("semilinear55", d=6)
        X = np.random.default_rng(2).uniform(-1, 1, (10, 6))
        lap_fd = fd_laplacian(p.true_solution.value, X)
        assert np.max(np.abs(p.true_solution.lap(X) - lap_fd) / (1 + np.abs(lap_fd))) < 1e-6

    @pytest.mark.parametrize("name", ["poisson60", "reactdiff60", "semilinear55"])
    def test_consistency(self, name):
        p = make_problem(name)
        X = np.random.default_rng(3).uniform(p.lo, p.hi, (100, p.dim))
        u = p.true_solution
        lhs = -p.nu * u.lap(X) + p.mu * u.value(X) + (u.value(X) ** 2 if p.nonlinear else 0)
        assert np.max(np.abs(lhs - p.rhs(X)) / (1 + np.abs(lhs))) < 1e-10


class TestSampling:
    def test_interior_strictly_inside(self):
        p = make_problem("poisson60")
        s = sample_points(p, 500, 1000, np.random.default_rng(0))
        assert s.interior.shape == (500, 60) and s.boundary.shape == (1000, 60)
        assert np.all((s.interior > -1) & (s.interior < 1))

    def test_boundary_on_a_face(self):
        p = make_problem("reactdiff60", d=7)
        s = sample_points(p, 0, 300, np.random.default_rng(1))
        on_face = np.any((s.boundary == p.lo) | (s.boundary == p.hi), axis=1)
        assert on_face.all()
        assert np.all((s.boundary >= p.lo) & (s.boundary <= p.hi))

    def test_seeded(self):
        p = make_problem("poisson60", d=4)
        a = sample_points(p, 20, 20, np.random.default_rng(7))
        b = sample_points(p, 20, 20, np.random.default_rng(7))
        assert np.array_equal(a.interior, b.interior) and np.array_equal(a.boundary, b.boundary)

    def test_negative_counts(self):
        with pytest.raises(ValueError):
            sample_points(make_problem("poisson60"), -1, 3, np.random.default_rng(0))


class TestLoss:
    def test_exact_solution(self):
        p = make_problem("poisson60")
        s = sample_points(p, 200, 200, np.random.default_rng(0))
        assert loss(p, *half_square_expr(60), s) < 1e-20

    def test_zero_expression_on_poisson(self):
        p = make_problem("poisson60")
        s = sample_points(p, 100, 100, np.random.default_rng(0))
        skel = build_skeleton(1, 60)
        lf = LossFunction(p, s)
        r_int, b_mean = lf.terms(skel, [BUILTINS["0"]], np.zeros(61))
        assert r_int == 3600.0
        assert b_mean == pytest.approx(np.mean(p.true_value(s.boundary) ** 2), rel=1e-14)

    def test_lambda_linearity(self):
        p1 = make_problem("reactdiff60", d=5)
        p2 = make_problem("reactdiff60", d=5, lam=200.0)
        s = sample_points(p1, 50, 50, np.random.default_rng(0))
        skel = build_skeleton(2, 5)
        ops = [BUILTINS["sin"], BinaryOperator("*"), BUILTINS["exp"]]
        th = init_theta(skel, np.random.default_rng(1))
        b_mean = LossFunction(p1, s).terms(skel, ops, th)[1]
        diff = loss(p2, skel, ops, th, s) - loss(p1, skel, ops, th, s)
        assert abs(diff - 100.0 * b_mean) <= 1e-12 * max(1.0, abs(diff))

    def test_domain_error_gives_penalty(self):
        p = make_problem("poisson60", d=2)
        s = sample_points(p, 10, 10, np.random.default_rng(0))
        skel = build_skeleton(2, 2)
        ops = [BUILTINS["1"], BinaryOperator("/"), BUILTINS["0"]]
        th = init_theta(skel, np.random.default_rng(0))
        lf = LossFunction(p, s)
        assert lf.value(skel, ops, th) == PENALTY
        v, g = lf.value_and_grad(skel, ops, th)
        assert v == PENALTY and np.all(g == 0)

    def test_non_negative(self):
        p = make_problem("semilinear55", d=3)
        s = sample_points(p, 30, 30, np.random.default_rng(0))
        rng = np.random.default_rng(5)
        skel = build_skeleton(3, 3)
        ops = [BUILTINS["cos"], BinaryOperator("-"), BUILTINS["Id"], BUILTINS["exp"]]
        for _ in range(5):
            assert loss(p, skel, ops, rng.normal(size=ParamLayout(skel).size), s) >= 0

    @pytest.mark.parametrize("name", ["poisson60", "reactdiff60", "semilinear55"])
    def test_gradient_against_fd(self, name):
        p = make_problem(name, d=3)
        s = sample_points(p, 40, 40, np.random.default_rng(0))
        lf = LossFunction(p, s)
        skel = build_skeleton(3, 3)
        ops = [BUILTINS["x^2"], BinaryOperator("*"), BUILTINS["sin"], BUILTINS["cos"]]
        th = init_theta(skel, np.random.default_rng(2)) + 0.1
        v, g = lf.value_and_grad(skel, ops, th)
        assert v == pytest.approx(lf.value(skel, ops, th), rel=1e-13)
        fd = fd_theta(lambda t: lf.value(skel, ops, t), th)
        assert np.max(np.abs(g - fd) / (1 + np.abs(fd))) < 1e-6

    def test_empty_sample_set(self):
        p = make_problem("poisson60", d=2)
        with pytest.raises(ValueError):
            LossFunction(p, sample_points(p, 0, 0, np.random.default_rng(0)))

    def test_order_independent(self):
        p = make_problem("semilinear55", d=4)
        s = sample_points(p, 64, 64, np.random.default_rng(0))
        skel = build_skeleton(2, 4)
        ops = builtin("sin") + [BinaryOperator("+")] + builtin("exp")
        th = init_theta(skel, np.random.default_rng(3))
        a = loss(p, skel, ops, th, s)
        perm = np.random.default_rng(1).permutation(64)
        s.interior, s.boundary = s.interior[perm], s.boundary[perm]
        b = loss(p, skel, ops, th, s)
        assert abs(a - b) <= 1e-12 * abs(a)
