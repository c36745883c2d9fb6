import math

import mpmath
import numpy as np
import pytest
import scipy.linalg
from scipy import stats

from conftest import MpTree
from fextn import transnet
from fextn.transnet import (
    FeatureBasis,
    GammaTuneConfig,
    TnOperator,
    build_tn_operator,
    grf_realize,
    load_operators,
    ls_fit,
    make_basis,
    sample_locations,
    save_operators,
    tanh_derivs,
    tune_gamma,
)


@pytest.fixture(scope="module")
def tuned():
    return tune_gamma(GammaTuneConfig(), np.random.default_rng(0))


class TestLocations:
    def test_one_dimensional_directions_are_signs(self):
        a, r = sample_locations(500, 1, np.random.default_rng(0))
        assert set(np.unique(a)) <= {-1.0, 1.0}
        assert np.all((r >= 0) & (r <= 1))

    def test_unit_norm_and_uniformity(self):
        M = 10000
        a, r = sample_locations(M, 3, np.random.default_rng(1))
        assert np.all(np.abs(np.linalg.norm(a, axis=1) - 1) < 1e-12)
        # each coordinate of a uniform direction on S^2 has variance 1/3
        assert np.all(np.abs(a.mean(axis=0)) < 3 * math.sqrt(1 / 3 / M))
        assert stats.kstest(r, "uniform").pvalue > 0.01

    def test_seeded(self):
        a1, r1 = sample_locations(50, 4, np.random.default_rng(42))
        a2, r2 = sample_locations(50, 4, np.random.default_rng(42))
        assert np.array_equal(a1, a2) and np.array_equal(r1, r2)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            sample_locations(0, 2, np.random.default_rng(0))

    def test_basis_invariants(self):
        with pytest.raises(ValueError):
            FeatureBasis(np.ones((3, 1)), np.zeros(3), 0.0)
        b = make_basis(7, 2, 1.5, np.random.default_rng(0))
        assert np.allclose(b.weights, 1.5 * b.directions) and np.allclose(b.biases, 1.5 * b.offsets)
        assert b.design(np.zeros((4, 2))).shape == (4, 8)


class TestGrf:
    def test_coincident_points_agree(self):
        pts = np.array([[0.1], [0.1 + 1e-9]])
        v = grf_realize(pts, 0.5, np.random.default_rng(0))
        assert abs(v[0] - v[1]) < 1e-4

    def test_correlation_at_one_length(self):
        pts = np.array([[0.0], [0.5]])
        rng = np.random.default_rng(3)
        draws = np.array([grf_realize(pts, 0.5, rng) for _ in range(5000)])
        rho = np.corrcoef(draws.T)[0, 1]
        target = math.exp(-0.5)
        se = (1 - target**2) / math.sqrt(5000)
        assert abs(rho - target) < 3 * se

    def test_huge_length_gives_flat_field(self):
        from fextn.transnet import sample_unit_ball

        rng = np.random.default_rng(5)
        pts = sample_unit_ball(50, 2, rng)
        v = grf_realize(pts, 1e6, rng)
        assert np.var(v) < 1e-6

    def test_jitter_exhausted(self, monkeypatch):
        def always_fail(*a, **k):
            raise np.linalg.LinAlgError("not PD")

        monkeypatch.setattr(scipy.linalg, "cholesky", always_fail)
        with pytest.raises(np.linalg.LinAlgError, match="jitter"):
            grf_realize(np.zeros((3, 1)), 0.5, np.random.default_rng(0))


class TestLsFit:
    def test_zero_targets(self):
        b = make_basis(30, 1, 1.0, np.random.default_rng(0))
        coef, sse = ls_fit(b, np.linspace(-1, 1, 40), np.zeros(40))
        assert np.all(coef == 0) and sse == 0

    def test_target_in_span(self):
        rng = np.random.default_rng(1)
        b = make_basis(20, 2, 1.0, rng)
        Y = rng.uniform(-1, 1, (100, 2))
        c = rng.normal(size=21)
        coef, sse = ls_fit(b, Y, b.design(Y) @ c)
        assert sse < 1e-18 * 100 * (c @ c)

    def test_square_with_tuned_gamma(self, tuned):
        rng = np.random.default_rng(2)
        b = make_basis(200, 1, tuned.gamma_opt, rng)
        y = rng.uniform(-1, 1, 500)
        _, sse = ls_fit(b, y, y**2)
        assert sse < 1e-12

    def test_non_finite_targets(self):
        b = make_basis(5, 1, 1.0, np.random.default_rng(0))
        with pytest.raises(ValueError, match="finite"):
            ls_fit(b, np.zeros(3), np.array([0.0, np.nan, 1.0]))

    def test_optimal_under_perturbation(self):
        rng = np.random.default_rng(4)
        b = make_basis(200, 1, 2.0, rng)
        y = rng.uniform(-1, 1, 500)
        g = np.sin(3 * y) + 0.01 * rng.normal(size=500)
        coef, sse = ls_fit(b, y, g)
        A = b.design(y)
        r = A @ coef - g
        for _ in range(50):
            delta = rng.normal(size=coef.size)
            delta *= 1e-3 / np.linalg.norm(delta)
            # objective change written without cancelling large terms
            Ad = A @ delta
            change = Ad @ Ad + 2.0 * (Ad @ r)
            assert change >= 0.0


class TestTuneGamma:
    def test_single_grid_point(self):
        cfg = GammaTuneConfig(M=20, realizations=2, samples=50, gamma_min=0.7, gamma_max=0.7, grid_size=1)
        res = tune_gamma(cfg, np.random.default_rng(0))
        assert res.gamma_opt == 0.7 and res.grid.tolist() == [0.7]

    def test_argmin_and_endpoints(self):
        cfg = GammaTuneConfig(M=50, realizations=3, samples=100, gamma_min=0.1, gamma_max=10.0, grid_size=8)
        res = tune_gamma(cfg, np.random.default_rng(1))
        k = int(np.argmin(res.avg_mse))
        assert res.gamma_opt == res.grid[k]
        assert res.avg_mse[k] <= res.avg_mse[0] and res.avg_mse[k] <= res.avg_mse[-1]

    def test_deterministic(self):
        cfg = GammaTuneConfig(M=30, realizations=2, samples=60, grid_size=4)
        a = tune_gamma(cfg, np.random.default_rng(9))
        b = tune_gamma(cfg, np.random.default_rng(9))
        assert a.gamma_opt == b.gamma_opt and np.array_equal(a.avg_mse, b.avg_mse)

    def test_csv_marks_optimum(self):
        cfg = GammaTuneConfig(M=20, realizations=2, samples=40, grid_size=5)
        res = tune_gamma(cfg, np.random.default_rng(0))
        rows = res.to_csv().strip().splitlines()
        assert rows[0] == "gamma,avg_mse,is_opt" and len(rows) == 6
        assert sum(int(r.split(",")[2]) for r in rows[1:]) == 1

    @pytest.mark.parametrize("kw", [{"gamma_min": 2.0, "gamma_max": 1.0}, {"M": 0}, {"corr_len": 0.0},
                                    {"gamma_min": -1.0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            GammaTuneConfig(**kw)


@pytest.fixture(scope="module")
def ops():
    return {t: build_tn_operator(t, (-1, 1), 200, 2.0, 500, np.random.default_rng(i))
            for i, t in enumerate(["x^2", "exp", "sin(x^2)"])}


class TestTnOperator:
    def test_square_at_zero_within_sup_error(self, ops):
        op = ops["x^2"]
        assert abs(op(np.array(0.0))) <= op.fit_sup_error

    def test_exp_slope_against_network_fd(self, ops):
        op = ops["exp"]
        tree = MpTree(None, None)
        with mpmath.workdps(40):
            slope = mpmath.diff(lambda y: tree._unary(op, y), mpmath.mpf(0))
        assert abs(op.derivs(np.array([0.0]), 1)[1][0] - float(slope)) < 1e-7

    def test_derivative_chain(self, ops):
        tree = MpTree(None, None)
        ys = np.linspace(-1, 1, 7)
        for op in ops.values():
            f = op.derivs(ys, 3)
            with mpmath.workdps(40):
                for k in (1, 2, 3):
                    ref = np.array([float(mpmath.diff(lambda y: tree._unary(op, y), mpmath.mpf(v), k))
                                    for v in ys])
                    assert np.max(np.abs(f[k] - ref) / (1 + np.abs(ref))) < 1e-6

    def test_eval_matches_formula(self, ops):
        op = ops["sin(x^2)"]
        y = np.array([-0.3, 0.8])
        direct = np.tanh(np.outer(y, op.basis.weights[:, 0]) + op.basis.biases) @ op.coef[1:] + op.coef[0]
        assert np.array_equal(op(y), direct)

    def test_tanh_identity(self):
        z = np.random.default_rng(0).normal(size=1000) * 3
        s, s1, s2, s3 = tanh_derivs(z, 3)
        assert np.max(np.abs(s1 - (1 - s * s))) < 1e-14
        assert np.allclose(s2, -2 * s * s1, atol=1e-15)
        assert np.allclose(s3, -2 * (s1**2 + s * s2), atol=1e-15)

    def test_sup_error_recorded_on_grid(self, ops):
        op = ops["x^2"]
        g = np.linspace(-1, 1, transnet.SUP_GRID)
        assert op.fit_sup_error == np.max(np.abs(op(g) - g**2))
        assert op.fit_sup_error < 1e-3

    def test_json_round_trip(self, ops, tmp_path):
        path = tmp_path / "ops.json"
        save_operators(list(ops.values()), path)
        back = load_operators(path)
        y = np.linspace(-1, 1, 11)
        for a, b in zip(ops.values(), back):
            assert a.name == b.name and a.fit_sup_error == b.fit_sup_error
            assert np.array_equal(a(y), b(y))

    def test_inconsistent_record(self, ops):
        rec = ops["x^2"].to_dict()
        rec["M"] = 3
        with pytest.raises(ValueError, match="inconsistent"):
            TnOperator.from_dict(rec)

    def test_callable_target_and_errors(self):
        op = build_tn_operator(lambda y: 1 + y, (0, 1), 20, 1.0, 50, np.random.default_rng(0), tag="1+x")
        assert op.name == "TN[1+x]" and op.fit_sup_error < 1e-6
        with pytest.raises(KeyError):
            build_tn_operator("tan", rng=np.random.default_rng(0))
        with pytest.raises(ValueError):
            build_tn_operator("sin", (1, 0), rng=np.random.default_rng(0))
