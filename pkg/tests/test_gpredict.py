import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geotwin import gpredict as gp
from geotwin.chanstats import BlockedPositionError, EmpiricalCdf, QuantileDataset, QuantileSample
from geotwin.harness.experiment import ExperimentConfig, twin_data
from geotwin.scene import PerturbationSpec, generate_twin_pair


def dense_posterior(params, x, y, q, noise_var):
    """Textbook GP posterior with explicit inverses, as an independent oracle."""
    k = np.array([[gp.kernel(params, a, b) for b in x] for a in x])
    kq = np.array([[gp.kernel(params, a, b) for b in x] for a in q])
    m = y.mean()
    a = k + noise_var * np.eye(len(x))
    mean = m + kq @ np.linalg.solve(a, y - m)
    var = params.signal_var - np.einsum("ij,ji->i", kq, np.linalg.solve(a, kq.T))
    return mean, var


class TestFeatures:
    def test_spatial(self):
        f = gp.build_features("spatial", (3.0, 4.0))
        assert f.tolist() == [3.0, 4.0]

    def test_dt_length_and_monotone(self):
        rng = np.random.default_rng(0)
        f = gp.build_features("dt", (1.0, 2.0), EmpiricalCdf(rng.exponential(size=8001)))
        assert f.shape == (102,) == (gp.feature_dim("dt"),)
        assert f[:2].tolist() == [1.0, 2.0]
        assert np.all(np.diff(f[2:]) >= 0)

    def test_constant_power(self):
        f = gp.build_features("dt", (0.0, 0.0), EmpiricalCdf(np.full(1000, 1e-3)))
        np.testing.assert_allclose(f[2:], -30.0)
        assert len(set(f[2:].tolist())) == 1

    def test_exponential_oracle(self):
        n = 8001
        x = -np.log1p(-(np.arange(n) + 0.5) / n)
        f = gp.build_features("dt", (0.0, 0.0), EmpiricalCdf(x))
        u = gp.cdf_probabilities()
        # lower order statistics sit up to half a cell below u_j
        np.testing.assert_allclose(f[2:], 10 * np.log10(-np.log1p(-u)), atol=0.1)

    def test_probability_grid(self):
        u = gp.cdf_probabilities()
        assert u[0] == 0.005 and u[-1] == 0.995 and len(u) == 100

    def test_errors(self):
        with pytest.raises(BlockedPositionError):
            gp.build_features("dt", (0.0, 0.0), EmpiricalCdf(np.zeros(10)))
        with pytest.raises(ValueError):
            gp.build_features("dt", (0.0, 0.0))
        with pytest.raises(ValueError):
            gp.build_features("polar", (0.0, 0.0))


class TestKernel:
    p = gp.KernelParams(2.0, [1.0, 1.0])

    def test_values(self):
        assert gp.kernel(self.p, [0, 0], [0, 0]) == 2.0
        assert gp.kernel(self.p, [0, 0], [1, 0]) == pytest.approx(2 * math.exp(-0.5), abs=1e-12)
        assert gp.kernel(self.p, [0, 0], [1, 0]) == pytest.approx(1.21306, abs=1e-5)
        assert gp.kernel(self.p, [0, 0], [1e3, 0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gp.kernel(self.p, [0, 0, 0], [0, 0, 0])
        with pytest.raises(ValueError):
            gp.kernel_matrix(self.p, np.zeros((2, 3)), np.zeros((2, 2)))

    @given(st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=1, max_size=12))
    def test_matrix_symmetric_psd(self, pts):
        x = np.array(pts)
        k = gp.kernel_matrix(gp.KernelParams(1.3, [2.0, 0.5]), x, x)
        np.testing.assert_allclose(k, k.T, atol=1e-15)
        np.testing.assert_allclose(np.diag(k), 1.3)
        chol, jit = gp._factorize(k)
        assert jit <= 1e-4 * np.trace(k) / len(k)

    def test_grouped(self):
        p = gp.KernelParams.grouped("dt", 1.0, [3.0, 7.0], 0.1)
        assert p.lengthscales[:2].tolist() == [3.0, 3.0]
        assert np.all(p.lengthscales[2:] == 7.0)

    @pytest.mark.parametrize("args", [(0.0, [1.0]), (1.0, [0.0]), (1.0, [1.0], -1.0)])
    def test_invalid_params(self, args):
        with pytest.raises(ValueError):
            gp.KernelParams(*args)

    def test_jitter_failure(self):
        with pytest.raises(gp.GpError):
            gp._factorize(-np.eye(3))


class TestPosterior:
    params = gp.KernelParams(1.5, [2.0, 2.0], 0.0)

    def toy(self, n=3, seed=0):
        # 1-D inputs about one lengthscale apart, randomly shifted
        rng = np.random.default_rng(seed)
        x0 = np.arange(n) * 2.0 + rng.uniform(-0.5, 0.5, n)
        x = np.stack([x0, np.zeros(n)], axis=1)
        return x, np.sin(x[:, 0]) - 3.0

    @pytest.mark.parametrize("n", [3, 5, 10])
    @pytest.mark.parametrize("noise", [0.0, 0.05])
    def test_dense_oracle(self, n, noise):
        x, y = self.toy(n, seed=n)
        params = gp.KernelParams(1.5, [2.0, 2.0], noise)
        q = np.stack([np.linspace(-2, 2 * n + 2, 15), np.zeros(15)], axis=1)
        model = gp.condition("spatial", params, x, y, jitter=0.0 if noise else None)
        mean, var = gp.predict_many(model, q)
        m_ref, v_ref = dense_posterior(params, x, y, q, noise + model.jitter)
        np.testing.assert_allclose(mean, m_ref, atol=1e-9)
        np.testing.assert_allclose(var, np.maximum(v_ref, 0), atol=1e-9)

    def test_interpolation(self):
        x, y = self.toy(6)
        model = gp.condition("spatial", self.params, x, y)
        mean, var = gp.predict_many(model, x)
        np.testing.assert_allclose(mean, y, atol=1e-6)
        assert np.all(var <= 1e-6 * self.params.signal_var)

    def test_prior(self):
        model = gp.prior_model("spatial", self.params)
        p = model.predict([1.0, 2.0])
        assert p.mean == 0.0 and p.variance == 1.5

    def test_variance_bound(self):
        x, y = self.toy(8)
        params = gp.KernelParams(1.5, [2.0, 2.0], 0.2)
        model = gp.condition("spatial", params, x, y)
        q = np.random.default_rng(1).uniform(-50, 50, (200, 2))
        _, var = gp.predict_many(model, q, include_noise=True)
        assert np.all(var >= 0) and np.all(var <= 1.5 + 0.2 + 1e-9)

    def test_permutation_invariance(self):
        x, y = self.toy(7)
        perm = np.random.default_rng(3).permutation(7)
        q = np.array([[4.2, 0.3], [-1.0, 2.0]])
        a = gp.predict_many(gp.condition("spatial", self.params, x, y), q)
        b = gp.predict_many(gp.condition("spatial", self.params, x[perm], y[perm]), q)
        np.testing.assert_allclose(a[0], b[0], atol=1e-9)
        np.testing.assert_allclose(a[1], b[1], atol=1e-9)

    def test_more_data_less_variance(self):
        x, y = self.toy(8)
        params = gp.KernelParams(1.5, [2.0, 2.0], 0.01)
        q = np.stack([np.linspace(0, 16, 25), np.zeros(25)], axis=1)
        prev = None
        for k in range(1, 9):
            _, var = gp.predict_many(gp.condition("spatial", params, x[:k], y[:k]), q)
            if prev is not None:
                assert np.all(var <= prev + 1e-9)
            prev = var

    def test_identical_features_identical_prediction(self):
        x, y = self.toy(5)
        model = gp.condition("spatial", self.params, x, y)
        a, b = model.predict([3.3, 1.0]), model.predict([3.3, 1.0])
        assert a == b

    def test_mode_dimension_mismatch(self):
        x, y = self.toy(4)
        model = gp.condition("spatial", self.params, x, y)
        with pytest.raises(ValueError):
            model.predict(np.zeros(102))

    def test_nan_targets(self):
        x, y = self.toy(4)
        y[1] = math.nan
        with pytest.raises(gp.GpError):
            gp.condition("spatial", self.params, x, y)
        with pytest.raises(gp.GpError):
            gp.fit("spatial", y, x)


class TestFit:
    def test_recovers_lengthscale(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(0, 50, (200, 2))
        truth = gp.KernelParams(1.0, [5.0, 5.0], 0.01)
        k = gp.kernel_matrix(truth, x, x) + 0.01 * np.eye(200)
        y = np.linalg.cholesky(k + 1e-10 * np.eye(200)) @ rng.standard_normal(200)
        model = gp.fit("spatial", y, x, seed=0)
        ell = model.params.lengthscales[0]
        assert 2.5 <= ell <= 10.0
        assert model.params.noise_var < 0.1

    def test_duplicate_positions(self):
        x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 1.0]])
        y = np.array([1.0, 2.0, 1.5, 0.2])
        model = gp.fit("spatial", y, x, seed=1)
        assert model.params.noise_var > 0
        assert np.isfinite(model.log_marginal_likelihood)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 10, (12, 2))
        y = np.cos(x[:, 0]) + 0.1 * rng.standard_normal(12)
        a, b = gp.fit("spatial", y, x, seed=3), gp.fit("spatial", y, x, seed=3)
        assert a.params == b.params

    def test_accepts_dataset(self):
        entries = [QuantileSample((float(i), 0.0), 0.01, math.exp(-i / 3), -i / 3) for i in range(6)]
        ds = QuantileDataset(entries, 0.01)
        model = gp.fit("spatial", ds, ds.positions, restarts=2, iterations=50)
        assert model.n_train == 6

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            gp.fit("spatial", [1.0, 2.0], [[0, 0], [1, 1]])

    def test_lml_improves_on_start(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 20, (25, 2))
        y = np.sin(x[:, 0] / 3) + 0.05 * rng.standard_normal(25)
        model = gp.fit("spatial", y, x)
        start = gp.condition("spatial", gp.KernelParams(float(np.var(y)), [5.0, 5.0], 0.1 * float(np.var(y))), x, y)
        assert model.log_marginal_likelihood >= start.log_marginal_likelihood


@pytest.fixture(scope="module")
def campus_dt_problem():
    cfg = ExperimentConfig()
    base = cfg.base_scene()
    pair = generate_twin_pair(base, PerturbationSpec(), 1)
    tw = twin_data(pair.twin, cfg, cfg.link_budget(base).snr_scale)
    idx = [i for i in range(base.n_tx) if tw.dt_features[i] is not None][:40]
    feats = np.array([tw.dt_features[i] for i in idx])
    return feats, tw.q_direct[idx]


def test_dt_fit_under_ten_seconds(campus_dt_problem):
    feats, y = campus_dt_problem
    t0 = time.perf_counter()
    model = gp.fit("dt", y[:30], feats[:30], seed=0)
    assert time.perf_counter() - t0 < 10.0
    assert model.params.lengthscales.shape == (102,)


def test_position_lipschitz_bound(campus_dt_problem):
    feats, y = campus_dt_problem
    model = gp.fit("dt", y[:30], feats[:30], seed=0, restarts=2)
    lip = position_lipschitz = gp.position_lipschitz(model)
    rng = np.random.default_rng(0)
    for q in feats[30:]:
        for _ in range(5):
            d = rng.normal(size=2) * rng.uniform(0.1, 20.0)
            moved = q.copy()
            moved[:2] += d
            gap = abs(model.predict(moved).mean - model.predict(q).mean)
            assert gap <= position_lipschitz * np.linalg.norm(d) * (1 + 1e-9)
    assert lip > 0


def test_persistence_bit_exact(campus_dt_problem, tmp_path):
    feats, y = campus_dt_problem
    model = gp.fit("dt", y[:30], feats[:30], seed=2, restarts=2)
    text = gp.dumps_model(model)
    (tmp_path / "m.gp").write_text(text)
    again = gp.loads_model((tmp_path / "m.gp").read_text())
    assert again.params == model.params
    a = gp.predict_many(model, feats[30:], include_noise=True)
    b = gp.predict_many(again, feats[30:], include_noise=True)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert gp.dumps_model(again) == text


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        gp.loads_model("hello\n")
