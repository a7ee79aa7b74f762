import numpy as np
import pytest

from regmz.dynamics import (
    BlowUpError,
    FixedState,
    KuramotoSivashinsky,
    Lorenz63,
    ShiftedBeta,
    ToyLogistic,
    TrajectoryConfig,
    VanDerPol,
    ks_initial_field,
    ks_precompute,
    ks_step,
    limit_cycle,
    logistic_solution,
    sample_initial,
    simulate,
    step_rk4,
    vector_field,
)


class TestConfigs:
    def test_inner_dt_default(self):
        cfg = TrajectoryConfig(0.05, 61)
        assert cfg.inner_dt == pytest.approx(5e-4)
        assert cfg.substeps == 100

    def test_inner_dt_must_divide(self):
        with pytest.raises(ValueError, match="does not divide"):
            TrajectoryConfig(0.05, 10, inner_dt=0.03)
        with pytest.raises(ValueError, match="burn_in"):
            TrajectoryConfig(0.01, 10, burn_in=0.0155, inner_dt=0.001)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            VanDerPol(mu=0.0)
        with pytest.raises(ValueError):
            Lorenz63(sigma=-1.0)
        with pytest.raises(ValueError):
            KuramotoSivashinsky(n_grid=127)
        with pytest.raises(ValueError):
            TrajectoryConfig(0.1, 1)


class TestOdes:
    def test_vector_fields(self):
        np.testing.assert_allclose(vector_field(ToyLogistic(), [2.0]), [-2.0])
        np.testing.assert_allclose(vector_field(VanDerPol(1.0), [1.0, 0.5]), [2 / 3 - 0.5, 1.0])
        np.testing.assert_allclose(vector_field(Lorenz63(), [1.0, 2.0, 3.0]), [10.0, 23.0, 2 - 8.0])

    def test_toy_matches_closed_form(self):
        x0 = np.array([[0.6], [1.0], [1.5]])
        out = simulate(ToyLogistic(), TrajectoryConfig(0.05, 61), x0)
        t = 0.05 * np.arange(61)
        exact = logistic_solution(x0, t[None, :])
        np.testing.assert_allclose(out[:, :, 0], exact, rtol=1e-12)

    def test_rk4_fourth_order(self):
        # halving dt reduces the one-step error by about 2^5
        x0 = np.array([1.7])
        err = []
        for dt in (0.2, 0.1):
            err.append(abs(step_rk4(ToyLogistic(), x0, dt)[0] - logistic_solution(1.7, dt)))
        assert 20 < err[0] / err[1] < 40

    def test_single_and_batch_shapes(self):
        cfg = TrajectoryConfig(0.1, 5)
        assert simulate(Lorenz63(), cfg, [1.0, 1.0, 1.0]).shape == (5, 3)
        assert simulate(Lorenz63(), cfg, np.ones((2, 3))).shape == (2, 5, 3)

    def test_first_snapshot_is_burned_in_state(self):
        cfg = TrajectoryConfig(0.1, 3, burn_in=0.5)
        a = simulate(Lorenz63(), cfg, [1.0, 2.0, 3.0])
        b = simulate(Lorenz63(), TrajectoryConfig(0.1, 8), [1.0, 2.0, 3.0])
        np.testing.assert_allclose(a, b[5:], rtol=1e-12)

    def test_deterministic(self):
        cfg = TrajectoryConfig(0.01, 200, burn_in=1.0)
        a = simulate(Lorenz63(), cfg, [0.01, 1.0, 10.0])
        b = simulate(Lorenz63(), cfg, [0.01, 1.0, 10.0])
        assert np.array_equal(a, b)

    def test_blowup_reported(self):
        # the toy model explodes in finite time for phi0 < 0
        with pytest.raises(BlowUpError, match="numerical blow-up") as exc:
            simulate(ToyLogistic(), TrajectoryConfig(0.5, 20), np.array([[0.5], [-0.5]]))
        assert exc.value.row == 1
        assert 0 < exc.value.time < 10

    def test_nonfinite_start(self):
        with pytest.raises(BlowUpError):
            step_rk4(ToyLogistic(), [np.nan], 0.1)

    def test_wrong_dimension(self):
        with pytest.raises(ValueError):
            simulate(Lorenz63(), TrajectoryConfig(0.1, 3), [1.0, 2.0])


class TestVanDerPol:
    def test_period(self):
        lc = limit_cycle(VanDerPol(1.0))
        # known period of the mu = 1 limit cycle
        assert lc.period == pytest.approx(6.6633, abs=2e-3)

    def test_cycle_phases(self):
        lc = limit_cycle(VanDerPol(1.0), n_periods=5)
        x0 = sample_initial(lc, 50)
        assert x0.shape == (50, 2)
        # all phases lie on the orbit, first at an upward zero crossing
        assert 0 <= x0[0, 0] < 1e-2 and x0[0, 1] < 0
        assert len(np.unique(np.round(x0, 8), axis=0)) == 50


class TestInitialDistributions:
    def test_shifted_beta(self):
        x = sample_initial(ShiftedBeta(), 20000, seed=3)
        assert x.min() >= 0.5 and x.max() <= 1.5
        assert x.mean() == pytest.approx(1.0, abs=0.01)
        # Beta(2, 2) variance 1/20
        assert x.var() == pytest.approx(0.05, abs=0.003)

    def test_seeded(self):
        a = sample_initial(ShiftedBeta(), 5, seed=1)
        b = sample_initial(ShiftedBeta(), 5, seed=1)
        assert np.array_equal(a, b)

    def test_fixed(self):
        x = sample_initial(FixedState([1.0, 2.0]), 3)
        np.testing.assert_array_equal(x, [[1, 2]] * 3)


class TestKuramotoSivashinsky:
    spec = KuramotoSivashinsky()

    def test_coefficients(self):
        c = ks_precompute(self.spec.L, 128, 1e-3)
        assert c.matches(self.spec.L, 128, 1e-3)
        # linear symbol k^2 - k^4, growing only for 0 < |k| < 1
        k = c.wavenumbers
        np.testing.assert_allclose(c.linear, k**2 - k**4)
        # de-aliasing keeps |index| <= n/3
        assert c.dealias_mask.sum() == 2 * (128 // 3) + 1
        assert np.all(c.nonlinear[~c.dealias_mask] == 0)

    def test_phi_functions_small_argument(self):
        # for lambda -> 0 the ETDRK4 weights tend to dt/6 (f2 enters doubled)
        c = ks_precompute(self.spec.L, 128, 1e-3)
        np.testing.assert_allclose([c.f1[0], c.f2[0], c.f3[0]], np.full(3, 1e-3 / 6), rtol=1e-12)
        assert c.q[0] == pytest.approx(0.5e-3, rel=1e-12)

    def test_linear_mode_decay(self):
        # a single high mode with tiny amplitude evolves (almost) linearly
        c = ks_precompute(self.spec.L, 128, 1e-3)
        v = np.zeros(128, complex)
        v[20] = v[-20] = 1e-8
        out = ks_step(c, v, 100)
        np.testing.assert_allclose(out[20], 1e-8 * np.exp(0.1 * c.linear[20]), rtol=1e-10)

    def test_self_convergence(self):
        u0 = ks_initial_field(self.spec)
        fields = []
        for dt in (1e-3, 5e-4):
            cfg = TrajectoryConfig(10.0, 2, inner_dt=dt)
            fields.append(simulate(self.spec, cfg, u0)[-1])
        rel = np.linalg.norm(fields[0] - fields[1]) / np.linalg.norm(fields[1])
        assert rel <= 1e-6

    def test_real_fft_path_matches_full_spectrum(self):
        u0 = ks_initial_field(self.spec, "test")
        u = simulate(self.spec, TrajectoryConfig(0.5, 3, inner_dt=1e-3), u0)
        c = ks_precompute(self.spec.L, 128, 1e-3)
        v = ks_step(c, np.fft.fft(u0), 1000)
        np.testing.assert_allclose(np.fft.ifft(v).real, u[2], atol=1e-12)

    def test_realness_and_dealiasing_each_step(self):
        c = ks_precompute(self.spec.L, 128, 1e-3)
        v = np.fft.fft(ks_initial_field(self.spec))
        idx = np.arange(128)
        for _ in range(1000):
            v = ks_step(c, v, 1)
            scale = np.abs(v).max()
            assert np.abs(v - np.conj(v[(-idx) % 128])).max() <= 1e-12 * scale
            nl = c.nonlinear * np.fft.fft(np.fft.ifft(v) ** 2)
            assert np.all(nl[~c.dealias_mask] == 0)

    def test_mean_conserved(self):
        u = simulate(self.spec, TrajectoryConfig(1.0, 20, inner_dt=1e-3), ks_initial_field(self.spec))
        np.testing.assert_allclose(u.mean(axis=1), 0.0, atol=1e-12)

    def test_bad_spectrum(self):
        c = ks_precompute(self.spec.L, 128, 1e-3)
        with pytest.raises(ValueError):
            ks_step(c, np.zeros(64, complex))
        with pytest.raises(BlowUpError):
            ks_step(c, np.full(128, np.nan, complex))
