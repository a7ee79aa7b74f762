import numpy as np
import pytest

from regmz.regress import (
    ClosedFormSolver,
    Conv1d,
    Linear,
    Mlp,
    Polynomial,
    SplineRidge,
    TrainerConfig,
    TrainingDiverged,
    family_from_dict,
    family_to_dict,
    fit,
    gradient_check,
    idempotence_residual,
    load_model,
    predict,
    save_model,
    spline_features,
    spline_knots,
    with_trainer,
)
from regmz.dynamics import ShiftedBeta, ToyLogistic, TrajectoryConfig, sample_initial, simulate

LBFGS = TrainerConfig(optimizer="lbfgs", max_iter=3000)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestLinear:
    def test_exact_recovery(self):
        X = rng().normal(size=(200, 3))
        A = rng(1).normal(size=(3, 2))
        m = fit(Linear(), X, X @ A)
        np.testing.assert_allclose(m.coef, A, atol=1e-12)
        assert m.fit_mse < 1e-24

    def test_rank_deficient_jitter(self, caplog):
        X = np.ones((50, 2))
        m = fit(Linear(), X, np.full((50, 1), 3.0))
        assert "jitter" in caplog.text
        np.testing.assert_allclose(predict(m, X), 3.0, atol=1e-6)

    def test_solver_reuse(self):
        Phi = rng().normal(size=(40, 4))
        s = ClosedFormSolver(Phi)
        Y = rng(2).normal(size=(40, 3))
        ref = np.linalg.lstsq(Phi, Y, rcond=None)[0]
        np.testing.assert_allclose(s.solve(Y), ref, rtol=1e-10)
        assert s.jitter == 0.0

    def test_single_input(self):
        X = rng().normal(size=(10, 2))
        m = fit(Linear(), X, X)
        np.testing.assert_allclose(predict(m, X[3]), X[3], atol=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            fit(Linear(), np.zeros((5, 2)), np.zeros((4, 1)))
        with pytest.raises(ValueError):
            fit(Linear(), np.full((5, 1), np.nan), np.zeros((5, 1)))
        m = fit(Linear(), np.eye(3), np.eye(3))
        with pytest.raises(ValueError):
            predict(m, np.zeros((2, 4)))
        with pytest.raises(ValueError):
            fit(Linear(trainer=TrainerConfig()), np.eye(3), np.eye(3))


class TestPolynomial:
    def test_feature_count(self):
        # all monomials of total degree <= 2 in 3 variables
        assert Polynomial(2).n_features(3, {}) == 10

    def test_toy_markov_map(self):
        # Markov fit of phi(t + 0.05) on phi(t) over the toy ensemble
        x0 = sample_initial(ShiftedBeta(), 4000, seed=0)
        traj = simulate(ToyLogistic(), TrajectoryConfig(0.05, 2), x0)
        X, Y = traj[:, 0], traj[:, 1]
        m = fit(Polynomial(2), X, Y)
        c = m.coef[:, 0]
        np.testing.assert_allclose(c, [0.002, 1.044, -0.046], atol=0.02)

    def test_degree_five_fits_quintic(self):
        x = np.linspace(-1, 1, 60)[:, None]
        y = 1 - x + 0.5 * x**5
        np.testing.assert_allclose(predict(fit(Polynomial(5), x, y), x), y, atol=1e-10)


class TestSpline:
    def test_partition_of_unity(self):
        kn = spline_knots(np.linspace(-2, 3, 50), 10)
        B = spline_features(np.linspace(kn[0], kn[-1], 333), kn)
        np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)
        assert B.shape[1] == 12

    def test_knot_range(self):
        np.testing.assert_allclose(spline_knots(np.array([-2.0, 4.0]), 3), [-3, 1.5, 6])
        # all positive data still gets covered
        kn = spline_knots(np.array([1.0, 2.0]), 4)
        assert kn[0] == 1.0 and kn[-1] == 3.0

    def test_dimension(self):
        X = rng().normal(size=(30, 3))
        fam = SplineRidge(n_knots=10)
        m = fit(fam, X, X[:, :1])
        assert m.features(X).shape == (30, 1 + 3 * 12)
        assert SplineRidge(lam=0.0).n_features(3, m.state) == 36

    def test_constant_extrapolation(self):
        x = np.linspace(-1, 1, 200)[:, None]
        m = fit(SplineRidge(lam=1e-3), x, np.sin(3 * x))
        far = predict(m, np.array([[100.0], [1e6]]))
        edge = predict(m, np.array([[1.5]]))
        np.testing.assert_allclose(far, np.repeat(edge, 2, axis=0), rtol=1e-12)

    def test_unpenalized_recovers_cubic(self):
        x = np.linspace(-1, 1, 100)[:, None]
        y = x**3 - x
        # knots exactly on the data range keep every basis function supported
        m = fit(SplineRidge(lam=0.0, knot_range_factor=1.0), x, y)
        np.testing.assert_allclose(predict(m, x), y, atol=1e-10)

    def test_ridge_shrinks(self):
        x = np.linspace(-1, 1, 100)[:, None]
        y = np.cos(4 * x)
        loose = fit(SplineRidge(lam=1e-6), x, y)
        tight = fit(SplineRidge(lam=100.0), x, y)
        assert np.abs(tight.coef[1:]).sum() < np.abs(loose.coef[1:]).sum()
        assert tight.fit_mse > loose.fit_mse


class TestMlp:
    def test_gradient(self):
        fam = Mlp((6, 4))
        X, Y = rng().normal(size=(25, 3)), rng(1).normal(size=(25, 2))
        theta = fam.init(3, 2, rng(2))
        assert gradient_check(fam, theta, X, Y) <= 1e-5

    @pytest.mark.parametrize("act", ["relu", "identity"])
    def test_gradient_other_activations(self, act):
        fam = Mlp((4,), activation=act)
        X, Y = rng().normal(size=(20, 2)), rng(1).normal(size=(20, 1))
        assert gradient_check(fam, fam.init(2, 1, rng(3)), X, Y) <= 1e-5

    def test_teacher_student(self):
        fam = Mlp((5, 5), trainer=LBFGS)
        X = rng().uniform(-2, 2, size=(400, 2))
        teacher = fam.init(2, 1, rng(11))
        Y = fam.forward(teacher, X, 2, 1)
        m = fit(fam, X, Y, seed=1)
        assert m.fit_mse <= 1e-4

    def test_adam_reduces_loss(self):
        fam = Mlp((8,), trainer=TrainerConfig(epochs=200, lr=1e-2))
        X = rng().uniform(-1, 1, size=(500, 1))
        Y = np.sin(2 * X)
        start = fam.init(1, 1, rng(0))
        before = np.mean((fam.forward(start, X, 1, 1) - Y) ** 2)
        m = fit(fam, X, Y, seed=0)
        assert m.fit_mse < 0.1 * before

    def test_seeded(self):
        fam = Mlp((3,), trainer=TrainerConfig(epochs=5))
        X, Y = rng().normal(size=(50, 2)), rng(1).normal(size=(50, 1))
        a, b = fit(fam, X, Y, seed=4), fit(fam, X, Y, seed=4)
        np.testing.assert_array_equal(a.params, b.params)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        fam = Mlp((4,), activation="identity", trainer=TrainerConfig(lr=1e300, epochs=50))
        X = rng().normal(size=(100, 1))
        with pytest.raises(TrainingDiverged):
            fit(fam, X, X)


class TestConv1d:
    def test_gradient(self):
        for circ in (True, False):
            fam = Conv1d(n_layers=2, channels=3, kernel_size=5, circular=circ)
            X, Y = rng().normal(size=(6, 16)), rng(1).normal(size=(6, 8))
            assert gradient_check(fam, fam.init(16, 8, rng(2)), X, Y) <= 1e-5

    def test_constant_in_constant_out(self):
        fam = Conv1d()
        theta = fam.init(32, 32, rng())
        out = fam.forward(theta, np.full((3, 32), 0.7), 32, 32)
        np.testing.assert_allclose(out, out[:, :1] * np.ones(32), rtol=1e-12)

    def test_translation_equivariance(self):
        fam = Conv1d(kernel_size=7)
        theta = fam.init(32, 32, rng())
        x = rng(1).normal(size=(2, 32))
        a = np.roll(fam.forward(theta, x, 32, 32), 5, axis=1)
        b = fam.forward(theta, np.roll(x, 5, axis=1), 32, 32)
        np.testing.assert_allclose(a, b, atol=1e-13)

    def test_embedded_channels(self):
        fam = Conv1d(channels=2, kernel_size=3)
        assert fam.n_params(64, 32) == fam.n_params(32, 32) + 2 * 3
        with pytest.raises(ValueError):
            fam.init(40, 32, rng())

    def test_shift_map_learned(self):
        # the translation by one grid cell lies in the family
        fam = Conv1d(n_layers=1, channels=2, kernel_size=3, trainer=LBFGS)
        X = 0.3 * rng().normal(size=(200, 16))
        m = fit(fam, X, np.roll(X, 1, axis=1), seed=0)
        assert m.fit_mse < 1e-3


class TestProjection:
    # additive splines in several inputs share the constant direction, so
    # exact parameter-space checks use a single spline input
    CASES = [(Linear(), 2), (Polynomial(3), 2), (Polynomial(5), 1), (SplineRidge(lam=0.0), 1)]

    @pytest.mark.parametrize("fam,d", CASES)
    def test_orthogonal_residual(self, fam, d):
        X = rng().normal(size=(300, d))
        Y = np.sin(X[:, :1]) * np.exp(X[:, -1:])
        m = fit(fam, X, Y)
        W = Y - predict(m, X)
        again = fit(fam, X, W, state=m.state)
        assert np.abs(predict(again, X)).max() <= 1e-9

    @pytest.mark.parametrize("fam,d", CASES)
    def test_idempotent(self, fam, d):
        X = rng().normal(size=(200, d))
        m = fit(fam, X, np.cos(X))
        assert idempotence_residual(m, X) <= 1e-10

    def test_unsupported_bases_stay_zero(self):
        # default knots extend past the data, leaving empty basis columns
        X = rng().uniform(-1, 1, size=(200, 1))
        m = fit(SplineRidge(lam=0.0), X, X**2)
        assert m.info["jitter"] > 0
        empty = np.all(m.features(X) == 0, axis=0)
        assert empty.any()
        assert np.all(m.coef[empty] == 0)

    def test_ridge_not_idempotent(self):
        X = rng().normal(size=(200, 1))
        m = fit(SplineRidge(lam=10.0), X, np.cos(3 * X))
        assert idempotence_residual(m, X) > 1e-6
        # the ridge residual keeps a visible component inside the feature span
        W = np.cos(3 * X) - predict(m, X)
        again = fit(SplineRidge(lam=0.0), X, W, state=m.state)
        assert np.abs(predict(again, X)).max() > 1e-3

    def test_gradient_family_idempotence(self):
        fam = Mlp((4,), trainer=TrainerConfig(optimizer="lbfgs", max_iter=50))
        X = rng().normal(size=(100, 2))
        m = fit(fam, X, X[:, :1] ** 2)
        assert idempotence_residual(m, X) < 1e-3


class TestSerialization:
    @pytest.mark.parametrize("fam", [Linear(), Polynomial(2), SplineRidge(), Mlp((3,), trainer=LBFGS),
                                     Conv1d(n_layers=1, channels=2, kernel_size=3, trainer=LBFGS)])
    def test_round_trip(self, fam, tmp_path):
        fam = with_trainer(fam, max_iter=5) if not fam.closed_form else fam
        X = rng().normal(size=(40, 8))
        m = fit(fam, X, X[:, ::-1].copy())
        save_model(m, tmp_path / "m")
        back = load_model(tmp_path / "m")
        assert back.family == fam
        np.testing.assert_array_equal(predict(back, X), predict(m, X))

    def test_family_dict(self):
        fam = Conv1d(circular=False, trainer=TrainerConfig(lr=0.5))
        assert family_from_dict(family_to_dict(fam)) == fam
        with pytest.raises(ValueError):
            family_from_dict({"kind": "forest"})

    def test_truncated_blob(self, tmp_path):
        m = fit(Linear(), np.eye(3), np.eye(3))
        save_model(m, tmp_path / "m")
        (tmp_path / "m.bin").write_bytes(b"\0" * 16)
        with pytest.raises(ValueError, match="parameter blob"):
            load_model(tmp_path / "m")
