import numpy as np
import pytest

from fblearn import objective
from fblearn.dynamics import double_pendulum, normal_form_system, scale_parameters
from fblearn.numerics import Rng
from fblearn.policy import (
    ControllerParams,
    LinearBasisParameterization,
    NominalController,
    RbfParameterization,
    make_mlp,
    make_rbf,
)


def scalar_toy():
    """First-order plant ydot = u + 1."""
    return normal_form_system(
        "scalar_toy",
        (1,),
        drift=lambda x: np.ones(x.shape[:-1] + (1,)),
        gain=lambda x: np.ones(x.shape[:-1] + (1, 1)),
        domain_low=[-1.0],
        domain_high=[1.0],
    )


def constant_basis(q, include_alpha=True):
    return LinearBasisParameterization(
        lambda z: np.ones(z.shape[:-1] + (1,)), 1, q, include_alpha=include_alpha
    )


class TestVirtualInputDistribution:
    def test_samples_inside_unit_ball(self):
        for q in (1, 2, 4):
            v = objective.VirtualInputDistribution(q).sample(Rng(0), 5000)
            assert v.shape == (5000, q)
            assert np.all(np.linalg.norm(v, axis=1) <= 1.0 + 1e-12)

    def test_radial_moment(self):
        # For the uniform ball, E[||v||^2] = q / (q + 2).
        for q in (1, 2, 4):
            v = objective.VirtualInputDistribution(q).sample(Rng(1), 200_000)
            r2 = np.sum(v**2, axis=1)
            assert abs(r2.mean() - q / (q + 2)) < 5 * r2.std() / np.sqrt(r2.size)

    def test_single_sample_shape(self):
        v = objective.VirtualInputDistribution(3).sample(Rng(2))
        assert v.shape == (3,)


class TestPointwiseLoss:
    def test_exact_controller_zero_loss(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(sys)
        param = make_rbf(5, sys, rng=Rng(3))
        rng = Rng(4)
        x = sys.domain.sample(rng, 50)
        v = objective.VirtualInputDistribution(2).sample(rng, 50)
        loss = objective.pointwise_loss(sys, nominal, param, param.zero_params(), x, v)
        assert np.all(loss < 1e-18)

    def test_scalar_toy_hand_value(self):
        # theta = 0, v = 0: achieved response is b = 1, so loss = 1.
        toy = scalar_toy()
        param = constant_basis(1)
        loss = objective.pointwise_loss(
            toy,
            NominalController.zero(1),
            param,
            param.zero_params(),
            np.array([0.0]),
            np.array([0.0]),
        )
        assert np.isclose(loss, 1.0, atol=1e-15)

    def test_nonnegative(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        param = make_rbf(5, sys, rng=Rng(5))
        rng = Rng(6)
        theta = ControllerParams(
            rng.normal(1.0, param.n_theta1), rng.normal(1.0, param.n_theta2)
        )
        x = sys.domain.sample(rng, 100)
        v = objective.VirtualInputDistribution(2).sample(rng, 100)
        assert np.all(objective.pointwise_loss(sys, nominal, param, theta, x, v) >= 0)


class TestEstimateL:
    def test_exact_controller(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(sys)
        param = make_rbf(5, sys, rng=Rng(7))
        mean, stderr = objective.estimate_L(sys, nominal, param, param.zero_params(), 500, Rng(8))
        assert mean < 1e-18
        assert stderr < 1e-18

    def test_half_sample_average_identity(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        param = make_rbf(5, sys, rng=Rng(9))
        samples = objective.draw_loss_samples(sys, nominal, param, 1000, Rng(10))
        values = samples.loss_at(param.zero_params())
        full = values.mean()
        halves = 0.5 * (values[:500].mean() + values[500:].mean())
        assert np.isclose(full, halves, rtol=1e-14)

    @pytest.mark.slow
    def test_stderr_scaling(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        param = make_rbf(5, sys, rng=Rng(11))
        theta = param.zero_params()
        stderrs = []
        for n in (1000, 10_000, 100_000):
            _, se = objective.estimate_L(sys, nominal, param, theta, n, Rng(12))
            stderrs.append(se)
        for a, b in zip(stderrs, stderrs[1:]):
            assert abs(a / b / np.sqrt(10.0) - 1.0) < 0.2


class TestQuadraticForm:
    def test_scalar_toy_coefficients(self):
        # Analytic: W = diag(1, 1/3), F = (2, -2/3), d = 4/3.
        toy = scalar_toy()
        param = constant_basis(1)
        samples = objective.draw_loss_samples(toy, NominalController.zero(1), param, 200_000, Rng(13))
        qf = objective.quadratic_form_from_samples(samples)
        assert np.allclose(qf.W, np.diag([1.0, 1.0 / 3.0]), atol=1e-2)
        assert np.allclose(qf.F, [2.0, -2.0 / 3.0], atol=1e-2)
        assert abs(qf.d - 4.0 / 3.0) < 1e-2

    def test_reconstruction_identity_shared_samples(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        param = make_rbf(10, sys, rng=Rng(14))
        samples = objective.draw_loss_samples(sys, nominal, param, 3000, Rng(15))
        qf = objective.quadratic_form_from_samples(samples)
        rng = Rng(16)
        for _ in range(10):
            theta = ControllerParams(
                rng.normal(1.0, param.n_theta1), rng.normal(1.0, param.n_theta2)
            )
            direct = samples.loss_at(theta).mean()
            quad = qf.value(theta.flat)
            assert abs(direct - quad) < 1e-9 * max(1.0, abs(direct))

    def test_duplicate_basis_singular(self):
        sys = double_pendulum()
        param = make_rbf(10, sys, rng=Rng(17), duplicate_first=True)
        nominal = NominalController.from_model(sys)
        qf = objective.quadratic_form(sys, nominal, param, 2000, Rng(18))
        eigs = np.linalg.eigvalsh(qf.W)
        assert eigs[0] < 1e-8 * eigs[-1]

    def test_rejects_mlp(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(sys)
        with pytest.raises(objective.NotLinearError):
            objective.quadratic_form(sys, nominal, make_mlp(sys, (8,)), 100, Rng(19))

    def test_save_load_roundtrip(self, tmp_path):
        toy = scalar_toy()
        param = constant_basis(1)
        qf = objective.quadratic_form(toy, NominalController.zero(1), param, 500, Rng(20))
        path = tmp_path / "qf.npz"
        qf.save(path)
        loaded = objective.QuadraticForm.load(path)
        assert np.array_equal(loaded.W, qf.W)
        assert np.array_equal(loaded.F, qf.F)
        assert loaded.d == qf.d
        assert loaded.n_samples == qf.n_samples


class TestCertification:
    def test_identity_gram_strong(self):
        qf = objective.QuadraticForm(W=np.eye(3), F=np.zeros(3), d=0.0, n_samples=1)
        min_eig, verdict = objective.certify_strong_convexity(qf)
        assert min_eig == 1.0
        assert verdict == "strong"

    def test_distinct_rbf_basis_strong(self):
        sys = double_pendulum()
        param = make_rbf(10, sys, rng=Rng(21))
        nominal = NominalController.from_model(sys)
        qf = objective.quadratic_form(sys, nominal, param, 5000, Rng(22))
        _, verdict = objective.certify_strong_convexity(qf)
        assert verdict == "strong"

    def test_single_center_gram_full_rank(self):
        # One scalar feature still excites all q + q^2 directions.
        sys = double_pendulum()
        param = make_rbf(1, sys, rng=Rng(23))
        nominal = NominalController.from_model(sys)
        qf = objective.quadratic_form(sys, nominal, param, 5000, Rng(24))
        _, verdict = objective.certify_strong_convexity(qf)
        assert verdict == "strong"

    def test_duplicate_flips_verdict(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(sys)
        param = make_rbf(10, sys, rng=Rng(25), duplicate_first=True)
        qf = objective.quadratic_form(sys, nominal, param, 3000, Rng(26))
        _, verdict = objective.certify_strong_convexity(qf)
        assert verdict == "not-strong"


class TestClosedFormOptimum:
    def test_identity_form(self):
        qf = objective.QuadraticForm(W=np.eye(4), F=np.zeros(4), d=0.5, n_samples=1)
        assert np.array_equal(objective.closed_form_optimum(qf), np.zeros(4))

    def test_scalar_toy_matches_grid_oracle(self):
        toy = scalar_toy()
        param = constant_basis(1)
        samples = objective.draw_loss_samples(toy, NominalController.zero(1), param, 50_000, Rng(27))
        qf = objective.quadratic_form_from_samples(samples)
        theta_star = objective.closed_form_optimum(qf)

        # Grid oracle: refine a direct-evaluation grid search on shared samples.
        center = np.zeros(2)
        half = 2.0
        for _ in range(8):
            g1 = np.linspace(center[0] - half, center[0] + half, 21)
            g2 = np.linspace(center[1] - half, center[1] + half, 21)
            best, arg = np.inf, None
            for a in g1:
                for b in g2:
                    val = samples.loss_at(ControllerParams([a], [b])).mean()
                    if val < best:
                        best, arg = val, (a, b)
            center = np.array(arg)
            half /= 8.0
        assert np.allclose(theta_star, center, atol=1e-6)
        assert np.allclose(theta_star, [-1.0, 1.0], atol=1e-12)

    def test_realizable_plant_recovered(self):
        # Plant built so its exact linearizing controller lies in the span
        # of the basis: the optimum recovers it with essentially zero loss.
        sys = double_pendulum()
        base = make_rbf(8, sys, rng=Rng(28))
        rng = Rng(29)
        theta_true = ControllerParams(
            0.05 * rng.normal(1.0, base.n_theta1), 0.02 * rng.normal(1.0, base.n_theta2)
        )

        def alpha_p(x):
            beta, alpha = base.correction_terms(theta_true, x)
            return np.broadcast_to(np.eye(2), alpha.shape).copy() + alpha

        def beta_p(x):
            beta, _ = base.correction_terms(theta_true, x)
            return beta

        def drift(x):
            return -np.linalg.solve(alpha_p(x), beta_p(x)[..., None])[..., 0]

        def gain(x):
            return np.linalg.inv(alpha_p(x))

        plant = normal_form_system(
            "realizable",
            (2, 2),
            drift=drift,
            gain=gain,
            domain_low=sys.domain.low,
            domain_high=sys.domain.high,
        )
        # Identity nominal gain, so u(theta_true) is the exact controller.
        nominal = NominalController(
            beta=lambda x: np.zeros(np.shape(x)[:-1] + (2,)),
            alpha=lambda x: np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)).copy(),
            q=2,
        )
        samples = objective.draw_loss_samples(plant, nominal, base, 20_000, Rng(30))
        assert samples.loss_at(theta_true).max() < 1e-18
        qf = objective.quadratic_form_from_samples(samples)
        theta_star = objective.closed_form_optimum(qf)
        l_zero = samples.estimate(base.zero_params())[0]
        l_star = samples.estimate(base.zero_params().replace_flat(theta_star))[0]
        assert l_star < 1e-6 * l_zero
        assert np.allclose(theta_star, theta_true.flat, atol=1e-6)

    def test_probes_never_beat_optimum(self):
        toy = scalar_toy()
        param = constant_basis(1)
        samples = objective.draw_loss_samples(toy, NominalController.zero(1), param, 10_000, Rng(31))
        qf = objective.quadratic_form_from_samples(samples)
        theta_star = objective.closed_form_optimum(qf)
        best = samples.loss_at(ControllerParams(theta_star[:1], theta_star[1:])).mean()
        rng = Rng(32)
        for _ in range(100):
            probe = ControllerParams(rng.normal(1.0, 1), rng.normal(1.0, 1))
            assert samples.loss_at(probe).mean() >= best - 1e-12

    def test_basis_permutation_permutes_optimum(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        base = make_rbf(6, sys, rng=Rng(33))
        perm = Rng(34).permutation(6)
        permuted = RbfParameterization(
            base.centers[perm], base.width, base.q, base.angle_indices, base.scales
        )
        x = sys.domain.sample(Rng(35), 4000)
        v = objective.VirtualInputDistribution(2).sample(Rng(36), 4000)
        qf_a = objective.quadratic_form_from_samples(
            objective.LossSamples(sys, nominal, base, x, v)
        )
        qf_b = objective.quadratic_form_from_samples(
            objective.LossSamples(sys, nominal, permuted, x, v)
        )
        ta = objective.closed_form_optimum(qf_a)
        tb = objective.closed_form_optimum(qf_b)
        q = 2
        t1a = ta[: base.n_theta1].reshape(6, q)
        t2a = ta[base.n_theta1 :].reshape(6, q, q)
        t1b = tb[: base.n_theta1].reshape(6, q)
        t2b = tb[base.n_theta1 :].reshape(6, q, q)
        assert np.allclose(t1a[perm], t1b, atol=1e-8)
        assert np.allclose(t2a[perm], t2b, atol=1e-8)

    def test_requires_strong_convexity(self):
        qf = objective.QuadraticForm(W=np.zeros((2, 2)), F=np.zeros(2), d=0.0, n_samples=1)
        with pytest.raises(objective.NotStronglyConvexError):
            objective.closed_form_optimum(qf)


class TestConvexityProperties:
    def test_midpoint_inequality_on_shared_samples(self):
        sys = double_pendulum()
        nominal = NominalController.from_model(double_pendulum(scale_parameters(sys.params, 0.5)))
        param = make_rbf(8, sys, rng=Rng(37))
        samples = objective.draw_loss_samples(sys, nominal, param, 3000, Rng(38))
        rng = Rng(39)
        for _ in range(25):
            a = ControllerParams(rng.normal(1.0, param.n_theta1), rng.normal(1.0, param.n_theta2))
            b = ControllerParams(rng.normal(1.0, param.n_theta1), rng.normal(1.0, param.n_theta2))
            mid = a.replace_flat(0.5 * (a.flat + b.flat))
            la = samples.loss_at(a).mean()
            lb = samples.loss_at(b).mean()
            lm = samples.loss_at(mid).mean()
            assert lm <= 0.5 * la + 0.5 * lb + 1e-9 * max(1.0, la + lb)
