import numpy as np
import pytest
import scipy.linalg

from fblearn.numerics import (
    CareSolverError,
    IntegrationDivergedError,
    NotNilpotentError,
    Rng,
    care_residual,
    expm_nilpotent,
    finite_diff_gradient,
    finite_diff_jacobian,
    integrate_rk4,
    lqr_gain,
    zoh_input_matrix,
)


class TestIntegrateRk4:
    def test_zero_field_fixed_point(self):
        out = integrate_rk4(lambda x, u: np.zeros_like(x), [1.0, 2.0], [], 0.1)
        assert np.array_equal(out, [1.0, 2.0])

    def test_nilpotent_linear_flow_exact(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        out = integrate_rk4(lambda x, u: A @ x, [0.0, 1.0], [], 0.05)
        assert np.array_equal(out, [0.05, 1.0])

    def test_rk4_exact_on_nilpotent_index_le_4(self):
        # Single RK4 step reproduces exp(A dt) exactly when A^4 = 0.
        rng = np.random.default_rng(0)
        A = np.triu(rng.normal(size=(4, 4)), k=1)
        x0 = rng.normal(size=4)
        out = integrate_rk4(lambda x, u: A @ x, x0, [], 0.3, substeps=1)
        expected = expm_nilpotent(A, 0.3) @ x0
        assert np.allclose(out, expected, rtol=0, atol=1e-14)

    def test_divergence_reports_time(self):
        def blow_up(x, u):
            return x**3

        with pytest.raises(IntegrationDivergedError) as err:
            integrate_rk4(blow_up, [10.0], [], 10.0, substeps=100)
        assert 0 < err.value.time <= 10.0

    def test_invalid_dt(self):
        with pytest.raises(ValueError):
            integrate_rk4(lambda x, u: x, [1.0], [], -1.0)


class TestExpmNilpotent:
    def test_zero_matrix(self):
        assert np.array_equal(expm_nilpotent(np.zeros((3, 3)), 1.0), np.eye(3))

    def test_integrator_block(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        assert np.array_equal(
            expm_nilpotent(A, 0.05), np.array([[1.0, 0.05], [0.0, 1.0]])
        )

    def test_block_diagonal_structure(self):
        A = np.zeros((4, 4))
        A[0, 1] = 1.0
        A[2, 3] = 1.0
        out = expm_nilpotent(A, 0.05)
        block = np.array([[1.0, 0.05], [0.0, 1.0]])
        assert np.array_equal(out[:2, :2], block)
        assert np.array_equal(out[2:, 2:], block)
        assert np.array_equal(out[:2, 2:], np.zeros((2, 2)))

    def test_semigroup_property(self):
        rng = np.random.default_rng(3)
        A = np.triu(rng.normal(size=(5, 5)), k=1)
        lhs = expm_nilpotent(A, 0.3) @ expm_nilpotent(A, 0.45)
        rhs = expm_nilpotent(A, 0.75)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_rejects_non_nilpotent(self):
        with pytest.raises(NotNilpotentError):
            expm_nilpotent(np.eye(2), 1.0)


class TestZohInputMatrix:
    def test_zero_dynamics(self):
        out = zoh_input_matrix(np.zeros((3, 3)), np.eye(3), 0.05)
        assert np.allclose(out, 0.05 * np.eye(3), atol=1e-16)

    def test_integrator_block_closed_form(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        out = zoh_input_matrix(A, B, 0.05)
        assert np.allclose(out, [[0.00125], [0.05]], rtol=0, atol=1e-18)

    def test_matches_quadrature(self):
        # Composite Simpson is exact for the polynomial integrand of a
        # nilpotent exponential, so agreement to 1e-12 is expected.
        A = np.zeros((4, 4))
        A[0, 1] = 1.0
        A[2, 3] = 1.0
        B = np.zeros((4, 2))
        B[1, 0] = 1.0
        B[3, 1] = 1.0
        dt = 0.05
        n = 64
        ts = np.linspace(0.0, dt, 2 * n + 1)
        vals = np.stack([expm_nilpotent(A, t) @ B for t in ts])
        simpson = (dt / (6 * n)) * (
            vals[0] + vals[-1] + 4 * vals[1:-1:2].sum(axis=0) + 2 * vals[2:-2:2].sum(axis=0)
        )
        assert np.allclose(zoh_input_matrix(A, B, dt), simpson, atol=1e-12)


class TestLqrGain:
    def test_scalar_integrator(self):
        K = lqr_gain(np.zeros((1, 1)), np.eye(1), np.array([[4.0]]), np.array([[1.0]]))
        assert np.allclose(K, [[2.0]], atol=1e-10)

    def test_double_integrator_hand_solution(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        K = lqr_gain(A, B, np.eye(2), np.eye(1))
        assert np.allclose(K, [[1.0, np.sqrt(3.0)]], atol=1e-8)

    @pytest.mark.parametrize("seed", range(5))
    def test_stabilizes_random_systems(self, seed):
        rng = np.random.default_rng(seed)
        n, m = 4, 2
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, m))
        Q = np.eye(n)
        R = np.eye(m)
        K = lqr_gain(A, B, Q, R)
        assert np.max(np.linalg.eigvals(A - B @ K).real) < 0

    def test_care_residual_contract(self):
        rng = np.random.default_rng(7)
        A = rng.normal(size=(5, 5))
        B = rng.normal(size=(5, 2))
        Q = np.eye(5)
        R = np.eye(2)
        K = lqr_gain(A, B, Q, R)
        # P is the closed-loop Lyapunov solution associated with K.
        P = scipy.linalg.solve_continuous_lyapunov(
            (A - B @ K).T, -(Q + K.T @ R @ K)
        )
        rel = care_residual(A, B, Q, R, P) / max(1.0, np.linalg.norm(P))
        assert rel < 1e-8

    def test_reports_failure(self):
        # Unstabilizable pair: unstable mode not reachable.
        A = np.array([[1.0, 0.0], [0.0, -1.0]])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(CareSolverError):
            lqr_gain(A, B, np.eye(2), np.eye(1))


class TestFiniteDifferences:
    def test_constant_function(self):
        g = finite_diff_gradient(lambda x: 3.0, np.zeros(4))
        assert np.array_equal(g, np.zeros(4))

    def test_quadratic_gradient(self):
        g = finite_diff_gradient(lambda x: float(np.sum(x**2)), np.array([1.0, 2.0]))
        assert np.allclose(g, [2.0, 4.0], atol=1e-8)

    def test_jacobian_of_linear_map(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        J = finite_diff_jacobian(lambda x: A @ x, np.array([0.3, -0.7]))
        assert np.allclose(J, A, atol=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(lambda x: float("nan"), np.zeros(2))


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = Rng(123).uniform(0, 1, 100)
        b = Rng(123).uniform(0, 1, 100)
        assert np.array_equal(a, b)

    def test_fork_streams_are_deterministic(self):
        a = Rng(5)
        b = Rng(5)
        assert np.array_equal(a.fork().normal(1.0, 10), b.fork().normal(1.0, 10))

    def test_fork_differs_from_parent(self):
        parent = Rng(5)
        child = parent.fork()
        assert not np.array_equal(parent.uniform(0, 1, 8), child.uniform(0, 1, 8))

    def test_repeated_forks_differ(self):
        parent = Rng(5)
        assert not np.array_equal(
            parent.fork().uniform(0, 1, 8), parent.fork().uniform(0, 1, 8)
        )
