import numpy as np
import pytest

from fblearn import fbl, tracking
from fblearn.dynamics import (
    double_pendulum,
    hover_state,
    quadrotor_14d,
    scale_parameters,
)
from fblearn.numerics import Rng


class TestReference:
    def test_sinusoid_derivative_chain(self):
        a, f = 0.5, 0.5
        w = 2 * np.pi * f
        traj = tracking.reference("sinusoid", {"amplitude": a, "frequency": f}, (2, 2))
        for t in (0.0, 0.3, 1.7):
            xi = traj.xi(t)
            assert np.isclose(xi[0], a * np.sin(w * t), atol=1e-14)
            assert np.isclose(xi[1], a * w * np.cos(w * t), atol=1e-13)
            assert np.allclose(traj.v(t), -a * w**2 * np.sin(w * t), atol=1e-12)

    def test_chain_consistency_by_finite_difference(self):
        traj = tracking.reference("figure_eight", {}, (4, 4, 4, 2))
        h = 1e-6
        for t in (0.1, 0.9, 2.3):
            fd = (traj.xi(t + h) - traj.xi(t - h)) / (2 * h)
            xi = traj.xi(t)
            v = traj.v(t)
            # within each block, d/dt of entry i is entry i+1; the last
            # entry's derivative is the feed-forward input
            idx = 0
            for j, gj in enumerate((4, 4, 4, 2)):
                for i in range(gj - 1):
                    assert np.isclose(fd[idx + i], xi[idx + i + 1], rtol=1e-5, atol=1e-5)
                assert np.isclose(fd[idx + gj - 1], v[j], rtol=1e-4, atol=1e-4)
                idx += gj

    def test_square_wave_switching(self):
        traj = tracking.reference("square_wave", {"amplitude": 0.5, "period": 5.0}, (2, 2))
        assert np.allclose(traj.outputs(0.0), [0.5, 0.5])
        assert np.allclose(traj.outputs(2.4), [0.5, 0.5])
        assert np.allclose(traj.outputs(2.6), [-0.5, -0.5])
        assert np.allclose(traj.outputs(5.1), [0.5, 0.5])
        for t in (0.0, 1.0, 3.3):
            assert np.array_equal(traj.v(t), np.zeros(2))
            xi = traj.xi(t)
            assert xi[1] == 0.0 and xi[3] == 0.0

    def test_figure_eight_closes(self):
        f = 0.1
        traj = tracking.reference("figure_eight", {"frequency": f, "yaw_frequency": f}, (4, 4, 4, 2))
        T = 1.0 / f
        assert np.allclose(traj.xi(0.0), traj.xi(T), atol=1e-9)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            tracking.reference("spiral", {}, (2, 2))

    def test_kind_gamma_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tracking.reference("figure_eight", {}, (2, 2))


class TestTrackingGain:
    def test_scalar_chain_hand_value(self):
        rm = fbl.reference_model((1,), 0.01)
        K = tracking.tracking_gain(rm)
        assert np.allclose(K, [[np.sqrt(10.0)]], atol=1e-9)

    def test_block_diagonal_decoupling(self):
        rm = fbl.reference_model((2, 2), 0.01)
        K = tracking.tracking_gain(rm)
        assert np.allclose(K[0, 2:], 0.0, atol=1e-9)
        assert np.allclose(K[1, :2], 0.0, atol=1e-9)
        assert np.allclose(K[0, :2], K[1, 2:], atol=1e-9)

    def test_closed_loop_hurwitz(self):
        rm = fbl.reference_model((4, 4, 4, 2), 0.01)
        K = tracking.tracking_gain(rm)
        assert np.max(np.linalg.eigvals(rm.A - rm.B @ K).real) < 0

    def test_reference_model_error_decays_exponentially(self):
        # Setpoint reference (zero feed-forward), so the error obeys the
        # closed-loop dynamics exactly and decays without a hold floor.
        rm = fbl.reference_model((2, 2), 0.01)
        K = tracking.tracking_gain(rm)
        xi_r = np.array([0.5, 0.0, -0.2, 0.0])
        xi = xi_r + np.array([0.3, 0.0, -0.2, 0.1])
        errs = []
        for _ in range(600):
            v = K @ (xi_r - xi)
            xi = rm.A_bar @ xi + rm.B_bar @ v
            errs.append(np.linalg.norm(xi - xi_r))
        logs = np.log(np.maximum(errs, 1e-300))
        slope = np.polyfit(rm.dt * np.arange(len(errs)), logs, 1)[0]
        assert slope < -0.5
        assert errs[-1] < 1e-2 * errs[0]


class TestTrack:
    def test_exact_controller_on_reference(self):
        plant = double_pendulum()
        dt = 5e-4
        rm = fbl.reference_model(plant.gamma, dt)
        K = tracking.tracking_gain(rm)
        traj = tracking.reference("sinusoid", {"amplitude": 0.5, "frequency": 0.5}, plant.gamma)
        xi0 = traj.xi(0.0)
        x0 = np.array([xi0[0], xi0[2], xi0[1], xi0[3]])
        report = tracking.track(
            plant,
            lambda x, v: fbl.exact_linearizing_control(plant, x, v),
            traj,
            K,
            x0,
            duration=10.0,
            dt=dt,
        )
        assert not report.diverged
        assert report.total_l2 < 1e-3

    def test_report_error_recomputable(self):
        plant = double_pendulum()
        rm = fbl.reference_model(plant.gamma, 0.01)
        K = tracking.tracking_gain(rm)
        traj = tracking.reference("sinusoid", {"amplitude": 0.3, "frequency": 0.4}, plant.gamma)
        report = tracking.track(
            plant,
            lambda x, v: fbl.exact_linearizing_control(plant, x, v),
            traj,
            K,
            np.array([0.3, 0.0, 0.0, 0.0]),
            duration=2.0,
            dt=0.01,
        )
        per_step = np.array(
            [np.linalg.norm(report.y[i] - report.y_ref[i]) for i in range(report.t.size)]
        )
        assert np.array_equal(per_step, report.err)
        recomputed = np.sqrt(np.sum(report.err**2 * report.dt))
        assert recomputed == report.total_l2

    def test_divergence_cap_flags(self):
        plant = double_pendulum()
        rm = fbl.reference_model(plant.gamma, 0.01)
        K = tracking.tracking_gain(rm)
        traj = tracking.reference("sinusoid", {"amplitude": 0.5, "frequency": 0.5}, plant.gamma)

        def unstable_controller(x, v):
            return np.array([500.0, -500.0])

        report = tracking.track(
            plant, unstable_controller, traj, K, np.zeros(4), duration=5.0, dt=0.01
        )
        assert report.diverged
        assert report.diverged_time is not None

    def test_exact_tracking_invariant_to_joint_scaling(self):
        # Scaling the plant and handing the controller that same plant
        # leaves the output trajectories unchanged up to zero-order-hold
        # discretization error, which vanishes with dt.
        traj_params = {"amplitude": 0.4, "frequency": 0.5}

        def deviation(dt):
            reports = []
            for factor in (1.0, 0.5):
                plant = double_pendulum(
                    scale_parameters(double_pendulum().params, factor)
                )
                rm = fbl.reference_model(plant.gamma, dt)
                K = tracking.tracking_gain(rm)
                traj = tracking.reference("sinusoid", traj_params, plant.gamma)
                report = tracking.track(
                    plant,
                    lambda x, v, plant=plant: fbl.exact_linearizing_control(plant, x, v),
                    traj,
                    K,
                    np.array([0.3, 0.3, 0.0, 0.0]),
                    duration=2.0,
                    dt=dt,
                )
                reports.append(report)
            return np.abs(reports[0].y - reports[1].y).max()

        coarse, fine = deviation(0.005), deviation(0.001)
        assert fine < 1e-3
        assert coarse / fine > 3.0

    def test_quadrotor_exact_figure_eight(self):
        plant = quadrotor_14d()
        rm = fbl.reference_model(plant.gamma, 0.01)
        K = tracking.tracking_gain(rm)
        traj = tracking.reference("figure_eight", {}, plant.gamma)
        x0 = hover_state(plant.params, position=traj.outputs(0.0)[:3], yaw=traj.outputs(0.0)[3])
        report = tracking.track(
            plant,
            lambda x, v: fbl.exact_linearizing_control(plant, x, v),
            traj,
            K,
            x0,
            duration=10.0,
            dt=0.01,
        )
        assert not report.diverged
        # hover start has velocity/acceleration error; it must decay
        assert report.err[-100:].max() < 0.05

    def test_csv_roundtrip(self, tmp_path):
        plant = double_pendulum()
        rm = fbl.reference_model(plant.gamma, 0.01)
        K = tracking.tracking_gain(rm)
        traj = tracking.reference("sinusoid", {"amplitude": 0.3, "frequency": 0.5}, plant.gamma)
        report = tracking.track(
            plant,
            lambda x, v: fbl.exact_linearizing_control(plant, x, v),
            traj,
            K,
            np.zeros(4),
            duration=0.5,
            dt=0.01,
        )
        path = tmp_path / "report.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema: tracking.v1"
        assert lines[1] == "t,y1,y2,yref1,yref2,u1,u2,err_l2"
        data = np.array([[float(v) for v in line.split(",")] for line in lines[2:]])
        assert np.array_equal(data[:, 0], report.t)
        assert np.array_equal(data[:, 1:3], report.y)
        assert np.array_equal(data[:, -1], report.err)
