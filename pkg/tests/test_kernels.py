"""Backend equivalence: compiled extension versus NumPy reference."""

import numpy as np
import pytest

from fblearn._kernels import _reference, backend_name

try:
    from fblearn._kernels import _core
except ImportError:
    _core = None

from fblearn.dynamics import double_pendulum, quadrotor_14d, sample_state
from fblearn.numerics import Rng, rk4_flow

needs_compiled = pytest.mark.skipif(_core is None, reason="compiled kernels not built")

DP_ARGS = (1.0, 1.0, 1.0, 1.0, 9.81)
QUAD_ARGS = (0.5, 2.3e-3, 2.3e-3, 4.0e-3, 9.81)


def _pendulum_batch(n=32, seed=0):
    rng = Rng(seed)
    x = rng.uniform(-1.0, 1.0, (n, 4))
    u = rng.uniform(-2.0, 2.0, (n, 2))
    return x, u


def _quadrotor_batch(n=32, seed=1):
    rng = Rng(seed)
    x = rng.uniform(-0.4, 0.4, (n, 14))
    x[:, 13] = rng.uniform(2.0, 7.0, n)
    u = rng.uniform(-0.5, 0.5, (n, 4))
    return x, u


@needs_compiled
def test_pendulum_backends_agree():
    x, u = _pendulum_batch()
    a = _core.pendulum_flow(x, u, 0.01, 10, *DP_ARGS)
    b = _reference.pendulum_flow(x, u, 0.01, 10, *DP_ARGS)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@needs_compiled
def test_quadrotor_backends_agree():
    x, u = _quadrotor_batch()
    a = _core.quadrotor_flow(x, u, 0.01, 10, *QUAD_ARGS)
    b = _reference.quadrotor_flow(x, u, 0.01, 10, *QUAD_ARGS)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_reference_matches_generic_rk4_pendulum():
    sys = double_pendulum()
    x, u = _pendulum_batch(8)
    fast = _reference.pendulum_flow(x, u, 0.02, 4, *DP_ARGS)
    generic = rk4_flow(lambda s, w: sys.xdot(s, w), x, u, 0.02, 4)
    assert np.allclose(fast, generic, rtol=0, atol=1e-13)


def test_reference_matches_generic_rk4_quadrotor():
    sys = quadrotor_14d()
    x, u = _quadrotor_batch(8)
    fast = _reference.quadrotor_flow(x, u, 0.02, 4, *QUAD_ARGS)
    generic = rk4_flow(lambda s, w: sys.xdot(s, w), x, u, 0.02, 4)
    assert np.allclose(fast, generic, rtol=0, atol=1e-13)


def test_system_flow_uses_active_backend():
    sys = double_pendulum()
    x, u = _pendulum_batch(4)
    out = sys.flow(x, u, 0.01, 5)
    ref = _reference.pendulum_flow(x, u, 0.01, 5, *DP_ARGS)
    assert np.allclose(out, ref, rtol=0, atol=1e-12)


def test_single_state_flow_matches_batch():
    sys = quadrotor_14d()
    x, u = _quadrotor_batch(3)
    batch = sys.flow(x, u, 0.01, 5)
    single = np.stack([sys.flow(x[i], u[i], 0.01, 5) for i in range(3)])
    assert np.allclose(batch, single, rtol=0, atol=1e-15)


def test_backend_name_reports():
    assert backend_name() in ("compiled", "python")
