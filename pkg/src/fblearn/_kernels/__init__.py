"""Integration kernel backend selection.

The rollout hot loop integrates plant dynamics millions of times during
training, so the two named plants get specialized batched RK4 kernels.
A Cython extension is used when it built successfully; otherwise the
NumPy reference implementation takes over. Set ``FBLEARN_PURE_PYTHON=1``
to force the fallback (used by the benchmark and equivalence tests).
"""

import importlib
import os

from . import _reference

_core = None
if os.environ.get("FBLEARN_PURE_PYTHON", "") != "1":
    try:
        _core = importlib.import_module("fblearn._kernels._core")
    except ImportError:
        _core = None

BACKEND = "compiled" if _core is not None else "python"


def backend_name() -> str:
    return BACKEND


def _impl():
    return _core if _core is not None else _reference


def pendulum_flow_kernel(params):
    """Batched flow closure for a double pendulum parameter set."""
    m1, m2, l1, l2, g = params.m1, params.m2, params.l1, params.l2, params.gravity

    def flow(x, u, dt, substeps):
        return _impl().pendulum_flow(x, u, float(dt), int(substeps), m1, m2, l1, l2, g)

    return flow


def quadrotor_flow_kernel(params):
    """Batched flow closure for a quadrotor parameter set."""
    m = params.mass
    ixx, iyy, izz = params.inertia_xx, params.inertia_yy, params.inertia_zz
    g = params.gravity

    def flow(x, u, dt, substeps):
        return _impl().quadrotor_flow(x, u, float(dt), int(substeps), m, ixx, iyy, izz, g)

    return flow
