"""Pure-NumPy batched integration kernels.

Fallback implementations of the hot rollout flows, vectorized across a
batch of states. The compiled extension in ``_core.pyx`` mirrors the
same arithmetic; the two are interchangeable up to rounding.
"""

import numpy as np


def _pendulum_deriv(x, u, m1, m2, l1, l2, g):
    th1, th2, w1, w2 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    c12 = np.cos(th1 - th2)
    s12 = np.sin(th1 - th2)
    m11 = (m1 + m2) * l1 * l1
    m12 = m2 * l1 * l2 * c12
    m22 = m2 * l2 * l2
    det = m11 * m22 - m12 * m12
    k = m2 * l1 * l2 * s12
    r1 = u[:, 0] - (k * w2 * w2 + (m1 + m2) * g * l1 * np.sin(th1))
    r2 = u[:, 1] - (-k * w1 * w1 + m2 * g * l2 * np.sin(th2))
    out = np.empty_like(x)
    out[:, 0] = w1
    out[:, 1] = w2
    out[:, 2] = (m22 * r1 - m12 * r2) / det
    out[:, 3] = (m11 * r2 - m12 * r1) / det
    return out


def pendulum_flow(x, u, dt, substeps, m1, m2, l1, l2, g):
    """RK4 zero-order-hold flow for the double pendulum, batched (B, 4)."""
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    for _ in range(substeps):
        k1 = _pendulum_deriv(x, u, m1, m2, l1, l2, g)
        k2 = _pendulum_deriv(x + 0.5 * h * k1, u, m1, m2, l1, l2, g)
        k3 = _pendulum_deriv(x + 0.5 * h * k2, u, m1, m2, l1, l2, g)
        k4 = _pendulum_deriv(x + h * k3, u, m1, m2, l1, l2, g)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def _quadrotor_deriv(x, u, m, ixx, iyy, izz, g):
    psi, theta, phi = x[:, 3], x[:, 4], x[:, 5]
    wp, wq, wr = x[:, 9], x[:, 10], x[:, 11]
    xi, zeta = x[:, 12], x[:, 13]
    c1, s1 = np.cos(psi), np.sin(psi)
    c2, s2 = np.cos(theta), np.sin(theta)
    c3, s3 = np.cos(phi), np.sin(phi)
    tz = zeta / m
    out = np.empty_like(x)
    out[:, 0:3] = x[:, 6:9]
    out[:, 3:6] = x[:, 9:12]
    out[:, 6] = tz * (c1 * s2 * c3 + s1 * s3)
    out[:, 7] = tz * (s1 * s2 * c3 - c1 * s3)
    out[:, 8] = tz * (c2 * c3) - g
    out[:, 9] = (ixx - iyy) / izz * wq * wr + u[:, 1] / izz
    out[:, 10] = (izz - ixx) / iyy * wp * wr + u[:, 2] / iyy
    out[:, 11] = (iyy - izz) / ixx * wp * wq + u[:, 3] / ixx
    out[:, 12] = u[:, 0]
    out[:, 13] = xi
    return out


def quadrotor_flow(x, u, dt, substeps, m, ixx, iyy, izz, g):
    """RK4 zero-order-hold flow for the 14-state quadrotor, batched (B, 14)."""
    x = np.array(x, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    for _ in range(substeps):
        k1 = _quadrotor_deriv(x, u, m, ixx, iyy, izz, g)
        k2 = _quadrotor_deriv(x + 0.5 * h * k1, u, m, ixx, iyy, izz, g)
        k3 = _quadrotor_deriv(x + 0.5 * h * k2, u, m, ixx, iyy, izz, g)
        k4 = _quadrotor_deriv(x + h * k3, u, m, ixx, iyy, izz, g)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x
