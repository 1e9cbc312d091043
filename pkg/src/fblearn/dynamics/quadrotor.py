"""14-state quadrotor with dynamic extension of the thrust channel.

State ordering ``(x, y, z, psi, theta, phi, xd, yd, zd, p, q, r, xi, zeta)``
where ``psi/theta/phi`` are yaw/pitch/roll (ZYX Euler), ``(p, q, r)`` are
their time derivatives, ``zeta`` is the delivered collective thrust and
``xi`` its rate. Inputs are the thrust acceleration ``xi' = u1`` and the
three Euler torques. Outputs are ``(x, y, z, psi)``.

Delaying the thrust behind two integrators gives the extended system a
full vector relative degree (4, 4, 4, 2): position outputs feel the
torque inputs and the thrust acceleration only at the fourth derivative,
yaw at the second. With ``sum(gamma) = 14 = n`` there are no residual
(zero) dynamics.

Translational dynamics: ``m vdot = zeta * n(psi, theta, phi) - m g e3``
with ``n = R_z(psi) R_y(theta) R_x(phi) e3`` the body thrust axis in
world coordinates. Rotational dynamics use the standard rigid-body
cross-coupling written in Euler rates:

    p' = (Ixx - Iyy)/Izz q r + u2/Izz
    q' = (Izz - Ixx)/Iyy p r + u3/Iyy
    r' = (Iyy - Izz)/Ixx p q + u4/Ixx

The decoupling matrix is singular at ``zeta = 0`` (no thrust, no lateral
authority), so decoupling evaluation enforces a thrust floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Box, ControlAffineSystem
from .. import _kernels

__all__ = [
    "QuadrotorParams",
    "ThrustSingularityError",
    "quadrotor_14d",
    "hover_state",
]

THRUST_FLOOR_FRACTION = 0.1


class ThrustSingularityError(RuntimeError):
    """Raised when decoupling is requested below the thrust floor."""


@dataclass(frozen=True)
class QuadrotorParams:
    mass: float = 0.5
    inertia_xx: float = 2.3e-3
    inertia_yy: float = 2.3e-3
    inertia_zz: float = 4.0e-3
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mass", "inertia_xx", "inertia_yy", "inertia_zz", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def scaled_fields():
        return ("mass", "inertia_xx", "inertia_yy", "inertia_zz")


def _axis_terms(psi, theta, phi):
    """Thrust axis ``n`` with its first and second Euler-angle partials.

    Returns ``n`` of shape (..., 3), the Jacobian ``N`` of shape
    (..., 3, 3) with columns (d/dpsi, d/dtheta, d/dphi), and the six
    distinct second partials keyed by angle pair.
    """
    c1, s1 = np.cos(psi), np.sin(psi)
    c2, s2 = np.cos(theta), np.sin(theta)
    c3, s3 = np.cos(phi), np.sin(phi)

    n1 = c1 * s2 * c3 + s1 * s3
    n2 = s1 * s2 * c3 - c1 * s3
    n3 = c2 * c3
    n = np.stack([n1, n2, n3], axis=-1)

    d_psi = np.stack([-n2, n1, np.zeros_like(n1)], axis=-1)
    d_theta = np.stack([c1 * c2 * c3, s1 * c2 * c3, -s2 * c3], axis=-1)
    d_phi = np.stack(
        [-c1 * s2 * s3 + s1 * c3, -s1 * s2 * s3 - c1 * c3, -c2 * s3], axis=-1
    )
    N = np.stack([d_psi, d_theta, d_phi], axis=-1)

    zero = np.zeros_like(n1)
    second = {
        ("psi", "psi"): np.stack([-n1, -n2, zero], axis=-1),
        ("psi", "theta"): np.stack([-s1 * c2 * c3, c1 * c2 * c3, zero], axis=-1),
        ("psi", "phi"): np.stack(
            [s1 * s2 * s3 + c1 * c3, -c1 * s2 * s3 + s1 * c3, zero], axis=-1
        ),
        ("theta", "theta"): np.stack(
            [-c1 * s2 * c3, -s1 * s2 * c3, -c2 * c3], axis=-1
        ),
        ("theta", "phi"): np.stack(
            [-c1 * c2 * s3, -s1 * c2 * s3, s2 * s3], axis=-1
        ),
        ("phi", "phi"): np.stack([-n1, -n2, -n3], axis=-1),
    }
    return n, N, second


def _gyro_terms(p: QuadrotorParams, wp, wq, wr):
    a_psi = (p.inertia_xx - p.inertia_yy) / p.inertia_zz * wq * wr
    a_theta = (p.inertia_zz - p.inertia_xx) / p.inertia_yy * wp * wr
    a_phi = (p.inertia_yy - p.inertia_zz) / p.inertia_xx * wp * wq
    return a_psi, a_theta, a_phi


def quadrotor_14d(params: QuadrotorParams | None = None) -> ControlAffineSystem:
    p = params if params is not None else QuadrotorParams()
    m, g = p.mass, p.gravity
    floor = THRUST_FLOOR_FRACTION * m * g

    def f(x):
        x = np.asarray(x, dtype=float)
        psi, theta, phi = x[..., 3], x[..., 4], x[..., 5]
        wp, wq, wr = x[..., 9], x[..., 10], x[..., 11]
        xi, zeta = x[..., 12], x[..., 13]
        n, _, _ = _axis_terms(psi, theta, phi)
        a_psi, a_theta, a_phi = _gyro_terms(p, wp, wq, wr)
        out = np.zeros_like(x)
        out[..., 0:3] = x[..., 6:9]
        out[..., 3:6] = x[..., 9:12]
        out[..., 6:9] = (zeta / m)[..., None] * n
        out[..., 8] -= g
        out[..., 9] = a_psi
        out[..., 10] = a_theta
        out[..., 11] = a_phi
        out[..., 13] = xi
        return out

    def g_field(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (14, 4))
        out[..., 9, 1] = 1.0 / p.inertia_zz
        out[..., 10, 2] = 1.0 / p.inertia_yy
        out[..., 11, 3] = 1.0 / p.inertia_xx
        out[..., 12, 0] = 1.0
        return out

    def h(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0], x[..., 1], x[..., 2], x[..., 3]], axis=-1)

    def decoupling(x):
        x = np.asarray(x, dtype=float)
        psi, theta, phi = x[..., 3], x[..., 4], x[..., 5]
        omega = x[..., 9:12]
        wp, wq, wr = omega[..., 0], omega[..., 1], omega[..., 2]
        xi, zeta = x[..., 12], x[..., 13]
        if np.any(zeta < floor):
            raise ThrustSingularityError(
                f"thrust singularity: zeta below floor {floor:.4g}"
            )
        n, N, second = _axis_terms(psi, theta, phi)
        a_psi, a_theta, a_phi = _gyro_terms(p, wp, wq, wr)
        gyro = np.stack([a_psi, a_theta, a_phi], axis=-1)

        # Hessian contraction sum_ij d2n/dei dej wi wj for the chain rule
        # of n(psi(t), theta(t), phi(t)) differentiated twice.
        hess = (
            second[("psi", "psi")] * (wp * wp)[..., None]
            + second[("theta", "theta")] * (wq * wq)[..., None]
            + second[("phi", "phi")] * (wr * wr)[..., None]
            + 2.0 * second[("psi", "theta")] * (wp * wq)[..., None]
            + 2.0 * second[("psi", "phi")] * (wp * wr)[..., None]
            + 2.0 * second[("theta", "phi")] * (wq * wr)[..., None]
        )
        n_dot = np.einsum("...ij,...j->...i", N, omega)
        n_gyro = np.einsum("...ij,...j->...i", N, gyro)

        b = np.zeros(x.shape[:-1] + (4,))
        b[..., :3] = (
            (2.0 * xi / m)[..., None] * n_dot
            + (zeta / m)[..., None] * (hess + n_gyro)
        )
        b[..., 3] = a_psi

        A = np.zeros(x.shape[:-1] + (4, 4))
        A[..., :3, 0] = n / m
        A[..., :3, 1] = (zeta / m)[..., None] * N[..., :, 0] / p.inertia_zz
        A[..., :3, 2] = (zeta / m)[..., None] * N[..., :, 1] / p.inertia_yy
        A[..., :3, 3] = (zeta / m)[..., None] * N[..., :, 2] / p.inertia_xx
        A[..., 3, 1] = 1.0 / p.inertia_zz
        return b, A

    def linear_state(x):
        x = np.asarray(x, dtype=float)
        psi, theta, phi = x[..., 3], x[..., 4], x[..., 5]
        omega = x[..., 9:12]
        xi, zeta = x[..., 12], x[..., 13]
        n, N, _ = _axis_terms(psi, theta, phi)
        accel = (zeta / m)[..., None] * n
        accel = accel - np.array([0.0, 0.0, g])
        jerk = (xi / m)[..., None] * n + (zeta / m)[..., None] * np.einsum(
            "...ij,...j->...i", N, omega
        )
        out = np.zeros(x.shape[:-1] + (14,))
        for j in range(3):
            out[..., 4 * j + 0] = x[..., j]
            out[..., 4 * j + 1] = x[..., 6 + j]
            out[..., 4 * j + 2] = accel[..., j]
            out[..., 4 * j + 3] = jerk[..., j]
        out[..., 12] = psi
        out[..., 13] = x[..., 9]
        return out

    mg = m * g
    domain = Box(
        np.array(
            [-2.0, -2.0, -2.0, -0.5, -0.5, -0.5, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 0.5 * mg]
        ),
        np.array(
            [2.0, 2.0, 2.0, 0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.5 * mg]
        ),
    )
    kernel = _kernels.quadrotor_flow_kernel(p)
    return ControlAffineSystem(
        name="quadrotor_14d",
        n=14,
        q=4,
        gamma=(4, 4, 4, 2),
        f=f,
        g=g_field,
        h=h,
        decoupling=decoupling,
        linear_state=linear_state,
        domain=domain,
        angle_indices=(3, 4, 5),
        params=p,
        flow_kernel=kernel,
    )


def hover_state(params: QuadrotorParams, position=(0.0, 0.0, 0.0), yaw=0.0):
    """Level hover: zero rates, thrust balancing gravity."""
    x = np.zeros(14)
    x[0:3] = position
    x[3] = yaw
    x[13] = params.mass * params.gravity
    return x
