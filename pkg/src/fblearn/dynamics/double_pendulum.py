"""Fully actuated double pendulum.

Two point masses on rigid massless links, both angles measured from the
downward vertical, a torque input per joint. State ``(th1, th2, w1, w2)``,
outputs ``(th1, th2)``, vector relative degree (2, 2).

Manipulator form ``M(th) wdot + C(th, w) w + G(th) = u`` with

    M = [[(m1+m2) l1^2,       m2 l1 l2 c12],
         [m2 l1 l2 c12,       m2 l2^2     ]]
    C = [[0,                  m2 l1 l2 s12 w2],
         [-m2 l1 l2 s12 w1,   0              ]]
    G = [(m1+m2) g l1 sin th1,  m2 g l2 sin th2]

where ``c12 = cos(th1 - th2)`` and ``s12 = sin(th1 - th2)``. ``M`` is
positive definite everywhere, so the decoupling matrix ``M^-1`` never
degenerates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Box, ControlAffineSystem
from .. import _kernels

__all__ = ["DoublePendulumParams", "double_pendulum", "pendulum_energy"]


@dataclass(frozen=True)
class DoublePendulumParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def scaled_fields():
        return ("m1", "m2", "l1", "l2")


def _mass_terms(p: DoublePendulumParams, th1, th2):
    c12 = np.cos(th1 - th2)
    m11 = (p.m1 + p.m2) * p.l1**2
    m12 = p.m2 * p.l1 * p.l2 * c12
    m22 = p.m2 * p.l2**2
    return m11, m12, m22


def _bias_terms(p: DoublePendulumParams, th1, th2, w1, w2):
    """Coriolis-plus-gravity torque ``C(th, w) w + G(th)``."""
    s12 = np.sin(th1 - th2)
    k = p.m2 * p.l1 * p.l2 * s12
    g1 = (p.m1 + p.m2) * p.gravity * p.l1 * np.sin(th1)
    g2 = p.m2 * p.gravity * p.l2 * np.sin(th2)
    return k * w2**2 + g1, -k * w1**2 + g2


def _solve_mass(m11, m12, m22, r1, r2):
    det = m11 * m22 - m12**2
    return (m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det


def double_pendulum(params: DoublePendulumParams | None = None) -> ControlAffineSystem:
    p = params if params is not None else DoublePendulumParams()

    def unpack(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0], x[..., 1], x[..., 2], x[..., 3]

    def f(x):
        th1, th2, w1, w2 = unpack(x)
        m11, m12, m22 = _mass_terms(p, th1, th2)
        n1, n2 = _bias_terms(p, th1, th2, w1, w2)
        a1, a2 = _solve_mass(m11, m12, m22, -n1, -n2)
        return np.stack([w1, w2, a1, a2], axis=-1)

    def g(x):
        th1, th2, _, _ = unpack(x)
        m11, m12, m22 = _mass_terms(p, th1, th2)
        det = m11 * m22 - m12**2
        out = np.zeros(np.shape(th1) + (4, 2))
        out[..., 2, 0] = m22 / det
        out[..., 2, 1] = -m12 / det
        out[..., 3, 0] = -m12 / det
        out[..., 3, 1] = m11 / det
        return out

    def h(x):
        return np.asarray(x, dtype=float)[..., :2]

    def decoupling(x):
        """b(x) = -M^-1 (Cw + G), A(x) = M^-1."""
        th1, th2, w1, w2 = unpack(x)
        m11, m12, m22 = _mass_terms(p, th1, th2)
        det = m11 * m22 - m12**2
        A = np.empty(np.shape(th1) + (2, 2))
        A[..., 0, 0] = m22 / det
        A[..., 0, 1] = -m12 / det
        A[..., 1, 0] = -m12 / det
        A[..., 1, 1] = m11 / det
        n1, n2 = _bias_terms(p, th1, th2, w1, w2)
        b1, b2 = _solve_mass(m11, m12, m22, -n1, -n2)
        return np.stack([b1, b2], axis=-1), A

    def linear_state(x):
        th1, th2, w1, w2 = unpack(x)
        return np.stack([th1, w1, th2, w2], axis=-1)

    domain = Box(
        np.array([-np.pi, -np.pi, -2.0, -2.0]),
        np.array([np.pi, np.pi, 2.0, 2.0]),
    )
    kernel = _kernels.pendulum_flow_kernel(p)
    return ControlAffineSystem(
        name="double_pendulum",
        n=4,
        q=2,
        gamma=(2, 2),
        f=f,
        g=g,
        h=h,
        decoupling=decoupling,
        linear_state=linear_state,
        domain=domain,
        angle_indices=(0, 1),
        params=p,
        flow_kernel=kernel,
    )


def pendulum_energy(params: DoublePendulumParams, x):
    """Total mechanical energy; conserved under zero input."""
    p = params
    x = np.asarray(x, dtype=float)
    th1, th2, w1, w2 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m11, m12, m22 = _mass_terms(p, th1, th2)
    kinetic = 0.5 * (m11 * w1**2 + 2.0 * m12 * w1 * w2 + m22 * w2**2)
    potential = -(p.m1 + p.m2) * p.gravity * p.l1 * np.cos(th1) - p.m2 * p.gravity * p.l2 * np.cos(th2)
    return kinetic + potential
