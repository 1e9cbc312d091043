"""Shared numerical kernels.

Dense linear algebra helpers, fixed-step RK4 integration, exact matrix
exponentials for nilpotent matrices, a continuous-time LQR solver and
finite-difference oracles. Everything here is a pure function of its
inputs; random sampling goes through the explicit-seed :class:`Rng`.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "Rng",
    "IntegrationDivergedError",
    "NotNilpotentError",
    "CareSolverError",
    "integrate_rk4",
    "rk4_flow",
    "expm_nilpotent",
    "zoh_input_matrix",
    "lqr_gain",
    "care_residual",
    "finite_diff_gradient",
    "finite_diff_jacobian",
]


class IntegrationDivergedError(RuntimeError):
    """Raised when an integration path produces non-finite state."""

    def __init__(self, time: float):
        super().__init__(f"integration diverged at t={time:.6g}")
        self.time = time


class NotNilpotentError(ValueError):
    """Raised when a matrix expected to be nilpotent is not."""


class CareSolverError(RuntimeError):
    """Raised when the Riccati iteration fails to converge."""

    def __init__(self, residual: float):
        super().__init__(f"CARE failed: residual norm {residual:.3e}")
        self.residual = residual


class Rng:
    """Counter-based random generator with explicit seed threading.

    Wraps a Philox bit generator. Identical seeds give bit-identical
    sample streams. Instances are single-owner: fork children for
    parallel work instead of sharing.
    """

    def __init__(self, seed):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed))
        self.generator = np.random.Generator(np.random.Philox(self._seq))

    @property
    def seed_entropy(self):
        return self._seq.entropy

    def fork(self) -> "Rng":
        """Spawn an independent child stream (deterministic order)."""
        return Rng(self._seq.spawn(1)[0])

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, scale=1.0, size=None):
        return self.generator.normal(0.0, scale, size)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def _rk4_single_step(field, x, u, h):
    k1 = field(x, u)
    k2 = field(x + 0.5 * h * k1, u)
    k3 = field(x + 0.5 * h * k2, u)
    k4 = field(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(field: Callable, x0, u, dt: float, substeps: int = 1):
    """Integrate ``xdot = field(x, u)`` over ``dt`` with ``u`` held constant.

    Classical 4th-order Runge-Kutta with ``substeps`` uniform steps.
    Raises :class:`IntegrationDivergedError` if the state goes non-finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    for i in range(substeps):
        x = _rk4_single_step(field, x, u, h)
        if not np.all(np.isfinite(x)):
            raise IntegrationDivergedError((i + 1) * h)
    return x


def rk4_flow(field: Callable, x0, u, dt: float, substeps: int = 1):
    """Batched zero-order-hold flow map; like :func:`integrate_rk4` but
    without the finiteness check (callers inspect the result)."""
    x = np.asarray(x0, dtype=float)
    u = np.asarray(u, dtype=float)
    h = dt / substeps
    for _ in range(substeps):
        x = _rk4_single_step(field, x, u, h)
    return x


def _nilpotent_powers(A, tol=1e-12):
    """Powers ``[I, A, A^2, ...]`` up to (excluding) the nilpotency index.

    Raises :class:`NotNilpotentError` if ``A^n`` is not numerically zero,
    with the tolerance taken relative to ``norm(A)^n``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    scale = np.linalg.norm(A)
    powers = [np.eye(n)]
    if scale == 0.0:
        return powers
    P = A.copy()
    for k in range(1, n + 1):
        if np.linalg.norm(P) <= tol * scale**k:
            return powers
        powers.append(P)
        P = P @ A
    if np.linalg.norm(P) <= tol * scale ** (n + 1):
        return powers
    raise NotNilpotentError("not nilpotent")


def expm_nilpotent(A, t: float):
    """Exact ``exp(A t)`` for nilpotent ``A`` via the truncated power series."""
    powers = _nilpotent_powers(A)
    out = np.zeros_like(powers[0])
    for k, P in enumerate(powers):
        out += P * (t**k / math.factorial(k))
    return out


def zoh_input_matrix(A, B, dt: float):
    """Exact ``int_0^dt exp(A s) B ds`` for nilpotent ``A``.

    Term-by-term integral ``sum_k A^k B dt^(k+1) / (k+1)!``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    B = np.asarray(B, dtype=float)
    powers = _nilpotent_powers(A)
    out = np.zeros((powers[0].shape[0], B.shape[1]))
    for k, P in enumerate(powers):
        out += P @ B * (dt ** (k + 1) / math.factorial(k + 1))
    return out


def care_residual(A, B, Q, R, P):
    """Frobenius norm of the CARE residual ``A'P + PA - PBR^-1B'P + Q``."""
    S = B @ np.linalg.solve(R, B.T)
    return np.linalg.norm(A.T @ P + P @ A - P @ S @ P + Q)


def _bass_stabilizing_gain(A, B):
    """Initial stabilizing gain via the eigenvalue-shifted Lyapunov trick.

    For ``beta > max |Re eig(A)|`` the Lyapunov equation
    ``(A + beta I) Z + Z (A + beta I)' = 2 B B'`` has a positive definite
    solution when (A, B) is controllable, and ``K = B' Z^-1`` stabilizes.
    """
    n = A.shape[0]
    beta = 1.0 + np.linalg.norm(A)
    Z = scipy.linalg.solve_continuous_lyapunov(-(A + beta * np.eye(n)), -2.0 * B @ B.T)
    Z = 0.5 * (Z + Z.T)
    # Guard against an uncontrollable pair producing a singular Z.
    if not np.all(np.isfinite(Z)) or np.linalg.cond(Z) > 1e14:
        raise CareSolverError(float("inf"))
    return scipy.linalg.solve(Z, B).T


def lqr_gain(A, B, Q, R, tol=1e-10, max_iter=60):
    """Infinite-horizon continuous-time LQR gain ``K = R^-1 B' P``.

    Solves the algebraic Riccati equation by Newton-Kleinman iteration:
    starting from a stabilizing gain, each step solves the Lyapunov
    equation ``(A - B K)' P + P (A - B K) = -(Q + K' R K)`` and refreshes
    ``K = R^-1 B' P``. Convergence is quadratic and monotone.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = A.shape[0]
    if np.all(np.linalg.eigvals(A).real < 0):
        K = np.zeros((B.shape[1], n))
    else:
        K = _bass_stabilizing_gain(A, B)

    ref = max(1.0, np.linalg.norm(Q))
    residual = float("inf")
    for _ in range(max_iter):
        Acl = A - B @ K
        rhs = -(Q + K.T @ R @ K)
        P = scipy.linalg.solve_continuous_lyapunov(Acl.T, rhs)
        P = 0.5 * (P + P.T)
        K = scipy.linalg.solve(R, B.T @ P)
        residual = care_residual(A, B, Q, R, P)
        if residual <= tol * max(ref, np.linalg.norm(P)):
            if np.max(np.linalg.eigvals(A - B @ K).real) >= 0:
                break
            return K
    raise CareSolverError(residual)


def finite_diff_gradient(f: Callable, x, h: float = 1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        hi, lo = f(x + e), f(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError("non-finite function value in finite difference")
        g[i] = (hi - lo) / (2.0 * h)
    return g


def finite_diff_jacobian(f: Callable, x, h: float = 1e-6):
    """Central-difference Jacobian of a vector function, columns over x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)
