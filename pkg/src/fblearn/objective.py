"""The continuous-time learning problem and its convexity certificate.

The pointwise loss measures how far the closed-loop output dynamics
under the learned controller are from the ideal decoupled response:

    loss(x, v, theta) = || v - (b_p(x) + A_p(x) u_theta(x, v)) ||^2

averaged over states drawn from the plant domain and virtual inputs
drawn uniformly from the unit ball. For linear-in-parameters
controllers the averaged loss is exactly quadratic,

    L(theta) = theta' W theta + theta' F + d,

with ``W`` the Gram matrix of the basis responses. Positive
definiteness of ``W`` certifies strong convexity and yields the unique
optimum in closed form. ``W``, ``F`` and ``d`` are estimated by Monte
Carlo; identity-grade checks reuse one frozen sample set so the
quadratic reconstruction is exact up to rounding, not just statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import fbl
from .dynamics.base import ControlAffineSystem
from .numerics import Rng
from .policy import ControllerParams, LinearBasisParameterization, NominalController

__all__ = [
    "VirtualInputDistribution",
    "pointwise_loss",
    "LossSamples",
    "draw_loss_samples",
    "estimate_L",
    "QuadraticForm",
    "quadratic_form",
    "quadratic_form_from_samples",
    "certify_strong_convexity",
    "closed_form_optimum",
    "NotLinearError",
    "NotStronglyConvexError",
]

STRONG_CONVEXITY_RATIO = 1e-8


class NotLinearError(TypeError):
    """Raised when an operation requires a linear-in-parameters controller."""


class NotStronglyConvexError(RuntimeError):
    """Raised when the Gram matrix does not certify strong convexity."""


@dataclass(frozen=True)
class VirtualInputDistribution:
    """Uniform distribution over the closed unit ball in R^q."""

    q: int

    def sample(self, rng: Rng, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else int(size)
        direction = rng.normal(size=(n, self.q))
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        radius = rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / self.q)
        out = direction / norms * radius
        return out[0] if size is None else out


def _controller_output(nominal, param, theta, x, v, features=None):
    u = nominal.control(x, v)
    if features is not None:
        # Reuse cached basis features instead of re-encoding states.
        t1 = theta.theta1.reshape(param.count, param.q)
        u = u + features @ t1
        if param.include_alpha:
            t2 = theta.theta2.reshape(param.count, param.q, param.q)
            u = u + np.einsum("sc,cij,sj->si", features, t2, v)
        return u
    return u + param.correction(theta, x, v)


def pointwise_loss(
    plant: ControlAffineSystem,
    nominal: NominalController,
    param,
    theta: ControllerParams,
    x,
    v,
):
    """Squared linearization error at a single (x, v) or a batch."""
    terms = fbl.decoupling_terms(plant, x)
    v = np.asarray(v, dtype=float)
    u = nominal.control(x, v) + param.correction(theta, x, v)
    achieved = terms.b + np.einsum("...ij,...j->...i", terms.A, u)
    return np.sum((v - achieved) ** 2, axis=-1)


class LossSamples:
    """Frozen (x, v) sample set with everything theta-independent cached.

    Caches the plant decoupling terms, the nominal control, and (for
    linear parameterizations) the basis features, so the loss can be
    re-evaluated at many parameter vectors over the same samples.
    """

    def __init__(self, plant, nominal, param, x, v):
        self.plant = plant
        self.nominal = nominal
        self.param = param
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        terms = fbl.decoupling_terms(plant, self.x)
        self.b = terms.b
        self.A = terms.A
        self.u_nominal = nominal.control(self.x, self.v)
        self.features = (
            param.features(self.x)
            if isinstance(param, LinearBasisParameterization)
            else None
        )
        # Residual target: c = v - (b + A u_nominal).
        self.c = self.v - (
            self.b + np.einsum("sij,sj->si", self.A, self.u_nominal)
        )

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    def loss_at(self, theta: ControllerParams) -> np.ndarray:
        """Per-sample pointwise loss, direct evaluation path."""
        u = _controller_output(
            self.nominal, self.param, theta, self.x, self.v, self.features
        )
        achieved = self.b + np.einsum("sij,sj->si", self.A, u)
        return np.sum((self.v - achieved) ** 2, axis=1)

    def estimate(self, theta: ControllerParams):
        """Monte Carlo mean and standard error over the frozen samples."""
        values = self.loss_at(theta)
        mean = float(values.mean())
        if values.size < 2:
            return mean, 0.0
        return mean, float(values.std(ddof=1) / np.sqrt(values.size))


def draw_loss_samples(
    plant: ControlAffineSystem,
    nominal: NominalController,
    param,
    n_samples: int,
    rng: Rng,
) -> LossSamples:
    """Draw iid samples ``x ~ uniform(D), v ~ uniform(unit ball)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = plant.domain.sample(rng, n_samples)
    v = VirtualInputDistribution(plant.q).sample(rng, n_samples)
    return LossSamples(plant, nominal, param, x, v)


def estimate_L(
    plant: ControlAffineSystem,
    nominal: NominalController,
    param,
    theta: ControllerParams,
    n_samples: int,
    rng: Rng,
):
    """Monte Carlo estimate of the averaged loss: ``(mean, stderr)``."""
    return draw_loss_samples(plant, nominal, param, n_samples, rng).estimate(theta)


@dataclass(frozen=True)
class QuadraticForm:
    """Coefficients of ``L(theta) = theta' W theta + theta' F + d``."""

    W: np.ndarray
    F: np.ndarray
    d: float
    n_samples: int

    def value(self, theta_flat) -> float:
        t = np.asarray(theta_flat, dtype=float)
        return float(t @ self.W @ t + t @ self.F + self.d)

    def save(self, path):
        np.savez(path, W=self.W, F=self.F, d=self.d, n_samples=self.n_samples)

    @classmethod
    def load(cls, path) -> "QuadraticForm":
        data = np.load(path)
        return cls(
            W=data["W"],
            F=data["F"],
            d=float(data["d"]),
            n_samples=int(data["n_samples"]),
        )


def _basis_response(samples: LossSamples, lo: int, hi: int) -> np.ndarray:
    """Rows ``A_p(x) [beta_1, ..., alpha_1 v, ...]`` for a sample slice.

    Shape (s, q, K): column (c, i) of the theta1 block is
    ``phi_c A_p[:, i]``; column (c, i, j) of the theta2 block is
    ``phi_c v_j A_p[:, i]``.
    """
    param = samples.param
    phi = samples.features[lo:hi]
    A = samples.A[lo:hi]
    s, q = A.shape[0], param.q
    blocks = [np.einsum("sc,sqi->sqci", phi, A).reshape(s, q, param.n_theta1)]
    if param.include_alpha:
        v = samples.v[lo:hi]
        blocks.append(
            np.einsum("sc,sqi,sj->sqcij", phi, A, v).reshape(s, q, param.n_theta2)
        )
    return np.concatenate(blocks, axis=2)


def quadratic_form_from_samples(samples: LossSamples, chunk: int = 2048) -> QuadraticForm:
    """Exact quadratic expansion of the sample-mean loss.

    Expanding ``||c - What theta||^2`` per sample and averaging gives
    ``W = mean[What' What]``, ``F = -2 mean[What' c]``, ``d = mean[c' c]``,
    which reconstructs the sampled loss identically.
    """
    param = samples.param
    if not isinstance(param, LinearBasisParameterization):
        raise NotLinearError("certification requires a linear-in-parameters controller")
    k = param.n_theta1 + param.n_theta2
    W = np.zeros((k, k))
    F = np.zeros(k)
    d = 0.0
    n = samples.n_samples
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        G = _basis_response(samples, lo, hi)
        s, q = G.shape[0], G.shape[1]
        Gf = G.reshape(s * q, k)
        cf = samples.c[lo:hi].reshape(s * q)
        W += Gf.T @ Gf
        F += Gf.T @ cf
        d += float(cf @ cf)
    W /= n
    F *= -2.0 / n
    d /= n
    W = 0.5 * (W + W.T)
    return QuadraticForm(W=W, F=F, d=d, n_samples=n)


def quadratic_form(
    plant: ControlAffineSystem,
    nominal: NominalController,
    param,
    n_samples: int,
    rng: Rng,
    chunk: int = 2048,
) -> QuadraticForm:
    """Monte Carlo estimate of ``(W, F, d)`` from fresh samples."""
    if not isinstance(param, LinearBasisParameterization):
        raise NotLinearError("certification requires a linear-in-parameters controller")
    samples = draw_loss_samples(plant, nominal, param, n_samples, rng)
    return quadratic_form_from_samples(samples, chunk=chunk)


def certify_strong_convexity(qf: QuadraticForm):
    """Smallest eigenvalue of ``W`` and the strong-convexity verdict."""
    eigs = np.linalg.eigvalsh(qf.W)
    min_eig, max_eig = float(eigs[0]), float(eigs[-1])
    strong = min_eig > STRONG_CONVEXITY_RATIO * max_eig
    return min_eig, ("strong" if strong else "not-strong")


def closed_form_optimum(qf: QuadraticForm) -> np.ndarray:
    """Unique minimizer ``theta* = -W^-1 F / 2`` of a strongly convex form."""
    _, verdict = certify_strong_convexity(qf)
    if verdict != "strong":
        raise NotStronglyConvexError("not strongly convex")
    return scipy.linalg.solve(qf.W, -0.5 * qf.F, assume_a="sym")
