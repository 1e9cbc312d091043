"""Control-affine plant definitions.

A :class:`ControlAffineSystem` bundles the vector fields of
``xdot = f(x) + g(x) u``, ``y = h(x)`` together with its vector relative
degree and the analytic quantities the rest of the library needs: the
input-output decoupling terms ``(b(x), A(x))`` and the linearized-portion
state ``xi(x)`` (outputs and their derivatives, interleaved by output).

All callables are written batched-first: they accept arrays of shape
``(..., n)`` and return matching leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..numerics import Rng, rk4_flow

__all__ = [
    "Box",
    "ControlAffineSystem",
    "sample_state",
    "scale_parameters",
    "normal_form_system",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in state space; the support of the sampling
    distribution and the region where decoupling is certified."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "low", np.asarray(self.low, dtype=float))
        object.__setattr__(self, "high", np.asarray(self.high, dtype=float))
        if self.low.shape != self.high.shape:
            raise ValueError("box bounds must have equal shapes")
        if np.any(self.high < self.low):
            raise ValueError("box upper bounds below lower bounds")

    @property
    def dim(self) -> int:
        return self.low.size

    def sample(self, rng: Rng, size=None):
        """Uniform sample; a degenerate box returns its single point."""
        if size is None:
            return rng.uniform(self.low, self.high)
        return rng.uniform(self.low, self.high, (size, self.dim))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.low) & (x <= self.high), axis=-1)

    def center(self):
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class ControlAffineSystem:
    """Square control-affine system with known vector relative degree.

    ``decoupling(x)`` returns ``(b, A)`` with ``y^(gamma) = b(x) + A(x) u``
    and ``linear_state(x)`` returns the interleaved output-derivative
    chain ``(y_1, y_1', ..., y_q^(gamma_q - 1))``.
    """

    name: str
    n: int
    q: int
    gamma: tuple
    f: Callable
    g: Callable
    h: Callable
    decoupling: Callable
    linear_state: Callable
    domain: Box
    angle_indices: tuple = ()
    params: object = None
    flow_kernel: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if sum(self.gamma) > self.n:
            raise ValueError("sum of relative degrees exceeds state dimension")
        if self.domain.dim != self.n:
            raise ValueError("domain dimension does not match state dimension")

    def xdot(self, x, u):
        """State derivative ``f(x) + g(x) u``, batched."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.f(x) + np.einsum("...ij,...j->...i", self.g(x), u)

    def flow(self, x, u, dt, substeps=1):
        """Zero-order-hold flow over ``dt`` (RK4 with uniform substeps).

        Dispatches to the compiled kernel when one is attached.
        """
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.flow_kernel is not None and x.ndim == 2:
            return self.flow_kernel(x, u, dt, substeps)
        if self.flow_kernel is not None and x.ndim == 1:
            return self.flow_kernel(x[None, :], u[None, :], dt, substeps)[0]
        return rk4_flow(lambda s, v: self.xdot(s, v), x, u, dt, substeps)


def sample_state(system: ControlAffineSystem, rng: Rng, size=None):
    """Draw uniform states from the system's domain box."""
    return system.domain.sample(rng, size)


def scale_parameters(params, factor: float):
    """Scale every mass/length/inertia entry of a parameter record.

    Gravity is left untouched. Scaling is multiplicative, so composing
    two scalings equals scaling by the product.
    """
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    updates = {
        name: getattr(params, name) * factor for name in params.scaled_fields()
    }
    return replace(params, **updates)


def normal_form_system(
    name: str,
    gamma: tuple,
    drift: Callable,
    gain: Callable,
    domain_low,
    domain_high,
    angle_indices: tuple = (),
) -> ControlAffineSystem:
    """System in input-output normal form with prescribed decoupling terms.

    The state is the output-derivative chain itself, so ``drift`` and
    ``gain`` (mapping states to ``b`` and ``A``) fully determine the
    dynamics: each output block is a chain of integrators fed by the
    corresponding row of ``b(x) + A(x) u``. Handy for toy plants and for
    constructing plants whose exact linearizing controller lies in a
    chosen function class.
    """
    gamma = tuple(int(g) for g in gamma)
    q = len(gamma)
    n = sum(gamma)
    starts = np.cumsum((0,) + gamma[:-1])
    ends = starts + np.asarray(gamma) - 1

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        b = drift(x)
        for j, (s, e) in enumerate(zip(starts, ends)):
            out[..., s:e] = x[..., s + 1 : e + 1]
            out[..., e] = b[..., j]
        return out

    def g(x):
        x = np.asarray(x, dtype=float)
        A = gain(x)
        out = np.zeros(x.shape[:-1] + (n, q))
        out[..., ends, :] = A
        return out

    def h(x):
        return np.asarray(x, dtype=float)[..., starts]

    def decoupling(x):
        x = np.asarray(x, dtype=float)
        return drift(x), gain(x)

    def linear_state(x):
        return np.array(np.asarray(x, dtype=float), copy=True)

    return ControlAffineSystem(
        name=name,
        n=n,
        q=q,
        gamma=gamma,
        f=f,
        g=g,
        h=h,
        decoupling=decoupling,
        linear_state=linear_state,
        domain=Box(np.asarray(domain_low, dtype=float), np.asarray(domain_high, dtype=float)),
        angle_indices=angle_indices,
    )
