"""Model-based feedback linearization.

Decoupling-term access with a conditioning guard, the exact linearizing
control law ``u = A(x)^-1 (v - b(x))``, and the LTI reference model the
linearized input-output dynamics are matched to: per output ``j`` a
chain of ``gamma_j`` integrators, stacked block-diagonally, plus its
zero-order-hold discretization ``(Abar, Bbar)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics.base import ControlAffineSystem
from .numerics import expm_nilpotent, zoh_input_matrix

__all__ = [
    "DecouplingTerms",
    "DecouplingSingularityError",
    "decoupling_terms",
    "exact_linearizing_control",
    "ReferenceModel",
    "reference_model",
    "linear_state",
]

CONDITION_CAP = 1e6


class DecouplingSingularityError(RuntimeError):
    """Raised when the decoupling matrix is singular or near-singular."""


@dataclass(frozen=True)
class DecouplingTerms:
    """Terms of ``y^(gamma) = b(x) + A(x) u``; batched over leading axes."""

    b: np.ndarray
    A: np.ndarray


def decoupling_terms(
    system: ControlAffineSystem, x, check_condition: bool = True
) -> DecouplingTerms:
    """Analytic decoupling terms of the system at ``x``.

    With ``check_condition`` the condition number of ``A(x)`` is capped;
    beyond the cap an error is raised rather than returning a garbage
    inverse downstream.
    """
    b, A = system.decoupling(np.asarray(x, dtype=float))
    if check_condition:
        cond = np.linalg.cond(A)
        if not np.all(np.isfinite(cond)) or np.any(cond > CONDITION_CAP):
            raise DecouplingSingularityError(
                f"decoupling singularity: condition number exceeds {CONDITION_CAP:.1e}"
            )
    return DecouplingTerms(b=b, A=A)


def exact_linearizing_control(system: ControlAffineSystem, x, v):
    """Exact linearizing input: solves ``A(x) u = v - b(x)``."""
    terms = decoupling_terms(system, x)
    v = np.asarray(v, dtype=float)
    return np.linalg.solve(terms.A, (v - terms.b)[..., None])[..., 0]


@dataclass(frozen=True)
class ReferenceModel:
    """Block integrator-chain target dynamics with ZOH discretization."""

    gamma: tuple
    A: np.ndarray
    B: np.ndarray
    dt: float
    A_bar: np.ndarray
    B_bar: np.ndarray

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    def block_starts(self):
        return np.cumsum((0,) + tuple(self.gamma[:-1]))

    def output_rows(self):
        """Rows of xi holding the outputs themselves."""
        return self.block_starts()


def reference_model(gamma, dt: float) -> ReferenceModel:
    """Canonical reference model for a vector relative degree.

    State ordering interleaves by output: ``(y_1, y_1', ..., y_q, ...)``.
    ``B`` routes input ``j`` into the last row of block ``j``.
    """
    gamma = tuple(int(g) for g in gamma)
    if any(g < 1 for g in gamma):
        raise ValueError("relative degrees must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be positive")
    dim, q = sum(gamma), len(gamma)
    A = np.zeros((dim, dim))
    B = np.zeros((dim, q))
    row = 0
    for j, gj in enumerate(gamma):
        for i in range(gj - 1):
            A[row + i, row + i + 1] = 1.0
        B[row + gj - 1, j] = 1.0
        row += gj
    return ReferenceModel(
        gamma=gamma,
        A=A,
        B=B,
        dt=float(dt),
        A_bar=expm_nilpotent(A, dt),
        B_bar=zoh_input_matrix(A, B, dt),
    )


def linear_state(system: ControlAffineSystem, x):
    """Outputs and their derivatives up to order ``gamma_j - 1``."""
    return system.linear_state(np.asarray(x, dtype=float))
