"""Learned linearizing controllers.

The learned control law layers a parameterized correction over a fixed
nominal controller:

    u(x, v) = [beta_m(x) + beta_1(x; theta1)] + [alpha_m(x) + alpha_2(x; theta2)] v

Two interchangeable correction families are provided: a linear-in-
parameters basis expansion (radial basis functions over encoded states,
or any custom scalar feature map) and a tanh feed-forward network with a
split output head. Both expose exact parameter Jacobians; policy-
gradient updates consume the accumulated form ``mean_s J_s' delta_s``.

Controller inputs replace every angle coordinate with its (sin, cos)
pair, so corrections are automatically periodic in the angles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics.base import ControlAffineSystem, sample_state
from .numerics import Rng

__all__ = [
    "encode_state",
    "encoded_dim",
    "ControllerParams",
    "NominalController",
    "LinearBasisParameterization",
    "RbfParameterization",
    "MlpParameterization",
    "make_rbf",
    "make_mlp",
    "learned_control",
    "control_jacobian_theta",
    "project_params",
    "save_checkpoint",
    "load_checkpoint",
]


@lru_cache(maxsize=None)
def _encoding_slots(n: int, angle_indices: tuple):
    """Output slot layout: angles expand to a (sin, cos) pair in place."""
    angles = set(angle_indices)
    if not angles.issubset(range(n)):
        raise ValueError("angle index out of range")
    passthrough_src, passthrough_dst, angle_src, angle_dst = [], [], [], []
    pos = 0
    for i in range(n):
        if i in angles:
            angle_src.append(i)
            angle_dst.append(pos)
            pos += 2
        else:
            passthrough_src.append(i)
            passthrough_dst.append(pos)
            pos += 1
    return (
        np.array(passthrough_src),
        np.array(passthrough_dst),
        np.array(angle_src),
        np.array(angle_dst),
        pos,
    )


def encoded_dim(n: int, angle_indices) -> int:
    return n + len(tuple(angle_indices))


def encode_state(x, angle_indices):
    """Replace each angle coordinate by ``(sin, cos)``; others pass through."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    psrc, pdst, asrc, adst, dim = _encoding_slots(n, tuple(angle_indices))
    out = np.empty(x.shape[:-1] + (dim,))
    if psrc.size:
        out[..., pdst] = x[..., psrc]
    if asrc.size:
        out[..., adst] = np.sin(x[..., asrc])
        out[..., adst + 1] = np.cos(x[..., asrc])
    return out


@dataclass(frozen=True)
class ControllerParams:
    """Trainable parameters ``theta = (theta1, theta2)``."""

    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta1", np.asarray(self.theta1, dtype=float))
        object.__setattr__(self, "theta2", np.asarray(self.theta2, dtype=float))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta1, self.theta2])

    @property
    def size(self) -> int:
        return self.theta1.size + self.theta2.size

    def replace_flat(self, flat) -> "ControllerParams":
        flat = np.asarray(flat, dtype=float)
        k1 = self.theta1.size
        return ControllerParams(flat[:k1].copy(), flat[k1:].copy())


def project_params(theta: ControllerParams, lower: float, upper: float) -> ControllerParams:
    """Euclidean projection onto the box ``[lower, upper]^K``."""
    return ControllerParams(
        np.clip(theta.theta1, lower, upper), np.clip(theta.theta2, lower, upper)
    )


class NominalController:
    """Model-based component ``u_m(x, v) = beta_m(x) + alpha_m(x) v``."""

    def __init__(self, beta: Callable, alpha: Callable, q: int):
        self.beta = beta
        self.alpha = alpha
        self.q = q

    @classmethod
    def zero(cls, q: int) -> "NominalController":
        """No prior model: both nominal terms vanish."""

        def beta(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (q,))

        def alpha(x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape[:-1] + (q, q))

        return cls(beta, alpha, q)

    @classmethod
    def from_model(cls, model: ControlAffineSystem) -> "NominalController":
        """Exact linearizing controller of a (possibly mismatched) model."""

        def beta(x):
            b, A = model.decoupling(np.asarray(x, dtype=float))
            return -np.linalg.solve(A, b[..., None])[..., 0]

        def alpha(x):
            _, A = model.decoupling(np.asarray(x, dtype=float))
            return np.linalg.inv(A)

        return cls(beta, alpha, model.q)

    def control(self, x, v):
        v = np.asarray(v, dtype=float)
        return self.beta(x) + np.einsum("...ij,...j->...i", self.alpha(x), v)


class LinearBasisParameterization:
    """Linear-in-parameters correction built from scalar features.

    A feature map ``phi: encoded state -> R^count`` generates the vector
    basis ``beta_(c,i)(x) = phi_c(x) e_i`` and the matrix basis
    ``alpha_(c,i,j)(x) = phi_c(x) E_ij``, so ``K1 = count * q`` and
    ``K2 = count * q^2``. The correction is affine in theta for fixed
    ``(x, v)``.
    """

    kind = "linear"

    def __init__(self, feature_fn, count, q, angle_indices=(), include_alpha=True):
        self._feature_fn = feature_fn
        self.count = int(count)
        self.q = int(q)
        self.angle_indices = tuple(angle_indices)
        self.include_alpha = bool(include_alpha)
        self.n_theta1 = self.count * self.q
        self.n_theta2 = self.count * self.q * self.q if include_alpha else 0

    def zero_params(self) -> ControllerParams:
        return ControllerParams(np.zeros(self.n_theta1), np.zeros(self.n_theta2))

    def init_params(self, rng: Rng) -> ControllerParams:
        return self.zero_params()

    def features(self, x) -> np.ndarray:
        """Scalar features, shape (..., count)."""
        z = encode_state(x, self.angle_indices)
        return self._feature_fn(z)

    def correction_terms(self, theta: ControllerParams, x):
        phi = self.features(x)
        t1 = theta.theta1.reshape(self.count, self.q)
        beta = phi @ t1
        if self.include_alpha:
            t2 = theta.theta2.reshape(self.count, self.q, self.q)
            alpha = np.einsum("...c,cij->...ij", phi, t2)
        else:
            alpha = np.zeros(phi.shape[:-1] + (self.q, self.q))
        return beta, alpha

    def correction(self, theta: ControllerParams, x, v):
        beta, alpha = self.correction_terms(theta, x)
        return beta + np.einsum("...ij,...j->...i", alpha, np.asarray(v, dtype=float))

    def jacobian(self, theta: ControllerParams, x, v):
        """Exact ``d u / d theta`` at a single (x, v); independent of theta."""
        phi = self.features(x)
        v = np.asarray(v, dtype=float)
        q = self.q
        J1 = np.zeros((q, self.n_theta1))
        for i in range(q):
            J1[i, i::q] = phi
        cols = [J1]
        if self.include_alpha:
            J2 = np.zeros((q, self.n_theta2))
            block = np.einsum("c,j->cj", phi, v).reshape(-1)
            for i in range(q):
                idx = (
                    np.arange(self.count)[:, None] * q * q
                    + i * q
                    + np.arange(q)[None, :]
                ).reshape(-1)
                J2[i, idx] = block
            cols.append(J2)
        return np.concatenate(cols, axis=1)

    def grad_from_outputs(self, theta: ControllerParams, x, v, delta):
        """Accumulated ``mean_s J_s' delta_s`` over a batch, flattened."""
        phi = self.features(x)
        v = np.asarray(v, dtype=float)
        delta = np.asarray(delta, dtype=float)
        s = phi.shape[0]
        g1 = (phi.T @ delta) / s
        if self.include_alpha:
            g2 = np.einsum("sc,si,sj->cij", phi, delta, v) / s
            return np.concatenate([g1.reshape(-1), g2.reshape(-1)])
        return g1.reshape(-1)


class RbfParameterization(LinearBasisParameterization):
    """Gaussian radial basis features over encoded states.

    Distances are measured after dividing each encoded coordinate by a
    per-dimension scale (half the coordinate range by default), so one
    width works across coordinates with very different ranges.
    """

    kind = "rbf"

    def __init__(self, centers, width, q, angle_indices=(), scales=None):
        self.centers = np.asarray(centers, dtype=float)
        self.width = float(width)
        if self.width <= 0:
            raise ValueError("width must be positive")
        if scales is None:
            scales = np.ones(self.centers.shape[1])
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        scaled_centers = self.centers / self.scales
        sq_centers = np.sum(scaled_centers**2, axis=1)
        gain = 1.0 / (2.0 * self.width**2)

        def feature_fn(z):
            zs = z / self.scales
            sq = np.sum(zs**2, axis=-1)[..., None] + sq_centers - 2.0 * zs @ scaled_centers.T
            return np.exp(-np.maximum(sq, 0.0) * gain)

        super().__init__(
            feature_fn, self.centers.shape[0], q, angle_indices, include_alpha=True
        )


DEFAULT_WIDTH_FACTOR = 1.3


def _mean_nearest_neighbor(points) -> float:
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    nn = nn[np.isfinite(nn) & (nn > 0)]
    if nn.size == 0:
        return 1.0
    return float(nn.mean())


def encoding_scales(system: ControlAffineSystem) -> np.ndarray:
    """Half-ranges of the encoded domain; sin/cos coordinates get 1."""
    half = 0.5 * (system.domain.high - system.domain.low)
    psrc, pdst, asrc, adst, dim = _encoding_slots(
        system.n, tuple(system.angle_indices)
    )
    scales = np.ones(dim)
    if psrc.size:
        scales[pdst] = np.maximum(half[psrc], 1e-12)
    return scales


def make_rbf(
    count: int,
    system: ControlAffineSystem,
    width: float | None = None,
    rng: Rng | None = None,
    duplicate_first: bool = False,
) -> RbfParameterization:
    """Basis of ``count`` Gaussians centered at random encoded states.

    The default width is 1.2 times the mean nearest-neighbor distance of
    the normalized centers: wide enough that the basis can reproduce the
    smooth global corrections, narrow enough that the Gram matrix stays
    numerically positive definite. ``duplicate_first`` copies center 0
    onto center 1, deliberately producing a linearly dependent basis
    (used to exercise the convexity certificate).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if rng is None:
        rng = Rng(0)
    states = sample_state(system, rng, count)
    centers = encode_state(states, system.angle_indices)
    if duplicate_first:
        if count < 2:
            raise ValueError("duplicate_first requires count >= 2")
        centers[1] = centers[0]
    scales = encoding_scales(system)
    if width is None or width <= 0:
        width = DEFAULT_WIDTH_FACTOR * _mean_nearest_neighbor(centers / scales)
    return RbfParameterization(centers, width, system.q, system.angle_indices, scales)


class MlpParameterization:
    """tanh feed-forward network with a split output head.

    The trunk maps the encoded state through hidden layers; a linear
    head of ``q`` outputs forms the drift correction and a second head
    of ``q^2`` outputs forms the row-major gain correction. ``theta1``
    holds the trunk plus the drift head, ``theta2`` the gain head. Both
    heads start at zero so training begins exactly at the nominal
    controller.
    """

    kind = "mlp"

    def __init__(self, n_state, widths, q, angle_indices=()):
        self.n_state = int(n_state)
        self.widths = tuple(int(w) for w in widths)
        if any(w < 1 for w in self.widths):
            raise ValueError("hidden widths must be positive")
        self.q = int(q)
        self.angle_indices = tuple(angle_indices)
        self.d_in = encoded_dim(self.n_state, self.angle_indices)
        dims = (self.d_in,) + self.widths
        self._trunk_shapes = [
            ((dims[i + 1], dims[i]), (dims[i + 1],)) for i in range(len(self.widths))
        ]
        h_last = self.widths[-1]
        self._beta_shapes = ((self.q, h_last), (self.q,))
        self._alpha_shapes = ((self.q * self.q, h_last), (self.q * self.q,))
        trunk = sum(np.prod(w) + np.prod(b) for w, b in self._trunk_shapes)
        self.n_theta1 = int(trunk + np.prod(self._beta_shapes[0]) + self.q)
        self.n_theta2 = int(np.prod(self._alpha_shapes[0]) + self.q * self.q)

    def zero_params(self) -> ControllerParams:
        return ControllerParams(np.zeros(self.n_theta1), np.zeros(self.n_theta2))

    def init_params(self, rng: Rng) -> ControllerParams:
        """Fan-in scaled symmetric trunk, zero heads."""
        chunks = []
        for (wshape, bshape) in self._trunk_shapes:
            bound = 1.0 / np.sqrt(wshape[1])
            chunks.append(rng.uniform(-bound, bound, int(np.prod(wshape))))
            chunks.append(np.zeros(int(np.prod(bshape))))
        chunks.append(np.zeros(int(np.prod(self._beta_shapes[0])) + self.q))
        theta1 = np.concatenate(chunks)
        theta2 = np.zeros(self.n_theta2)
        return ControllerParams(theta1, theta2)

    def _unpack(self, theta: ControllerParams):
        t1, t2 = theta.theta1, theta.theta2
        layers = []
        off = 0
        for (wshape, bshape) in self._trunk_shapes:
            wn, bn = int(np.prod(wshape)), int(np.prod(bshape))
            layers.append((t1[off : off + wn].reshape(wshape), t1[off + wn : off + wn + bn]))
            off += wn + bn
        wshape, _ = self._beta_shapes
        wn = int(np.prod(wshape))
        beta_head = (t1[off : off + wn].reshape(wshape), t1[off + wn :])
        wshape, _ = self._alpha_shapes
        wn = int(np.prod(wshape))
        alpha_head = (t2[:wn].reshape(wshape), t2[wn:])
        return layers, beta_head, alpha_head

    def _forward(self, theta: ControllerParams, x):
        z = encode_state(np.asarray(x, dtype=float), self.angle_indices)
        single = z.ndim == 1
        if single:
            z = z[None, :]
        layers, (wb, bb), (wa, ba) = self._unpack(theta)
        acts = [z]
        for (w, b) in layers:
            z = np.tanh(z @ w.T + b)
            acts.append(z)
        beta = z @ wb.T + bb
        alpha = (z @ wa.T + ba).reshape(z.shape[0], self.q, self.q)
        return acts, beta, alpha, single

    def correction_terms(self, theta: ControllerParams, x):
        _, beta, alpha, single = self._forward(theta, x)
        if single:
            return beta[0], alpha[0]
        return beta, alpha

    def correction(self, theta: ControllerParams, x, v):
        beta, alpha = self.correction_terms(theta, x)
        return beta + np.einsum("...ij,...j->...i", alpha, np.asarray(v, dtype=float))

    def grad_from_outputs(self, theta: ControllerParams, x, v, delta):
        """Reverse-mode ``mean_s J_s' delta_s`` over a batch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        delta = np.atleast_2d(np.asarray(delta, dtype=float))
        s = x.shape[0]
        acts, _, _, _ = self._forward(theta, x)
        layers, (wb, _), (wa, _) = self._unpack(theta)
        z_last = acts[-1]

        # Output-layer gradients; the alpha head sees delta_i v_j row-major.
        d_alpha_out = (delta[:, :, None] * v[:, None, :]).reshape(s, self.q * self.q)
        g_wb = delta.T @ z_last / s
        g_bb = delta.mean(axis=0)
        g_wa = d_alpha_out.T @ z_last / s
        g_ba = d_alpha_out.mean(axis=0)

        dz = delta @ wb + d_alpha_out @ wa
        g_trunk = []
        for (w, _), a_in, a_out in zip(
            reversed(layers), reversed(acts[:-1]), reversed(acts[1:])
        ):
            dpre = dz * (1.0 - a_out**2)
            g_w = dpre.T @ a_in / s
            g_b = dpre.mean(axis=0)
            g_trunk.append((g_w, g_b))
            dz = dpre @ w
        g_trunk.reverse()

        g1 = np.concatenate(
            [np.concatenate([gw.reshape(-1), gb]) for gw, gb in g_trunk]
            + [g_wb.reshape(-1), g_bb]
        )
        g2 = np.concatenate([g_wa.reshape(-1), g_ba])
        return np.concatenate([g1, g2])

    def jacobian(self, theta: ControllerParams, x, v):
        """Exact ``d u / d theta`` at a single (x, v), one row per output."""
        rows = []
        for i in range(self.q):
            delta = np.zeros((1, self.q))
            delta[0, i] = 1.0
            rows.append(self.grad_from_outputs(theta, x[None, :], np.asarray(v)[None, :], delta))
        return np.stack(rows, axis=0)


def make_mlp(system: ControlAffineSystem, widths=(64, 64)) -> MlpParameterization:
    return MlpParameterization(system.n, widths, system.q, system.angle_indices)


def learned_control(nominal: NominalController, param, theta: ControllerParams, x, v):
    """Nominal controller plus parameterized correction."""
    return nominal.control(x, v) + param.correction(theta, x, v)


def control_jacobian_theta(param, theta: ControllerParams, x, v):
    """Exact Jacobian of the learned control with respect to theta."""
    return param.jacobian(theta, np.asarray(x, dtype=float), np.asarray(v, dtype=float))


def save_checkpoint(path, param, theta: ControllerParams, meta: dict | None = None):
    """Serialize parameterization and parameters to a JSON checkpoint."""
    payload = {
        "schema": "fblearn-checkpoint.v1",
        "kind": param.kind,
        "q": param.q,
        "angle_indices": list(param.angle_indices),
        "theta1": theta.theta1.tolist(),
        "theta2": theta.theta2.tolist(),
        "meta": meta or {},
    }
    if param.kind == "rbf":
        payload["centers"] = param.centers.tolist()
        payload["width"] = param.width
        payload["scales"] = param.scales.tolist()
    elif param.kind == "mlp":
        payload["n_state"] = param.n_state
        payload["widths"] = list(param.widths)
    else:
        raise ValueError(f"parameterization kind {param.kind!r} is not serializable")
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_checkpoint(path):
    """Rebuild ``(param, theta, meta)`` from a checkpoint file."""
    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != "fblearn-checkpoint.v1":
        raise ValueError(f"unknown checkpoint schema {payload.get('schema')!r}")
    kind = payload["kind"]
    angle_indices = tuple(payload["angle_indices"])
    if kind == "rbf":
        param = RbfParameterization(
            np.asarray(payload["centers"], dtype=float),
            payload["width"],
            payload["q"],
            angle_indices,
            scales=np.asarray(payload["scales"], dtype=float),
        )
    elif kind == "mlp":
        param = MlpParameterization(
            payload["n_state"], payload["widths"], payload["q"], angle_indices
        )
    else:
        raise ValueError(f"unknown parameterization kind {kind!r}")
    theta = ControllerParams(
        np.asarray(payload["theta1"], dtype=float),
        np.asarray(payload["theta2"], dtype=float),
    )
    return param, theta, payload.get("meta", {})
