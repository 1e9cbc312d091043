"""Trajectory tracking on top of a linearizing controller.

The tracking loop runs the reference model's LQR state feedback through
whatever linearizing controller it is handed (exact, nominal or
learned): ``v_k = v_r(t_k) + K (xi_r(t_k) - xi_k)``, ``u_k`` from the
controller, zero-order hold on the plant. Reference trajectories supply
the full output-derivative chain ``xi_r`` plus the feed-forward
``v_r`` (the gamma-th derivatives) analytically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics.base import ControlAffineSystem
from .fbl import DecouplingSingularityError, ReferenceModel
from .dynamics.quadrotor import ThrustSingularityError
from .numerics import lqr_gain
from .rl import STATE_NORM_CAP, default_substeps

__all__ = [
    "ReferenceTrajectory",
    "reference",
    "tracking_gain",
    "TrackingReport",
    "track",
]

TRACKING_CSV_SCHEMA = "tracking.v1"
STATE_PENALTY = 10.0


class _Channel:
    """Scalar reference signal with analytic derivatives."""

    def derivative(self, t, order):
        raise NotImplementedError


class _Sinusoid(_Channel):
    def __init__(self, amplitude, omega, phase=0.0, offset=0.0):
        self.a, self.w, self.p, self.off = amplitude, omega, phase, offset

    def derivative(self, t, order):
        t = np.asarray(t, dtype=float)
        val = self.a * self.w**order * np.sin(self.w * t + self.p + order * np.pi / 2.0)
        return val + self.off if order == 0 else val


class _Polynomial(_Channel):
    """c0 + c1 t (enough for constant offsets and linear climbs)."""

    def __init__(self, c0, c1=0.0):
        self.c0, self.c1 = c0, c1

    def derivative(self, t, order):
        t = np.asarray(t, dtype=float)
        if order == 0:
            return self.c0 + self.c1 * t
        if order == 1:
            return np.full_like(t, self.c1)
        return np.zeros_like(t)


class _SquareWave(_Channel):
    def __init__(self, amplitude, period, offset=0.0):
        self.a, self.period, self.off = amplitude, period, offset

    def derivative(self, t, order):
        t = np.asarray(t, dtype=float)
        if order > 0:
            return np.zeros_like(t)
        half = np.floor(2.0 * t / self.period).astype(int)
        return self.off + np.where(half % 2 == 0, self.a, -self.a)


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Maps time to the reference chain state and feed-forward input."""

    kind: str
    gamma: tuple
    channels: tuple

    def xi(self, t):
        cols = []
        for gj, ch in zip(self.gamma, self.channels):
            cols.extend(ch.derivative(t, d) for d in range(gj))
        return np.stack(cols, axis=-1)

    def v(self, t):
        cols = [ch.derivative(t, gj) for gj, ch in zip(self.gamma, self.channels)]
        return np.stack(cols, axis=-1)

    def outputs(self, t):
        cols = [ch.derivative(t, 0) for ch in self.channels]
        return np.stack(cols, axis=-1)


def reference(kind: str, params: dict, gamma, dt: float = 0.0) -> ReferenceTrajectory:
    """Build a reference trajectory generator.

    Kinds: ``sinusoid`` (every output the same sinusoid), ``figure_eight``
    and ``corkscrew`` (position plus oscillating yaw, outputs
    (x, y, z, yaw)), ``square_wave`` (piecewise-constant setpoints with
    zero feed-forward).
    """
    gamma = tuple(int(g) for g in gamma)
    q = len(gamma)
    p = dict(params)
    if kind == "sinusoid":
        w = 2.0 * math.pi * p.get("frequency", 0.5)
        ch = tuple(
            _Sinusoid(p.get("amplitude", 0.5), w, phase=p.get("phase", 0.0))
            for _ in range(q)
        )
    elif kind == "figure_eight":
        if q != 4:
            raise ValueError("figure_eight requires four output channels")
        w = 2.0 * math.pi * p.get("frequency", 0.1)
        wy = 2.0 * math.pi * p.get("yaw_frequency", 0.1)
        ch = (
            _Sinusoid(p.get("x_amplitude", 1.0), w),
            _Sinusoid(p.get("y_amplitude", 0.5), 2.0 * w),
            _Polynomial(p.get("z_offset", 0.0)),
            _Sinusoid(p.get("yaw_amplitude", 0.3), wy),
        )
    elif kind == "corkscrew":
        if q != 4:
            raise ValueError("corkscrew requires four output channels")
        w = 2.0 * math.pi * p.get("frequency", 0.1)
        wy = 2.0 * math.pi * p.get("yaw_frequency", 0.1)
        radius = p.get("radius", 1.0)
        ch = (
            _Sinusoid(radius, w, phase=np.pi / 2.0),
            _Sinusoid(radius, w),
            _Polynomial(p.get("z_offset", 0.0), p.get("climb_rate", 0.25)),
            _Sinusoid(p.get("yaw_amplitude", 0.3), wy),
        )
    elif kind == "square_wave":
        ch = tuple(
            _SquareWave(p.get("amplitude", 0.5), p.get("period", 5.0)) for _ in range(q)
        )
    else:
        raise ValueError(f"unsupported reference kind {kind!r}")
    return ReferenceTrajectory(kind=kind, gamma=gamma, channels=ch)


def tracking_gain(ref: ReferenceModel) -> np.ndarray:
    """LQR gain on the reference model, state deviation penalized
    ten times more than input magnitude."""
    dim = ref.dim
    return lqr_gain(ref.A, ref.B, STATE_PENALTY * np.eye(dim), np.eye(ref.q))


@dataclass(frozen=True)
class TrackingReport:
    """Closed-loop tracking record and error metrics."""

    t: np.ndarray
    y: np.ndarray
    y_ref: np.ndarray
    u: np.ndarray
    err: np.ndarray
    dt: float
    total_l2: float
    rms: np.ndarray
    diverged: bool
    diverged_time: float | None = None

    def summary(self) -> dict:
        return {
            "total_l2": self.total_l2,
            "rms": [float(r) for r in self.rms],
            "diverged": bool(self.diverged),
            "diverged_time": self.diverged_time,
            "steps": int(self.t.size),
        }

    def to_csv(self, path):
        q = self.y.shape[1]
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {TRACKING_CSV_SCHEMA}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["t"]
                + [f"y{j + 1}" for j in range(q)]
                + [f"yref{j + 1}" for j in range(q)]
                + [f"u{j + 1}" for j in range(q)]
                + ["err_l2"]
            )
            for i in range(self.t.size):
                row = (
                    [self.t[i]]
                    + list(self.y[i])
                    + list(self.y_ref[i])
                    + list(self.u[i])
                    + [self.err[i]]
                )
                writer.writerow([repr(float(val)) for val in row])


def _assemble_report(t, y, y_ref, u, err, dt, diverged, diverged_time):
    t = np.asarray(t)
    y = np.asarray(y)
    y_ref = np.asarray(y_ref)
    u = np.asarray(u)
    err = np.asarray(err)
    total = float(np.sqrt(np.sum(err**2) * dt))
    if y.size:
        rms = np.sqrt(np.mean((y - y_ref) ** 2, axis=0))
    else:
        rms = np.zeros(0)
    return TrackingReport(
        t=t,
        y=y,
        y_ref=y_ref,
        u=u,
        err=err,
        dt=dt,
        total_l2=total,
        rms=rms,
        diverged=diverged,
        diverged_time=diverged_time,
    )


def track(
    plant: ControlAffineSystem,
    controller: Callable,
    traj: ReferenceTrajectory,
    K: np.ndarray,
    x0,
    duration: float,
    dt: float,
    substeps: int = 0,
) -> TrackingReport:
    """Closed-loop tracking run; truncates with a diverged flag if the
    state norm exceeds the cap or the controller loses its decoupling."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    if substeps < 1:
        substeps = default_substeps(dt)
    steps = int(round(duration / dt))
    x = np.asarray(x0, dtype=float).copy()
    t_rows, y_rows, yref_rows, u_rows, err_rows = [], [], [], [], []
    diverged = False
    diverged_time = None
    for k in range(steps):
        t = k * dt
        xi = plant.linear_state(x)
        xi_r = traj.xi(t)
        v = traj.v(t) + K @ (xi_r - xi)
        try:
            u = controller(x, v)
        except (DecouplingSingularityError, ThrustSingularityError):
            diverged, diverged_time = True, t
            break
        y = plant.h(x)
        y_ref = traj.outputs(t)
        t_rows.append(t)
        y_rows.append(y)
        yref_rows.append(y_ref)
        u_rows.append(u)
        err_rows.append(float(np.linalg.norm(y - y_ref)))
        x = plant.flow(x, u, dt, substeps)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > STATE_NORM_CAP:
            diverged, diverged_time = True, (k + 1) * dt
            break
    return _assemble_report(
        t_rows, y_rows, yref_rows, u_rows, err_rows, dt, diverged, diverged_time
    )
