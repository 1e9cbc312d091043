"""Sampled-data environment and model-free policy-gradient trainers.

Episodes hold the control constant over each sampling interval and score
every step against the zero-order-hold reference model:

    lbar_k = || Bbar v_k - (xi_{k+1} - Abar xi_k) ||^2

where ``xi`` is the output-derivative chain. Nothing in the rollout or
the loss inverts any learned quantity, so rollouts are well defined for
every parameter vector. Training maximizes the per-step reward
``-lbar_k`` with REINFORCE (average-reward baseline) or PPO (clipped
surrogate over standardized advantages).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics.base import ControlAffineSystem
from .fbl import ReferenceModel
from .numerics import Rng
from .objective import VirtualInputDistribution
from .policy import ControllerParams, NominalController, project_params

__all__ = [
    "SampledDataEnv",
    "RolloutBatch",
    "TrainConfig",
    "DegeneratePolicyError",
    "default_substeps",
    "env_rollout",
    "collect_rollouts",
    "reinforce_gradient",
    "reinforce_update",
    "ppo_update",
    "Adam",
    "train",
]

STATE_NORM_CAP = 1e3
INNER_STEP = 1e-3


class DegeneratePolicyError(ValueError):
    """Raised when a score-function update is requested with zero noise."""


def default_substeps(dt: float) -> int:
    """Integrator substeps so the inner step is about 1 ms."""
    return max(1, round(dt / INNER_STEP))


@dataclass
class SampledDataEnv:
    """Zero-order-hold rollout environment for one plant/controller pair."""

    plant: ControlAffineSystem
    nominal: NominalController
    param: object
    ref: ReferenceModel
    dt: float
    horizon: int
    sigma_w: float
    rng: Rng
    substeps: int = 0

    def __post_init__(self):
        if abs(self.dt - self.ref.dt) > 1e-12:
            raise ValueError("env dt must match the reference model dt")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.substeps < 1:
            self.substeps = default_substeps(self.dt)
        self._ball = VirtualInputDistribution(self.plant.q)


@dataclass(frozen=True)
class RolloutBatch:
    """Per-step records from a batch of lockstep episodes.

    Arrays are (episodes, steps, ...); ``valid`` masks steps after an
    episode was truncated by integration divergence. ``u`` is the
    applied control (policy mean plus exploration noise ``w``).
    """

    x: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    u: np.ndarray
    w: np.ndarray
    lbar: np.ndarray
    valid: np.ndarray
    truncated: np.ndarray
    sigma_w: float
    ref: ReferenceModel
    nominal: NominalController
    param: object = field(repr=False)
    seed_info: str = ""

    @property
    def n_episodes(self) -> int:
        return self.x.shape[0]

    @property
    def horizon(self) -> int:
        return self.lbar.shape[1]

    def rewards(self) -> np.ndarray:
        """Per-step rewards over valid steps, flattened."""
        return -self.lbar[self.valid]

    def flat_steps(self):
        """(x, v, u, w) stacked over valid steps."""
        m = self.valid
        return self.x[:, :-1][m], self.v[m], self.u[m], self.w[m]

    def recompute_lbar(self) -> np.ndarray:
        """Losses recomputed from stored xi and the reference model."""
        pred = np.einsum("ij,ekj->eki", self.ref.A_bar, self.xi[:, :-1])
        resid = self.v @ self.ref.B_bar.T - (self.xi[:, 1:] - pred)
        return np.sum(resid**2, axis=2)


def collect_rollouts(env: SampledDataEnv, theta: ControllerParams, n_episodes: int) -> RolloutBatch:
    """Roll ``n_episodes`` lockstep episodes under the current parameters."""
    plant, ref = env.plant, env.ref
    e, n, q = int(n_episodes), env.horizon, plant.q
    x = np.zeros((e, n + 1, plant.n))
    xi = np.zeros((e, n + 1, ref.dim))
    v = np.zeros((e, n, q))
    u = np.zeros((e, n, q))
    w = np.zeros((e, n, q))
    lbar = np.zeros((e, n))
    valid = np.zeros((e, n), dtype=bool)
    active = np.ones(e, dtype=bool)

    x[:, 0] = plant.domain.sample(env.rng, e)
    xi[:, 0] = plant.linear_state(x[:, 0])
    for k in range(n):
        v[:, k] = env._ball.sample(env.rng, e)
        w[:, k] = env.rng.normal(env.sigma_w, (e, q)) if env.sigma_w > 0 else 0.0
        mean_u = env.nominal.control(x[:, k], v[:, k]) + env.param.correction(
            theta, x[:, k], v[:, k]
        )
        u[:, k] = mean_u + w[:, k]
        x_next = plant.flow(x[:, k], u[:, k], env.dt, env.substeps)
        ok = (
            np.all(np.isfinite(x_next), axis=1)
            & (np.linalg.norm(x_next, axis=1) < STATE_NORM_CAP)
            & active
        )
        x[:, k + 1] = np.where(ok[:, None], x_next, x[:, k])
        xi[:, k + 1] = plant.linear_state(x[:, k + 1])
        step = v[:, k] @ ref.B_bar.T - (xi[:, k + 1] - xi[:, k] @ ref.A_bar.T)
        lbar[:, k] = np.sum(step**2, axis=1)
        valid[:, k] = ok
        active = ok

    seq = env.rng._seq
    return RolloutBatch(
        x=x,
        xi=xi,
        v=v,
        u=u,
        w=w,
        lbar=lbar,
        valid=valid,
        truncated=~active,
        sigma_w=env.sigma_w,
        ref=ref,
        nominal=env.nominal,
        param=env.param,
        seed_info=f"philox:{seq.entropy}:{seq.spawn_key}",
    )


def env_rollout(env: SampledDataEnv, theta: ControllerParams) -> RolloutBatch:
    """One episode (a batch of size one)."""
    return collect_rollouts(env, theta, 1)


def _policy_mean(batch: RolloutBatch, theta: ControllerParams, x, v):
    return batch.nominal.control(x, v) + batch.param.correction(theta, x, v)


def reinforce_gradient(
    batch: RolloutBatch, theta: ControllerParams, standardize: bool = False
) -> np.ndarray:
    """Score-function estimate of the reward gradient.

    Per step: ``advantage * J' (u - u_mean) / sigma^2`` with the batch
    average reward as baseline, averaged over valid steps. With
    ``standardize`` the advantages are divided by their batch deviation.
    """
    if batch.sigma_w <= 0:
        raise DegeneratePolicyError("degenerate policy: sigma_w must be positive")
    x, v, u, _ = batch.flat_steps()
    r = batch.rewards()
    adv = r - r.mean()
    if standardize:
        adv = adv / (adv.std() + 1e-12)
    mean_u = _policy_mean(batch, theta, x, v)
    delta = (u - mean_u) / batch.sigma_w**2 * adv[:, None]
    return batch.param.grad_from_outputs(theta, x, v, delta)


def reinforce_update(batch: RolloutBatch, theta: ControllerParams, lr: float) -> ControllerParams:
    """Plain gradient-ascent step along the REINFORCE estimate."""
    grad = reinforce_gradient(batch, theta)
    return theta.replace_flat(theta.flat + lr * grad)


class Adam:
    """Adaptive-moment ascent on a flat parameter vector."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def ascend(self, theta: ControllerParams, grad: np.ndarray) -> ControllerParams:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return theta.replace_flat(theta.flat + self.lr * mhat / (np.sqrt(vhat) + self.eps))


def ppo_surrogate_gradient(
    batch_x,
    batch_v,
    batch_u,
    adv,
    logp_old,
    param,
    nominal,
    theta: ControllerParams,
    sigma_w: float,
    clip: float,
):
    """Gradient of the clipped surrogate over one minibatch.

    Per term ``min(ratio * adv, clip(ratio) * adv)``; where the clip is
    the active branch and saturated, the term contributes no gradient.
    """
    mean_u = nominal.control(batch_x, batch_v) + param.correction(theta, batch_x, batch_v)
    logp_new = -np.sum((batch_u - mean_u) ** 2, axis=1) / (2.0 * sigma_w**2)
    ratio = np.exp(logp_new - logp_old)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_term = ratio * adv
    take_unclipped = unclipped_term <= clipped * adv
    coef = np.where(take_unclipped, ratio * adv, 0.0)
    delta = coef[:, None] * (batch_u - mean_u) / sigma_w**2
    grad = param.grad_from_outputs(theta, batch_x, batch_v, delta)
    objective = float(np.mean(np.minimum(unclipped_term, clipped * adv)))
    return grad, objective


def ppo_update(
    batch: RolloutBatch,
    theta: ControllerParams,
    config: "TrainConfig",
    optimizer: Adam | None = None,
    rng: Rng | None = None,
) -> ControllerParams:
    """Clipped-surrogate ascent over the collected batch.

    Advantages are the standardized per-step rewards (no critic: the
    horizon is short and losses are dense). Runs ``ppo_inner_epochs``
    shuffled minibatch passes of adaptive-moment ascent.
    """
    if batch.sigma_w <= 0:
        raise DegeneratePolicyError("degenerate policy: sigma_w must be positive")
    x, v, u, _ = batch.flat_steps()
    r = batch.rewards()
    adv = (r - r.mean()) / (r.std() + 1e-12)
    mean_old = _policy_mean(batch, theta, x, v)
    logp_old = -np.sum((u - mean_old) ** 2, axis=1) / (2.0 * batch.sigma_w**2)

    if optimizer is None:
        optimizer = Adam(config.learning_rate)
    if rng is None:
        rng = Rng(config.seed).fork()
    s = x.shape[0]
    mb = min(config.ppo_minibatch, s)
    for _ in range(config.ppo_inner_epochs):
        order = rng.permutation(s)
        for lo in range(0, s, mb):
            idx = order[lo : lo + mb]
            grad, _ = ppo_surrogate_gradient(
                x[idx],
                v[idx],
                u[idx],
                adv[idx],
                logp_old[idx],
                batch.param,
                batch.nominal,
                theta,
                batch.sigma_w,
                config.ppo_clip,
            )
            theta = optimizer.ascend(theta, grad)
    return theta


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "reinforce"
    epochs: int = 500
    rollouts_per_epoch: int = 50
    horizon: int = 50
    dt: float = 0.005
    learning_rate: float = 1e-2
    sigma_w: float = 0.1
    substeps: int = 0
    ppo_clip: float = 0.2
    ppo_inner_epochs: int = 4
    ppo_minibatch: int = 256
    lr_final: float = 0.0
    seed: int = 0
    param_bound: float = 0.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.algorithm not in ("reinforce", "ppo"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        for name in ("epochs",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("rollouts_per_epoch", "horizon", "ppo_inner_epochs", "ppo_minibatch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dt <= 0 or self.learning_rate <= 0:
            raise ValueError("dt and learning_rate must be positive")
        if self.algorithm == "ppo" and not (0.0 < self.ppo_clip < 1.0):
            raise ValueError("ppo_clip must lie in (0, 1)")


def train(
    env_factory: Callable[[Rng], SampledDataEnv],
    config: TrainConfig,
    theta0: ControllerParams | None = None,
    on_epoch: Callable | None = None,
):
    """Epoch loop: collect rollouts, update parameters, log statistics.

    Returns the final parameters and the learning curve as a list of
    ``(epoch, mean_reward, std_reward, wall_time_s)`` rows. RNG streams
    are forked in a fixed order from the config seed, so a given config
    reproduces its curve exactly.
    """
    master = Rng(config.seed)
    env = env_factory(master.fork())
    shuffle_rng = master.fork()
    init_rng = master.fork()
    theta = theta0 if theta0 is not None else env.param.init_params(init_rng)

    optimizer = Adam(config.learning_rate)
    curve = []
    start = time.perf_counter()
    for epoch in range(config.epochs):
        if config.lr_final > 0 and config.epochs > 1:
            # Linear decay squeezes out the steady-state optimizer wander.
            frac = epoch / (config.epochs - 1)
            optimizer.lr = (1 - frac) * config.learning_rate + frac * config.lr_final
        batch = collect_rollouts(env, theta, config.rollouts_per_epoch)
        if config.algorithm == "reinforce":
            grad = reinforce_gradient(batch, theta)
            theta = optimizer.ascend(theta, grad)
        else:
            theta = ppo_update(batch, theta, config, optimizer=optimizer, rng=shuffle_rng)
        if config.param_bound > 0:
            theta = project_params(theta, -config.param_bound, config.param_bound)
        r = batch.rewards()
        row = (epoch, float(r.mean()), float(r.std()), time.perf_counter() - start)
        curve.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row, theta)
    return theta, curve
