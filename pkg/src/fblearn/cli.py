"""Config-driven experiment runner.

Subcommands: ``train`` (policy optimization with curve/checkpoint
outputs), ``eval-tracking`` (exact vs nominal vs learned controllers on
one tracking task), ``verify-convexity`` (Gram-matrix certificate and
closed-form optimum for linear parameterizations), ``plot`` (SVG
rendering of the CSV outputs).

Config files are flat INI: section headers with ``key = value`` pairs.
Every randomized command takes its seed from ``--seed``, then the
``[experiment]`` section, then a hash of the config text (printed).
Outputs are bit-reproducible for a fixed seed and worker count; the one
exception is the wall-clock column of learning curves.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fbl, objective, rl, tracking
from .dynamics import (
    DoublePendulumParams,
    QuadrotorParams,
    double_pendulum,
    hover_state,
    normal_form_system,
    quadrotor_14d,
    scale_parameters,
)
from .numerics import Rng
from .policy import (
    ControllerParams,
    LinearBasisParameterization,
    NominalController,
    learned_control,
    load_checkpoint,
    make_mlp,
    make_rbf,
    save_checkpoint,
)

CURVE_CSV_SCHEMA = "learning_curve.v1"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration

_SECTIONS = {
    "experiment": {"system", "scaling", "seed", "name"},
    "system": {
        "m1", "m2", "l1", "l2", "gravity",
        "mass", "inertia_xx", "inertia_yy", "inertia_zz",
    },
    "policy": {"kind", "rbf_count", "rbf_width", "rbf_duplicate_center", "mlp_widths"},
    "train": {
        "algorithm", "epochs", "rollouts_per_epoch", "horizon", "dt",
        "learning_rate", "lr_final", "sigma_w", "substeps", "ppo_clip",
        "ppo_inner_epochs", "ppo_minibatch", "param_bound", "checkpoint_every",
    },
    "tracking": {
        "task", "duration", "dt", "amplitude", "frequency", "phase",
        "initial_offset", "x_amplitude", "y_amplitude", "z_offset",
        "yaw_amplitude", "yaw_frequency", "radius", "climb_rate", "period",
    },
    "convexity": {"n_samples"},
}

_TRACKING_DEFAULTS = {
    "task": "sinusoid",
    "duration": 10.0,
    "dt": 5e-4,
    "amplitude": 0.5,
    "frequency": 0.5,
    "phase": 0.0,
    "initial_offset": 0.3,
    "x_amplitude": 1.0,
    "y_amplitude": 0.5,
    "z_offset": 0.0,
    "yaw_amplitude": 0.3,
    "yaw_frequency": 0.1,
    "radius": 1.0,
    "climb_rate": 0.25,
    "period": 5.0,
}


@dataclass
class ExperimentConfig:
    system: str = "double_pendulum"
    name: str = ""
    scaling: float = 0.5
    seed: int | None = None
    system_overrides: dict = field(default_factory=dict)
    policy_kind: str = "rbf"
    rbf_count: int = 150
    rbf_width: float = 0.0
    rbf_duplicate_center: bool = False
    mlp_widths: tuple = (64, 64)
    train: dict = field(default_factory=dict)
    tracking: dict = field(default_factory=lambda: dict(_TRACKING_DEFAULTS))
    convexity_samples: int = 100_000
    source_text: str = ""


def _parse_bool(raw: str, where: str) -> bool:
    val = raw.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"field {where}: expected a boolean, got {raw!r}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    cfg = ExperimentConfig(source_text=text)
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown field {section}.{key}")

    def get(section, key, cast, default=None):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"field {section}.{key}: {exc}") from exc
        return default

    cfg.system = get("experiment", "system", str, cfg.system)
    cfg.name = get("experiment", "name", str, cfg.name)
    cfg.scaling = get("experiment", "scaling", float, cfg.scaling)
    cfg.seed = get("experiment", "seed", int, None)
    if parser.has_section("system"):
        cfg.system_overrides = {k: float(v) for k, v in parser["system"].items()}
    cfg.policy_kind = get("policy", "kind", str, cfg.policy_kind)
    cfg.rbf_count = get("policy", "rbf_count", int, cfg.rbf_count)
    cfg.rbf_width = get("policy", "rbf_width", float, cfg.rbf_width)
    cfg.rbf_duplicate_center = get(
        "policy",
        "rbf_duplicate_center",
        lambda raw: _parse_bool(raw, "policy.rbf_duplicate_center"),
        cfg.rbf_duplicate_center,
    )
    raw_widths = get("policy", "mlp_widths", str, None)
    if raw_widths is not None:
        cfg.mlp_widths = tuple(int(w) for w in raw_widths.replace(",", " ").split())

    train: dict = {}
    for key, cast in (
        ("algorithm", str),
        ("epochs", int),
        ("rollouts_per_epoch", int),
        ("horizon", int),
        ("dt", float),
        ("learning_rate", float),
        ("lr_final", float),
        ("sigma_w", float),
        ("substeps", int),
        ("ppo_clip", float),
        ("ppo_inner_epochs", int),
        ("ppo_minibatch", int),
        ("param_bound", float),
        ("checkpoint_every", int),
    ):
        val = get("train", key, cast, None)
        if val is not None:
            train[key] = val
    cfg.train = train

    for key in _SECTIONS["tracking"]:
        cast = str if key == "task" else float
        val = get("tracking", key, cast, None)
        if val is not None:
            cfg.tracking[key] = val
    cfg.convexity_samples = get("convexity", "n_samples", int, cfg.convexity_samples)

    if cfg.system not in ("double_pendulum", "quadrotor_14d", "scalar_toy"):
        raise ConfigError(f"field experiment.system: unknown system {cfg.system!r}")
    if cfg.policy_kind not in ("rbf", "mlp", "constant"):
        raise ConfigError(f"field policy.kind: unknown kind {cfg.policy_kind!r}")
    return cfg


def derive_seed(cfg: ExperimentConfig, override: int | None) -> tuple[int, str]:
    if override is not None:
        return int(override), "command line"
    if cfg.seed is not None:
        return int(cfg.seed), "config"
    digest = hashlib.sha256(cfg.source_text.encode()).digest()
    return int.from_bytes(digest[:4], "big"), "config hash"


def worker_count(args) -> int:
    env = os.environ.get("FBL_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, getattr(args, "workers", 1) or 1)


# ---------------------------------------------------------------------------
# Builders

def build_plant(cfg: ExperimentConfig):
    if cfg.system == "double_pendulum":
        params = DoublePendulumParams(**cfg.system_overrides)
        return double_pendulum(params)
    if cfg.system == "quadrotor_14d":
        params = QuadrotorParams(**cfg.system_overrides)
        return quadrotor_14d(params)
    if cfg.system == "scalar_toy":
        # First-order plant with constant drift: ydot = u + 1.
        return normal_form_system(
            "scalar_toy",
            (1,),
            drift=lambda x: np.ones(x.shape[:-1] + (1,)),
            gain=lambda x: np.ones(x.shape[:-1] + (1, 1)),
            domain_low=[-1.0],
            domain_high=[1.0],
        )
    raise ConfigError(f"unknown system {cfg.system!r}")


def build_nominal(cfg: ExperimentConfig, plant) -> NominalController:
    if cfg.scaling <= 0 or cfg.system == "scalar_toy":
        return NominalController.zero(plant.q)
    if cfg.system == "double_pendulum":
        model = double_pendulum(scale_parameters(plant.params, cfg.scaling))
    elif cfg.system == "quadrotor_14d":
        model = quadrotor_14d(scale_parameters(plant.params, cfg.scaling))
    else:
        raise ConfigError(f"system {cfg.system!r} has no nominal model")
    return NominalController.from_model(model)


def build_param(cfg: ExperimentConfig, plant, seed: int):
    if cfg.policy_kind == "rbf":
        rng = Rng((seed, 1))
        width = cfg.rbf_width if cfg.rbf_width > 0 else None
        return make_rbf(
            cfg.rbf_count,
            plant,
            width=width,
            rng=rng,
            duplicate_first=cfg.rbf_duplicate_center,
        )
    if cfg.policy_kind == "mlp":
        return make_mlp(plant, cfg.mlp_widths)
    if cfg.policy_kind == "constant":
        return LinearBasisParameterization(
            lambda z: np.ones(z.shape[:-1] + (1,)), 1, plant.q, plant.angle_indices
        )
    raise ConfigError(f"unknown policy kind {cfg.policy_kind!r}")


def build_train_config(cfg: ExperimentConfig, seed: int) -> rl.TrainConfig:
    return rl.TrainConfig(seed=seed, **cfg.train)


def resolved_config_text(cfg: ExperimentConfig, seed: int, workers: int) -> str:
    """Explicit-value snapshot that reproduces the run."""
    out = configparser.ConfigParser(interpolation=None)
    out["experiment"] = {
        "system": cfg.system,
        "name": cfg.name,
        "scaling": repr(cfg.scaling),
        "seed": str(seed),
        "workers": str(workers),
    }
    if cfg.system_overrides:
        out["system"] = {k: repr(v) for k, v in sorted(cfg.system_overrides.items())}
    policy = {"kind": cfg.policy_kind}
    if cfg.policy_kind == "rbf":
        policy.update(
            rbf_count=str(cfg.rbf_count),
            rbf_width=repr(cfg.rbf_width),
            rbf_duplicate_center=str(cfg.rbf_duplicate_center).lower(),
        )
    elif cfg.policy_kind == "mlp":
        policy["mlp_widths"] = ",".join(str(w) for w in cfg.mlp_widths)
    out["policy"] = policy
    tc = build_train_config(cfg, seed)
    out["train"] = {
        "algorithm": tc.algorithm,
        "epochs": str(tc.epochs),
        "rollouts_per_epoch": str(tc.rollouts_per_epoch),
        "horizon": str(tc.horizon),
        "dt": repr(tc.dt),
        "learning_rate": repr(tc.learning_rate),
        "lr_final": repr(tc.lr_final),
        "sigma_w": repr(tc.sigma_w),
        "substeps": str(tc.substeps or rl.default_substeps(tc.dt)),
        "ppo_clip": repr(tc.ppo_clip),
        "ppo_inner_epochs": str(tc.ppo_inner_epochs),
        "ppo_minibatch": str(tc.ppo_minibatch),
        "param_bound": repr(tc.param_bound),
        "checkpoint_every": str(tc.checkpoint_every),
    }
    out["tracking"] = {k: str(v) for k, v in sorted(cfg.tracking.items())}
    out["convexity"] = {"n_samples": str(cfg.convexity_samples)}
    import io

    buf = io.StringIO()
    out.write(buf)
    return buf.getvalue()


def _experiment_meta(cfg: ExperimentConfig, seed: int) -> dict:
    return {
        "system": cfg.system,
        "scaling": cfg.scaling,
        "system_overrides": cfg.system_overrides,
        "seed": seed,
        "tracking": cfg.tracking,
    }


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed, origin = derive_seed(cfg, args.seed)
    workers = worker_count(args)
    print(f"seed: {seed} ({origin}); workers: {workers}")
    out_dir = Path(args.out or f"runs/{Path(args.config).stem}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_resolved.cfg").write_text(resolved_config_text(cfg, seed, workers))

    plant = build_plant(cfg)
    nominal = build_nominal(cfg, plant)
    param = build_param(cfg, plant, seed)
    tc = build_train_config(cfg, seed)
    ref = fbl.reference_model(plant.gamma, tc.dt)
    meta = _experiment_meta(cfg, seed)

    def env_factory(rng):
        return rl.SampledDataEnv(
            plant=plant,
            nominal=nominal,
            param=param,
            ref=ref,
            dt=tc.dt,
            horizon=tc.horizon,
            sigma_w=tc.sigma_w,
            rng=rng,
            substeps=tc.substeps,
        )

    curve_path = out_dir / "learning_curve.csv"
    curve_file = open(curve_path, "w")
    curve_file.write(f"# schema: {CURVE_CSV_SCHEMA}\n")
    curve_file.write("epoch,mean_reward,std_reward,wall_time_s\n")

    def on_epoch(epoch, row, theta):
        curve_file.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]:.3f}\n")
        curve_file.flush()
        if tc.checkpoint_every > 0 and (epoch + 1) % tc.checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_{epoch + 1:06d}.json", param, theta, meta)

    try:
        theta, _ = rl.train(env_factory, tc, on_epoch=on_epoch)
    finally:
        curve_file.close()
    save_checkpoint(out_dir / "checkpoint.json", param, theta, meta)
    print(f"wrote {curve_path} and {out_dir / 'checkpoint.json'}")
    return 0


# ---------------------------------------------------------------------------
# eval-tracking

def _tracking_task(plant, opts: dict):
    kind = opts.get("task", "sinusoid")
    traj = tracking.reference(kind, opts, plant.gamma, opts.get("dt", 0.005))
    if plant.name == "double_pendulum":
        xi0 = traj.xi(0.0)
        off = float(opts.get("initial_offset", 0.0))
        x0 = np.array([xi0[0] + off, xi0[2] + off, xi0[1], xi0[3]])
    elif plant.name == "quadrotor_14d":
        y0 = traj.outputs(0.0)
        x0 = hover_state(plant.params, position=y0[:3], yaw=y0[3])
    else:
        x0 = plant.linear_state(plant.domain.center())
    return traj, x0


def cmd_eval_tracking(args) -> int:
    param, theta, meta = load_checkpoint(args.checkpoint)
    cfg = load_config(args.config) if args.config else None
    if cfg is not None and cfg.system != meta.get("system"):
        raise ConfigError(
            f"checkpoint system {meta.get('system')!r} does not match "
            f"config system {cfg.system!r}"
        )
    if cfg is None:
        cfg = ExperimentConfig(
            system=meta["system"],
            scaling=meta.get("scaling", 0.5),
            system_overrides=meta.get("system_overrides", {}),
        )
        cfg.tracking.update(meta.get("tracking", {}))
    if args.task:
        cfg.tracking["task"] = args.task

    plant = build_plant(cfg)
    nominal = build_nominal(cfg, plant)
    if param.q != plant.q:
        raise ConfigError(
            f"checkpoint parameterization (q={param.q}) does not match "
            f"system {plant.name!r} (q={plant.q})"
        )
    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)

    opts = dict(cfg.tracking)
    traj, x0 = _tracking_task(plant, opts)
    dt = float(opts.get("dt", 0.005))
    duration = float(opts.get("duration", 10.0))
    K = tracking.tracking_gain(fbl.reference_model(plant.gamma, dt))

    controllers = {
        "exact": lambda x, v: fbl.exact_linearizing_control(plant, x, v),
        "nominal": nominal.control,
        "learned": lambda x, v: learned_control(nominal, param, theta, x, v),
    }
    reports = {}
    for name, controller in controllers.items():
        report = tracking.track(plant, controller, traj, K, x0, duration, dt)
        report.to_csv(out_dir / f"tracking_{name}.csv")
        reports[name] = report

    exact_l2 = reports["exact"].total_l2
    comparison = {
        "task": traj.kind,
        "total_l2": {k: r.total_l2 for k, r in reports.items()},
        "ratios": {
            "learned_vs_exact": (reports["learned"].total_l2 / exact_l2) if exact_l2 > 0 else None,
            "nominal_vs_exact": (reports["nominal"].total_l2 / exact_l2) if exact_l2 > 0 else None,
        },
        "diverged": {k: bool(r.diverged) for k, r in reports.items()},
    }
    (out_dir / "comparison.json").write_text(json.dumps(comparison, indent=1, sort_keys=True))
    print(json.dumps(comparison["total_l2"], sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# verify-convexity

def cmd_verify_convexity(args) -> int:
    cfg = load_config(args.config)
    seed, origin = derive_seed(cfg, args.seed)
    print(f"seed: {seed} ({origin})")
    plant = build_plant(cfg)
    nominal = build_nominal(cfg, plant)
    param = build_param(cfg, plant, seed)
    if not isinstance(param, LinearBasisParameterization):
        print("error: certification requires linear parameterization", file=sys.stderr)
        return 2
    out_dir = Path(args.out or "convexity")
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = Rng((seed, 2))
    samples = objective.draw_loss_samples(plant, nominal, param, cfg.convexity_samples, rng)
    qf = objective.quadratic_form_from_samples(samples)
    qf.save(out_dir / "quadratic_form.npz")
    eigs = np.linalg.eigvalsh(qf.W)
    min_eig, verdict = objective.certify_strong_convexity(qf)
    max_eig = float(eigs[-1])
    l_zero = samples.estimate(param.zero_params())[0]
    l_opt = None
    if verdict == "strong":
        theta_star = objective.closed_form_optimum(qf)
        l_opt = samples.estimate(param.zero_params().replace_flat(theta_star))[0]
        np.save(out_dir / "theta_star.npy", theta_star)
    report = {
        "min_eig": min_eig,
        "max_eig": max_eig,
        "verdict": verdict,
        "L_at_zero": l_zero,
        "L_at_opt": l_opt,
        "n_samples": int(cfg.convexity_samples),
        "seed": int(seed),
    }
    (out_dir / "convexity_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"min eig: {min_eig:.6e}  max eig: {max_eig:.6e}  verdict: {verdict}")
    print(f"L(0) = {l_zero:.6e}" + (f"  L(theta*) = {l_opt:.6e}" if l_opt is not None else ""))
    return 0


# ---------------------------------------------------------------------------
# plot

def _read_csv(path, schema: str):
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# schema: "):
        raise ConfigError(f"{path}: missing schema header row")
    found = lines[0][len("# schema: "):].strip()
    if found != schema:
        raise ConfigError(f"{path}: schema {found!r} not supported (expected {schema!r})")
    if len(lines) < 2:
        raise ConfigError(f"{path}: missing column header")
    header = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:] if line.strip()]
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    data = np.array([[float(v) for v in row] for row in rows])
    return header, data


def _column(header, data, name, path):
    if name not in header:
        raise ConfigError(f"{path}: missing column {name!r}")
    return data[:, header.index(name)]


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "fblearn"
    import matplotlib.pyplot as plt

    out = Path(args.out)
    if args.kind == "curve":
        fig, ax = plt.subplots(figsize=(7, 4))
        for path in args.inputs:
            header, data = _read_csv(path, CURVE_CSV_SCHEMA)
            epoch = _column(header, data, "epoch", path)
            mean = _column(header, data, "mean_reward", path)
            std = _column(header, data, "std_reward", path)
            ax.plot(epoch, mean, label=Path(path).parent.name or Path(path).stem)
            ax.fill_between(epoch, mean - std, mean + std, alpha=0.25)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean reward")
        ax.legend(loc="lower right")
    elif args.kind == "tracking":
        first = _read_csv(args.inputs[0], tracking.TRACKING_CSV_SCHEMA)
        q = sum(1 for name in first[0] if name.startswith("yref"))
        fig, axes = plt.subplots(q, 1, figsize=(7, 2.2 * q), sharex=True, squeeze=False)
        for path in args.inputs:
            header, data = _read_csv(path, tracking.TRACKING_CSV_SCHEMA)
            t = _column(header, data, "t", path)
            for j in range(q):
                axes[j, 0].plot(t, _column(header, data, f"y{j + 1}", path),
                                label=Path(path).stem)
        t = _column(*first, "t", args.inputs[0])
        for j in range(q):
            axes[j, 0].plot(t, _column(*first, f"yref{j + 1}", args.inputs[0]),
                            "k--", label="reference")
            axes[j, 0].set_ylabel(f"y{j + 1}")
            if j == 0:
                axes[j, 0].legend(loc="upper right", fontsize=8)
        axes[-1, 0].set_xlabel("t [s]")
    elif args.kind == "path3d":
        fig = plt.figure(figsize=(6, 6))
        ax = fig.add_subplot(projection="3d")
        for path in args.inputs:
            header, data = _read_csv(path, tracking.TRACKING_CSV_SCHEMA)
            ax.plot(
                _column(header, data, "y1", path),
                _column(header, data, "y2", path),
                _column(header, data, "y3", path),
                label=Path(path).stem,
            )
        first = _read_csv(args.inputs[0], tracking.TRACKING_CSV_SCHEMA)
        ax.plot(
            _column(*first, "yref1", args.inputs[0]),
            _column(*first, "yref2", args.inputs[0]),
            _column(*first, "yref3", args.inputs[0]),
            "k--",
            label="reference",
        )
        ax.legend()
    else:
        raise ConfigError(f"unknown plot kind {args.kind!r}")
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fblearn",
        description="Learn feedback-linearizing controllers by policy optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.add_argument("--workers", type=int, default=1)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval-tracking", help="compare controllers on a tracking task")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--task", default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval_tracking)

    p_ver = sub.add_parser("verify-convexity", help="certify the learning problem")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--seed", type=int, default=None)
    p_ver.add_argument("--out", default=None)
    p_ver.set_defaults(func=cmd_verify_convexity)

    p_plot = sub.add_parser("plot", help="render CSV outputs to SVG")
    p_plot.add_argument("inputs", nargs="+")
    p_plot.add_argument("--kind", choices=("curve", "tracking", "path3d"), required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
