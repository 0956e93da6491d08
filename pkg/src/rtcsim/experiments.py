"""Experiment configuration and the controller x trace x profile x seed evaluation matrix."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .codec import CodecProfile, load_profile, profile_family
from .controllers import FixedRate, GccLike, OracleController, SafeguardConfig, SafeguardedController
from .metrics import QOE_COLUMNS, session_qoe, summarize
from .rl.agent import RLController
from .rl.ppo import PPOConfig
from .rl.train import TrainConfig, load_policy
from .simcore import run_session
from .traces import NetworkTrace, TraceGenParams, generate_traces, load_trace_dir

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "RTCSIM_OUTPUT_ROOT"
CONTROLLER_KINDS = ("oracle", "gcc", "fixed", "rl")


class ConfigError(ValueError):
    """A problem with an experiment configuration the user can fix."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_output(path: str | os.PathLike) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p


# -- sources ---------------------------------------------------------------

@dataclass
class TraceSource:
    directory: Path | None = None
    params: TraceGenParams = field(default_factory=TraceGenParams)
    count: int = 0
    seed: int = 0

    def load(self) -> list[NetworkTrace]:
        if self.directory is not None:
            traces = load_trace_dir(self.directory)
            if not traces:
                raise ConfigError(f"no traces found in {self.directory}")
            return traces
        return generate_traces(self.params, self.count, self.seed)


@dataclass
class ProfileSource:
    files: list[Path] = field(default_factory=list)
    count: int = 2
    mode: str = "nvc"

    def load(self) -> list[CodecProfile]:
        if self.files:
            return [load_profile(f) for f in self.files]
        return profile_family(self.count, self.mode)


@dataclass
class ControllerSpec:
    name: str
    kind: str
    rate_kbps: float = 1000.0
    checkpoint: Path | None = None
    safeguard: SafeguardConfig | None = None


@dataclass
class ExperimentConfig:
    name: str
    traces: TraceSource | None
    profiles: ProfileSource
    controllers: list[ControllerSpec]
    seeds: list[int]
    duration_s: float | None = None
    output: str = "results"
    workers: int = 1
    write_logs: bool = True
    train: TrainConfig | None = None
    train_traces: TraceSource | None = None
    validation: TraceSource | None = None


# -- parsing ---------------------------------------------------------------

def _range(v, name):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{name} must be a [lo, hi] pair")
    return (v[0], v[1])


def _trace_source(d: dict, base: Path, where: str) -> TraceSource:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    if "dir" in d:
        path = base / d["dir"]
        if not path.is_dir():
            raise ConfigError(f"{where}.dir: {path} does not exist")
        return TraceSource(directory=path)
    gen = d.get("generate")
    if not isinstance(gen, dict):
        raise ConfigError(f"{where} needs either 'dir' or 'generate'")
    kw = {}
    for key in ("bandwidth_mbps", "min_rtt_ms", "change_interval_s", "loss", "queue_packets"):
        if key in gen:
            kw[key] = _range(gen[key], f"{where}.generate.{key}")
    if "duration_s" in gen:
        kw["duration_s"] = float(gen["duration_s"])
    params = TraceGenParams(**kw)
    try:
        params.validate()
    except ValueError as e:
        raise ConfigError(f"{where}.generate: {e}") from None
    count = int(gen.get("count", 1))
    if count < 1:
        raise ConfigError(f"{where}.generate.count must be positive")
    return TraceSource(params=params, count=count, seed=int(gen.get("seed", 0)))


def _safeguard(d) -> SafeguardConfig | None:
    if d is None or d is False:
        return None
    if d is True:
        return SafeguardConfig()
    try:
        return SafeguardConfig(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"safeguard: {e}") from None


def parse_config(data: dict, base: Path = Path(".")) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    traces = _trace_source(data["traces"], base, "traces") if "traces" in data else None

    pd = data.get("profiles", {}) or {}
    files = [base / f for f in pd.get("files", [])]
    for f in files:
        if not f.is_file():
            raise ConfigError(f"profile file {f} does not exist")
    profiles = ProfileSource(files, int(pd.get("count", 2)), pd.get("mode", "nvc"))

    controllers = []
    for i, c in enumerate(data.get("controllers", []) or []):
        kind = c.get("kind")
        if kind not in CONTROLLER_KINDS:
            raise ConfigError(f"controllers[{i}]: kind must be one of {CONTROLLER_KINDS}")
        ckpt = base / c["checkpoint"] if c.get("checkpoint") else None
        if kind == "rl" and ckpt is None:
            raise ConfigError(f"controllers[{i}]: rl controller needs a checkpoint")
        controllers.append(ControllerSpec(c.get("name", kind), kind, float(c.get("rate_kbps", 1000.0)),
                                          ckpt, _safeguard(c.get("safeguard"))))
    names = [c.name for c in controllers]
    if len(set(names)) != len(names):
        raise ConfigError("controller names must be unique")

    seeds = data.get("seeds", [0])
    if not seeds:
        raise ConfigError("seeds must be non-empty")

    train = None
    train_traces = validation = None
    if "train" in data:
        t = data["train"] or {}
        ppo = PPOConfig(**(t.get("ppo") or {}))
        kind = t.get("reward", "nvc")
        if kind not in ("nvc", "network"):
            raise ConfigError("train.reward must be 'nvc' or 'network'")
        train = TrainConfig(
            reward_kind=kind, safeguard=_safeguard(t.get("safeguard")),
            total_steps=int(t.get("total_steps", 50_000)), seed=int(t.get("seed", 0)),
            eval_every=int(t.get("eval_every", 2_500)), episode_s=float(t.get("episode_s", 30.0)),
            ppo=ppo, validate_with_safeguard=bool(t.get("validate_with_safeguard", False)),
        )
        if train.total_steps < 0:
            raise ConfigError("train.total_steps must be non-negative")
        if t.get("traces"):
            train_traces = _trace_source(t["traces"], base, "train.traces")
        if t.get("validation"):
            validation = _trace_source(t["validation"], base, "train.validation")

    duration = data.get("duration_s")
    return ExperimentConfig(
        name=str(data.get("name", "experiment")), traces=traces, profiles=profiles,
        controllers=controllers, seeds=[int(s) for s in seeds],
        duration_s=float(duration) if duration is not None else None,
        output=str(data.get("output", "results")), workers=int(data.get("workers", 1)),
        write_logs=bool(data.get("write_logs", True)), train=train,
        train_traces=train_traces, validation=validation,
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return parse_config(data or {}, path.parent)


# -- evaluation ------------------------------------------------------------

def build_controller(spec: ControllerSpec, policy=None):
    if spec.kind == "oracle":
        return OracleController()
    if spec.kind == "gcc":
        return GccLike()
    if spec.kind == "fixed":
        return FixedRate(spec.rate_kbps)
    agent = RLController(policy, name=spec.name)
    if spec.safeguard is not None:
        return SafeguardedController(agent, spec.safeguard, name=spec.name)
    return agent


def check_checkpoints(specs: list[ControllerSpec]) -> tuple[list[ControllerSpec], list[str]]:
    ok, missing = [], []
    for s in specs:
        if s.kind == "rl" and (s.checkpoint is None or not s.checkpoint.is_file()):
            missing.append(f"{s.name}: {s.checkpoint}")
        else:
            ok.append(s)
    return ok, missing


@dataclass(frozen=True)
class Job:
    spec: ControllerSpec
    trace: NetworkTrace
    profile: CodecProfile
    seed: int
    duration_s: float | None
    log_dir: str | None


def _run_job(job: Job) -> dict[str, Any]:
    policy = load_policy(job.spec.checkpoint) if job.spec.kind == "rl" else None
    ctrl = build_controller(job.spec, policy)
    slog = run_session(job.trace, ctrl, job.profile, duration_s=job.duration_s, seed=job.seed)
    if job.log_dir is not None:
        slog.write(job.log_dir, f"{job.spec.name}__{job.trace.label}__{job.profile.name}__s{job.seed}")
    row = {"controller": job.spec.name, "trace": job.trace.label, "profile": job.profile.name,
           "seed": job.seed}
    row.update(session_qoe(slog).as_row())
    return row


def make_jobs(specs, traces, profiles, seeds, duration_s=None, log_dir=None) -> list[Job]:
    return [Job(s, t, p, seed, duration_s, None if log_dir is None else str(log_dir))
            for s in specs for t in traces for p in profiles for seed in seeds]


def run_matrix(jobs: list[Job], workers: int = 1) -> list[dict]:
    """Run every job; rows come back in job order whatever the worker count."""
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def cdf_points(values, n: int = 21) -> list[tuple[float, float]]:
    vals = sorted(v for v in values if v == v)
    if not vals:
        return []
    out = []
    for k in range(n):
        q = k / (n - 1)
        out.append((vals[min(int(q * (len(vals) - 1) + 0.5), len(vals) - 1)], q))
    return out


def aggregate(rows: list[dict]) -> dict:
    means = summarize(rows)
    cdfs = {}
    for name in means:
        rs = [r for r in rows if r["controller"] == name]
        cdfs[name] = {c: cdf_points([r[c] for r in rs]) for c in ("mean_quality_db", "p98_frame_delay_ms")}
    return {"sessions": len(rows), "means": means, "cdf": cdfs, "columns": list(QOE_COLUMNS)}
