"""Online PPO training over replayed traces, with periodic validation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..codec import CodecProfile, profile_from_dict
from ..controllers import SafeguardConfig, SafeguardedController
from ..simcore import run_session
from ..traces import NetworkTrace, TraceGenParams, generate_trace, trace_from_dict, trace_to_dict
from .agent import RLController
from .policy import INIT_LOG_STD, PolicyNetwork
from .ppo import Adam, PPOConfig, RewardScaler, Rollout, ppo_update
from .rewards import RewardConfig

log = logging.getLogger(__name__)

TRAIN_STATE_FORMAT = "rtcsim-train-state"
CURVE_COLUMNS = ("steps", "wall_seconds", "validation_reward", "mode_switches")
EPISODE_COLUMNS = ("episode", "steps", "trace", "profile", "mode_switches", "fallback_windows", "mean_reward")
ACTION_BINS = 40


@dataclass
class TrainConfig:
    reward_kind: str = "nvc"
    safeguard: SafeguardConfig | None = None
    total_steps: int = 50_000
    seed: int = 0
    eval_every: int = 2_500
    episode_s: float = 30.0
    ppo: PPOConfig = field(default_factory=PPOConfig)
    reward: RewardConfig | None = None
    init_log_std: float = INIT_LOG_STD
    # validation scores the bare policy unless this is set
    validate_with_safeguard: bool = False

    def reward_config(self) -> RewardConfig:
        return self.reward or RewardConfig(kind=self.reward_kind)


@dataclass
class CurvePoint:
    steps: int
    wall_seconds: float
    validation_reward: float
    mode_switches: int


@dataclass
class TrainResult:
    net: PolicyNetwork
    curve: list[CurvePoint]
    actions: list[float]
    switches: int
    fallback_windows: int
    env_steps: int
    rl_steps: int

    @property
    def increase_share(self) -> float:
        return float(np.mean(np.asarray(self.actions) > 0)) if self.actions else float("nan")


def make_controller(net: PolicyNetwork, safeguard: SafeguardConfig | None = None, name: str = "rl", **kw):
    agent = RLController(net, name=name, **kw)
    if safeguard is None:
        return agent, agent
    return SafeguardedController(agent, safeguard, name=name), agent


def evaluate_policy(net: PolicyNetwork, pairs: Sequence[tuple[NetworkTrace, CodecProfile]],
                    safeguard: SafeguardConfig | None = None, seed: int = 0) -> float:
    """Mean per-window frame-quality reward of the deterministic policy."""
    if not pairs:
        raise ValueError("no validation environments")
    scores = []
    for i, (trace, profile) in enumerate(pairs):
        ctrl, agent = make_controller(net, safeguard)
        run_session(trace, ctrl, profile, seed=seed + i)
        rewards = [r for _, r in agent.reward_trace]
        scores.append(float(np.mean(rewards)) if rewards else 0.0)
    return float(np.mean(scores))


def check_convergence(curve: Sequence, band: float = 0.10, horizon: int | None = None):
    """Index of the first evaluation after which later values stay within ``band``.

    Each point is compared with the next ``horizon`` points (all remaining
    when ``None``); a point needs at least one successor to qualify.  Accepts
    plain numbers or :class:`CurvePoint` items.  Returns ``None`` when no point
    qualifies.
    """
    if len(curve) == 0:
        raise ValueError("empty learning curve")
    vals = [c.validation_reward if isinstance(c, CurvePoint) else float(c) for c in curve]
    if len(vals) == 1:
        return None
    for i, v in enumerate(vals[:-1]):
        stop = len(vals) if horizon is None else min(len(vals), i + 1 + horizon)
        tol = band * abs(v)
        if all(abs(w - v) <= tol for w in vals[i + 1:stop]):
            return i
    return None


def convergence_step(curve: Sequence[CurvePoint], band: float = 0.10, horizon: int | None = None):
    i = check_convergence(curve, band, horizon)
    return None if i is None else curve[i].steps


class Trainer:
    """Stateful training loop; :func:`train` is the one-call wrapper."""

    def __init__(self, cfg: TrainConfig, profiles: Sequence[CodecProfile],
                 traces: Sequence[NetworkTrace] | None = None, trace_params: TraceGenParams | None = None,
                 validation: Sequence[tuple[NetworkTrace, CodecProfile]] = ()):
        if not profiles:
            raise ValueError("need at least one codec profile")
        if not traces and trace_params is None:
            trace_params = TraceGenParams(duration_s=cfg.episode_s)
        self.cfg = cfg
        self.profiles = list(profiles)
        self.traces = list(traces) if traces else None
        self.trace_params = trace_params
        self.validation = list(validation)
        self.rng = np.random.default_rng(cfg.seed)
        self.net = PolicyNetwork.init(self.rng, cfg.init_log_std)
        self.opt = Adam(cfg.ppo.lr)
        self.scaler = RewardScaler(cfg.ppo.gamma) if cfg.ppo.scale_rewards else None
        self.buffer = Rollout()
        self.steps = 0
        self.rl_steps = 0
        self.episodes = 0
        self.switches = 0
        self.fallback_windows = 0
        self.wall_offset = 0.0
        self.curve: list[CurvePoint] = []
        self.actions: list[float] = []
        self.action_hist = np.zeros(ACTION_BINS, dtype=np.int64)
        self.next_eval = 0
        self.last_update: dict = {}
        self.episode_log: list[tuple] = []
        self.on_eval = None

    def _validate(self, t0: float) -> None:
        if not self.validation:
            return
        sg = self.cfg.safeguard if self.cfg.validate_with_safeguard else None
        score = evaluate_policy(self.net, self.validation, sg)
        self.curve.append(CurvePoint(self.steps, self.wall_offset + time.perf_counter() - t0, score,
                                     self.switches))
        log.info("steps=%d validation=%.4f switches=%d", self.steps, score, self.switches)
        if self.on_eval is not None:
            self.on_eval(self)

    def _episode_env(self) -> tuple[NetworkTrace, CodecProfile, int]:
        ep_seed = int(self.rng.integers(2**31))
        if self.traces:
            trace = self.traces[int(self.rng.integers(len(self.traces)))]
        else:
            trace = generate_trace(self.trace_params, ep_seed, label=f"train-{self.episodes}")
        profile = self.profiles[int(self.rng.integers(len(self.profiles)))]
        return trace, profile, ep_seed

    def run(self, until_steps: int | None = None) -> TrainResult:
        cfg = self.cfg
        target = cfg.total_steps if until_steps is None else min(until_steps, cfg.total_steps)
        t0 = time.perf_counter()
        if self.steps == 0 and not self.curve and cfg.total_steps > 0:
            self._validate(t0)
            self.next_eval = cfg.eval_every
        while self.steps < target:
            trace, profile, ep_seed = self._episode_env()
            episode_actions: list[float] = []
            ctrl, agent = make_controller(
                self.net, cfg.safeguard, reward_cfg=cfg.reward_config(), rng=self.rng,
                buffer=self.buffer, stochastic=True, scaler=self.scaler, action_log=episode_actions)
            duration = min(cfg.episode_s, trace.duration_s)
            run_session(trace, ctrl, profile, duration_s=duration, seed=ep_seed)
            self.episodes += 1
            self.steps += agent.env_steps
            self.rl_steps += agent.rl_steps
            ep_switches = ep_fallback = 0
            if ctrl is not agent:
                ep_switches = sum(1 for e in ctrl.switch_events if e.to_mode.value == "FALLBACK")
                ep_fallback = ctrl.fallback_windows
                self.switches += ep_switches
                self.fallback_windows += ep_fallback
            mean_r = float(np.mean(agent.train_rewards)) if agent.train_rewards else 0.0
            self.episode_log.append((self.episodes, self.steps, trace.label, profile.name,
                                     ep_switches, ep_fallback, mean_r))
            self.actions.extend(episode_actions)
            if episode_actions:
                h, _ = np.histogram(episode_actions, bins=ACTION_BINS, range=(-1.0, 1.0))
                self.action_hist += h
            if len(self.buffer) >= cfg.ppo.rollout_steps:
                self.last_update = ppo_update(self.buffer, self.net, cfg.ppo, self.opt, self.rng)
                self.buffer.clear()
            if self.steps >= self.next_eval:
                self._validate(t0)
                while self.next_eval <= self.steps:
                    self.next_eval += cfg.eval_every
        self.wall_offset += time.perf_counter() - t0
        return self.result()

    def result(self) -> TrainResult:
        return TrainResult(self.net, list(self.curve), list(self.actions), self.switches,
                           self.fallback_windows, self.steps, self.rl_steps)

    # -- persistence
    def state_dict(self) -> dict:
        cfg = self.cfg
        return {
            "format": TRAIN_STATE_FORMAT,
            "version": 1,
            "config": {
                "reward_kind": cfg.reward_kind, "total_steps": cfg.total_steps, "seed": cfg.seed,
                "eval_every": cfg.eval_every, "episode_s": cfg.episode_s, "init_log_std": cfg.init_log_std,
                "validate_with_safeguard": cfg.validate_with_safeguard,
                "safeguard": asdict(cfg.safeguard) if cfg.safeguard else None,
                "ppo": asdict(cfg.ppo),
            },
            "policy": self.net.to_json(),
            "optimizer": self.opt.state_dict(),
            "scaler": self.scaler.state_dict() if self.scaler else None,
            "rng": self.rng.bit_generator.state,
            "steps": self.steps, "rl_steps": self.rl_steps, "episodes": self.episodes,
            "switches": self.switches, "fallback_windows": self.fallback_windows,
            "wall_seconds": self.wall_offset, "next_eval": self.next_eval,
            "curve": [asdict(c) for c in self.curve],
            "action_hist": self.action_hist.tolist(),
            "episode_log": [list(e) for e in self.episode_log],
            "buffer_len": len(self.buffer),
            "profiles": [p.to_dict() for p in self.profiles],
            "traces": [trace_to_dict(t) for t in self.traces] if self.traces else None,
            "trace_params": asdict(self.trace_params) if self.trace_params else None,
            "validation": [{"trace": trace_to_dict(t), "profile": p.to_dict()} for t, p in self.validation],
        }

    def save(self, path) -> None:
        # pending rollout data is dropped at a checkpoint boundary; resumed
        # training simply collects a fresh on-policy batch
        Path(path).write_text(json.dumps(self.state_dict()))

    def load_state(self, d: dict) -> None:
        if d.get("format") != TRAIN_STATE_FORMAT:
            raise ValueError("not a training checkpoint")
        self.net = PolicyNetwork.from_json(d["policy"])
        self.opt.load_state_dict(d["optimizer"])
        if self.scaler and d.get("scaler"):
            self.scaler.load_state_dict(d["scaler"])
        self.rng.bit_generator.state = d["rng"]
        for k in ("steps", "rl_steps", "episodes", "switches", "fallback_windows", "next_eval"):
            setattr(self, k, d[k])
        self.wall_offset = d["wall_seconds"]
        self.curve = [CurvePoint(**c) for c in d["curve"]]
        self.action_hist = np.asarray(d["action_hist"], dtype=np.int64)
        self.episode_log = [tuple(e) for e in d.get("episode_log", [])]
        self.buffer.clear()


def trainer_from_state(d: dict) -> Trainer:
    """Rebuild a trainer, environments included, from a saved checkpoint."""
    if d.get("format") != TRAIN_STATE_FORMAT:
        raise ValueError("not a training checkpoint")
    traces = [trace_from_dict(t) for t in d["traces"]] if d.get("traces") else None
    tp = d.get("trace_params")
    params = TraceGenParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in tp.items()}) if tp else None
    validation = [(trace_from_dict(v["trace"]), profile_from_dict(v["profile"])) for v in d.get("validation", [])]
    trainer = Trainer(config_from_state(d), profiles_from_state(d), traces, params, validation)
    trainer.load_state(d)
    return trainer


def config_from_state(d: dict) -> TrainConfig:
    c = d["config"]
    return TrainConfig(
        reward_kind=c["reward_kind"], total_steps=c["total_steps"], seed=c["seed"],
        eval_every=c["eval_every"], episode_s=c["episode_s"], init_log_std=c["init_log_std"],
        validate_with_safeguard=c["validate_with_safeguard"],
        safeguard=SafeguardConfig(**c["safeguard"]) if c["safeguard"] else None,
        ppo=PPOConfig(**c["ppo"]),
    )


def load_policy(path) -> PolicyNetwork:
    """Load a policy from either a bare policy file or a training checkpoint."""
    d = json.loads(Path(path).read_text())
    if d.get("format") == TRAIN_STATE_FORMAT:
        return PolicyNetwork.from_json(d["policy"])
    return PolicyNetwork.from_json(d)


def profiles_from_state(d: dict) -> list[CodecProfile]:
    return [profile_from_dict(p) for p in d["profiles"]]


def train(cfg: TrainConfig, profiles: Sequence[CodecProfile], traces: Sequence[NetworkTrace] | None = None,
          trace_params: TraceGenParams | None = None,
          validation: Sequence[tuple[NetworkTrace, CodecProfile]] = ()) -> TrainResult:
    """Train one agent from scratch; returns the final policy and its learning curve."""
    trainer = Trainer(cfg, profiles, traces, trace_params, validation)
    return trainer.run()


def write_curve_csv(curve: Sequence[CurvePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curve:
            w.writerow([c.steps, f"{c.wall_seconds:.3f}", f"{c.validation_reward:.6f}", c.mode_switches])


def write_episode_csv(rows: Sequence[tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for r in rows:
            w.writerow(list(r[:-1]) + [f"{r[-1]:.6f}"])


def read_curve_csv(path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["steps"]), float(r["wall_seconds"]), float(r["validation_reward"]),
                       int(r["mode_switches"])) for r in rows]
