"""The learned rate controller: observation -> Gaussian action -> sending rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..controllers import INITIAL_RATE_KBPS, RATE_MAX_KBPS, RATE_MIN_KBPS, clamp_rate
from ..simcore import ControllerDecision, FeedbackReport, Mode
from .features import WindowTracker
from .policy import LOG_2PI, PolicyNetwork, policy_forward
from .ppo import RewardScaler, Rollout
from .rewards import NetworkSample, RewardConfig, reward_network, reward_nvc


@dataclass(frozen=True)
class RateState:
    x_prev: float
    gamma_tput: float


def map_action(a: float, rs: RateState, lo: float = RATE_MIN_KBPS, hi: float = RATE_MAX_KBPS) -> float:
    """New sending rate in kbps.

    Non-negative actions scale the previous rate by ``1 + a``; negative ones
    scale the recent delivery rate (never above the previous rate) by
    ``1 + a``.
    """
    if not math.isfinite(a):
        raise ValueError(f"non-finite action {a}")
    a = min(max(a, -1.0), 1.0)
    if a >= 0:
        x = rs.x_prev * (1.0 + a)
    else:
        x = min(rs.gamma_tput, rs.x_prev) * (1.0 + a)
    return clamp_rate(x, lo, hi)


class RLController:
    """Acts once per feedback window.

    With ``buffer`` set and ``stochastic`` on, every action is sampled and
    recorded for PPO; the reward for an action arrives with the next window.
    ``reward_trace`` always holds the frame-quality reward per window so any
    agent can be scored on it regardless of what it trains on.
    """

    def __init__(self, net: PolicyNetwork, reward_cfg: RewardConfig | None = None,
                 rng: np.random.Generator | None = None, buffer: Rollout | None = None,
                 stochastic: bool = False, scaler: RewardScaler | None = None,
                 action_log: list | None = None, name: str = "rl",
                 initial_rate_kbps: float = INITIAL_RATE_KBPS):
        self.net = net
        self.reward_cfg = reward_cfg or RewardConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.buffer = buffer
        self.stochastic = stochastic
        self.scaler = scaler
        self.action_log = action_log
        self.name = name
        self.initial_rate = initial_rate_kbps
        self._eval_cfg = RewardConfig(kind="nvc", nvc_latency_coef=self.reward_cfg.nvc_latency_coef)

    def start(self, trace, owd_ms) -> ControllerDecision:
        self.tracker = WindowTracker(2 * owd_ms)
        self.rate = self.initial_rate
        self.pending: int | None = None
        self.reward_trace: list[tuple[float, float]] = []
        self.train_rewards: list[float] = []
        self._last_nvc = 0.0
        self._last_latency_s = 2 * owd_ms / 1000.0
        self.env_steps = 0
        self.rl_steps = 0
        self._episode_start = len(self.buffer) if self.buffer is not None else 0
        return ControllerDecision(self.rate, Mode.RL, 0.0)

    def frame_rate(self, now_ms: float) -> float:
        return self.rate

    # -- rewards
    def _ingest(self, report: FeedbackReport, now_ms: float) -> float:
        """Update features and return this window's training reward."""
        self.tracker.update(report)
        self.env_steps += 1
        mean_rtt = report.mean_rtt_ms
        if mean_rtt is not None:
            self._last_latency_s = mean_rtt / 1000.0
        frames = [(f.quality_norm, f.latency_ms / 1000.0) for f in report.decoded_frames]
        if frames:
            self._last_nvc = reward_nvc(frames, self._eval_cfg)
        self.reward_trace.append((now_ms, self._last_nvc))
        if self.reward_cfg.kind == "nvc":
            r = self._last_nvc if self.reward_cfg.nvc_latency_coef == self._eval_cfg.nvc_latency_coef \
                else reward_nvc(frames, self.reward_cfg)
        else:
            sample = NetworkSample(report.throughput_kbps, self._last_latency_s, report.loss_rate)
            r = reward_network([sample], self.reward_cfg)
        self.train_rewards.append(r)
        return r

    def _credit(self, r: float, terminal: bool = False, bootstrap: float = 0.0) -> None:
        if self.buffer is None or self.pending is None:
            return
        scaled = self.scaler(r, reset=terminal) if self.scaler is not None else r
        self.buffer.set_reward(self.pending, scaled)
        if terminal:
            self.buffer.end_segment(self.pending, bootstrap)
        self.pending = None

    # -- controller protocol
    def on_feedback(self, report: FeedbackReport, now_ms: float) -> ControllerDecision:
        r = self._ingest(report, now_ms)
        self._credit(r)
        obs = self.tracker.observation()
        mean, std, value = policy_forward(self.net, obs)
        if self.stochastic:
            a = mean + std * float(self.rng.standard_normal())
        else:
            a = mean
        if self.buffer is not None and self.stochastic:
            z = (a - mean) / std
            logp = -0.5 * z * z - math.log(std) - 0.5 * LOG_2PI
            self.buffer.add(obs, a, logp, value)
            self.pending = len(self.buffer) - 1
        a_env = min(max(a, -1.0), 1.0)
        if self.action_log is not None:
            self.action_log.append(a_env)
        self.rl_steps += 1
        self.rate = map_action(a_env, RateState(self.rate, self.tracker.throughput_200ms_kbps))
        return ControllerDecision(self.rate, Mode.RL, now_ms)

    def observe(self, report: FeedbackReport, now_ms: float) -> None:
        """Window seen while another controller is in charge."""
        self._ingest(report, now_ms)

    def interrupt(self, report: FeedbackReport, now_ms: float, penalty: float) -> None:
        """The safeguard took over: the last RL action ends its trajectory, penalized."""
        r = self._ingest(report, now_ms)
        self._credit(r + penalty, terminal=True, bootstrap=0.0)

    def resume(self, rate_kbps: float) -> None:
        self.rate = rate_kbps

    def finish(self, now_ms: float) -> None:
        buf = self.buffer
        if buf is None or self.pending is None:
            return
        # the final action never saw its outcome: drop it and bootstrap the
        # previous step from its value (time limit, not a terminal state)
        assert self.pending == len(buf) - 1
        value = buf.values[-1]
        for lst in (buf.obs, buf.actions, buf.logps, buf.rewards, buf.values, buf.seg_end, buf.bootstrap):
            lst.pop()
        self.pending = None
        if len(buf) > self._episode_start and not buf.seg_end[-1]:
            buf.end_segment(len(buf) - 1, value)
        if self.scaler is not None:
            self.scaler.ret = 0.0
