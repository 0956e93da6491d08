"""Rule-based rate controllers and the jitter-triggered safeguard wrapper."""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass, field

from .codec import FRAME_INTERVAL_MS
from .simcore import ControllerDecision, FeedbackReport, Mode, SwitchEvent
from .traces import NetworkTrace

RATE_MIN_KBPS = 100.0
RATE_MAX_KBPS = 8000.0
INITIAL_RATE_KBPS = 300.0


def clamp_rate(rate_kbps: float, lo: float = RATE_MIN_KBPS, hi: float = RATE_MAX_KBPS) -> float:
    return min(max(rate_kbps, lo), hi)


def _ls_slope(xs: list[float], ys: list[float]) -> float:
    n = len(xs)
    if n < 2:
        return 0.0
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    if sxx <= 0:
        return 0.0
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / sxx


class FixedRate:
    """Constant-rate sender; handy as a test fixture."""

    def __init__(self, rate_kbps: float, name: str = "fixed"):
        self.rate = rate_kbps
        self.name = name

    def start(self, trace, owd_ms):
        return ControllerDecision(self.rate, Mode.RULE, 0.0)

    def on_feedback(self, report, now_ms):
        return ControllerDecision(self.rate, Mode.RULE, now_ms)

    def frame_rate(self, now_ms):
        return self.rate


@dataclass
class GccConfig:
    decrease_factor: float = 0.85
    increase_factor: float = 1.08  # per feedback window
    loss_threshold: float = 0.10
    trend_window: int = 20
    smoothing: float = 0.9
    threshold_gain: float = 4.0
    max_deltas: int = 60
    initial_threshold: float = 12.5
    k_up: float = 0.0087
    k_down: float = 0.039
    threshold_bounds: tuple[float, float] = (6.0, 600.0)
    max_adapt_offset: float = 15.0
    group_ms: float = 5.0
    probe_headroom: float = 1.5
    initial_rate_kbps: float = INITIAL_RATE_KBPS
    rate_min_kbps: float = RATE_MIN_KBPS
    rate_max_kbps: float = RATE_MAX_KBPS


class GccLike:
    """Delay-gradient controller in the style of WebRTC's GCC.

    A trendline over smoothed RTT samples feeds an overuse detector with an
    adaptive threshold; its signal drives an increase/hold/decrease machine.
    Window loss above 10% also forces a decrease.
    """

    name = "gcc"

    def __init__(self, cfg: GccConfig | None = None, mode: Mode = Mode.RULE):
        self.cfg = cfg or GccConfig()
        self.mode = mode
        self.reset()

    def reset(self, rate_kbps: float | None = None) -> None:
        c = self.cfg
        self.rate = c.initial_rate_kbps if rate_kbps is None else rate_kbps
        self.threshold = c.initial_threshold
        self.trend_x: deque[float] = deque(maxlen=c.trend_window)
        self.trend_y: deque[float] = deque(maxlen=c.trend_window)
        self.first_rtt: float | None = None
        self.acc = 0.0
        self.smoothed = 0.0
        self.num_deltas = 0
        self.prev_trend = 0.0
        self.signal = "normal"
        self.state = "increase"
        self.tput_hist: deque[float] = deque(maxlen=4)

    def start(self, trace: NetworkTrace, owd_ms: float) -> ControllerDecision:
        self.reset()
        return ControllerDecision(self.rate, self.mode, 0.0)

    def frame_rate(self, now_ms: float) -> float:
        return self.rate

    def set_rate(self, rate_kbps: float) -> None:
        self.rate = clamp_rate(rate_kbps, self.cfg.rate_min_kbps, self.cfg.rate_max_kbps)

    def _detect(self, report: FeedbackReport) -> str:
        c = self.cfg
        for x, rtt in zip(report.send_times_ms, report.rtt_samples_ms):
            if self.first_rtt is None:
                self.first_rtt = rtt
            self.acc = rtt - self.first_rtt
            self.smoothed = c.smoothing * self.smoothed + (1 - c.smoothing) * self.acc
            self.trend_x.append(x)
            self.trend_y.append(self.smoothed)
            self.num_deltas += 1
        if len(self.trend_x) < 2:
            return self.signal
        trend = _ls_slope(list(self.trend_x), list(self.trend_y))
        modified = min(self.num_deltas, c.max_deltas) * trend * c.threshold_gain
        if modified > self.threshold and trend >= self.prev_trend:
            signal = "overuse"
        elif modified < -self.threshold:
            signal = "underuse"
        else:
            signal = "normal"
        # GCC adapts per ~5 ms packet group; compound those steps over the window
        if abs(modified) - self.threshold <= c.max_adapt_offset:
            k = c.k_up if abs(modified) > self.threshold else c.k_down
            dt = min(report.duration_ms, 100.0)
            frac = 1.0 - (1.0 - k * c.group_ms) ** (dt / c.group_ms)
            self.threshold += frac * (abs(modified) - self.threshold)
        lo, hi = c.threshold_bounds
        self.threshold = min(max(self.threshold, lo), hi)
        self.prev_trend = trend
        self.signal = signal
        return signal

    def on_feedback(self, report: FeedbackReport, now_ms: float) -> ControllerDecision:
        c = self.cfg
        signal = self._detect(report)
        self.tput_hist.append(report.throughput_kbps)
        tput = sum(self.tput_hist) / len(self.tput_hist)
        got_acks = report.packets_acked > 0
        if signal == "overuse" or report.loss_rate > c.loss_threshold:
            base = min(self.rate, tput) if got_acks and tput > 0 else self.rate
            self.rate = c.decrease_factor * base
            self.state = "decrease"
        elif signal == "underuse" or not got_acks:
            self.state = "hold"
        else:
            self.state = "increase"
            rate = self.rate * c.increase_factor
            self.rate = min(rate, max(c.probe_headroom * tput + 10.0, self.rate))
        self.rate = clamp_rate(self.rate, c.rate_min_kbps, c.rate_max_kbps)
        return ControllerDecision(self.rate, self.mode, now_ms)


class OracleController:
    """Sends each frame at the average bandwidth the link offers while it is paced out.

    With no per-packet header overhead the packetization loss is the final
    short packet of each frame, so ``headroom`` just keeps a hair of slack
    against rounding.
    """

    name = "oracle"

    def __init__(self, headroom: float = 0.99):
        self.headroom = headroom
        self.trace: NetworkTrace | None = None

    def start(self, trace: NetworkTrace, owd_ms: float) -> ControllerDecision:
        self.trace = trace
        return ControllerDecision(self.frame_rate(0.0), Mode.ORACLE, 0.0)

    def rate_at(self, now_ms: float) -> float:
        t0 = now_ms / 1000.0
        bw = self.trace.mean_bandwidth(t0, t0 + FRAME_INTERVAL_MS / 1000.0)
        return clamp_rate(bw * 1000.0 * self.headroom)

    def frame_rate(self, now_ms: float) -> float:
        return self.rate_at(now_ms)

    def on_feedback(self, report: FeedbackReport, now_ms: float) -> ControllerDecision:
        return ControllerDecision(self.rate_at(now_ms), Mode.ORACLE, now_ms)


def oracle_rate(trace: NetworkTrace, t_s: float, headroom: float = 0.99) -> ControllerDecision:
    ctrl = OracleController(headroom)
    ctrl.trace = trace
    return ControllerDecision(ctrl.rate_at(t_s * 1000.0), Mode.ORACLE, t_s * 1000.0)


# -- safeguard ----------------------------------------------------------------

@dataclass
class SafeguardConfig:
    """``sensitivity`` divides the running-median jitter to form the trigger threshold."""

    sensitivity: float = 1.0
    dwell_windows: int = 2
    switch_penalty: float = -1.0
    median_windows: int = 20
    threshold_floor_ms: float = 2.0

    def __post_init__(self):
        if self.sensitivity <= 0:
            raise ValueError("sensitivity must be positive")
        if self.dwell_windows < 1:
            raise ValueError("dwell_windows must be at least 1")


@dataclass
class SafeguardState:
    mode: Mode = Mode.RL
    jitter_history: deque = field(default_factory=lambda: deque(maxlen=20))
    calm_windows: int = 0
    triggers: int = 0
    last_threshold: float = 0.0
    last_jitter: float = 0.0


def window_jitter(report: FeedbackReport) -> float:
    s = report.rtt_samples_ms
    return statistics.pstdev(s) if len(s) >= 2 else 0.0


def safeguard_step(cfg: SafeguardConfig, state: SafeguardState, feedback: FeedbackReport,
                   now_ms: float) -> tuple[Mode, SwitchEvent | None]:
    """Advance the safeguard by one feedback window and return the active mode.

    The jitter threshold is ``max(floor, median(recent jitter) / sensitivity)``
    computed over the windows before this one.
    """
    jitter = window_jitter(feedback)
    hist = state.jitter_history
    if hist.maxlen != cfg.median_windows:
        state.jitter_history = hist = deque(hist, maxlen=cfg.median_windows)
    med = statistics.median(hist) if hist else 0.0
    threshold = max(cfg.threshold_floor_ms, med / cfg.sensitivity)
    hist.append(jitter)
    state.last_jitter, state.last_threshold = jitter, threshold
    spike = jitter > threshold
    state.triggers += spike
    event = None
    if state.mode is Mode.RL:
        if spike:
            state.mode = Mode.FALLBACK
            state.calm_windows = 0
            event = SwitchEvent(now_ms, Mode.RL, Mode.FALLBACK)
    else:
        state.calm_windows = 0 if spike else state.calm_windows + 1
        if state.calm_windows >= cfg.dwell_windows:
            state.mode = Mode.RL
            event = SwitchEvent(now_ms, Mode.FALLBACK, Mode.RL)
    return state.mode, event


class SafeguardedController:
    """Runs an RL controller and hands control to a GCC-style fallback on jitter spikes.

    The fallback observes every window so its estimators stay warm; its rate
    is reset to the current sending rate whenever it takes over.
    """

    def __init__(self, rl, cfg: SafeguardConfig | None = None, fallback: GccLike | None = None,
                 name: str = "onrl"):
        self.rl = rl
        self.cfg = cfg or SafeguardConfig()
        self.fallback = fallback or GccLike(mode=Mode.FALLBACK)
        self.fallback.mode = Mode.FALLBACK
        self.name = name
        self.state = SafeguardState()
        self.switch_events: list[SwitchEvent] = []
        self.rate = INITIAL_RATE_KBPS
        self.fallback_windows = 0

    @property
    def reward_trace(self):
        return getattr(self.rl, "reward_trace", [])

    def start(self, trace, owd_ms):
        self.state = SafeguardState()
        self.switch_events = []
        self.fallback_windows = 0
        self.fallback.start(trace, owd_ms)
        d = self.rl.start(trace, owd_ms)
        self.rate = d.rate_kbps
        return d

    def frame_rate(self, now_ms):
        return self.rate

    def on_feedback(self, report: FeedbackReport, now_ms: float) -> ControllerDecision:
        prev = self.state.mode
        mode, event = safeguard_step(self.cfg, self.state, report, now_ms)
        if event is not None:
            self.switch_events.append(event)
        if mode is Mode.FALLBACK:
            self.fallback_windows += 1
            if prev is Mode.RL:
                self.rl.interrupt(report, now_ms, self.cfg.switch_penalty)
                self.fallback.set_rate(self.rate)
            else:
                self.rl.observe(report, now_ms)
            decision = self.fallback.on_feedback(report, now_ms)
        else:
            self.fallback.on_feedback(report, now_ms)
            if prev is Mode.FALLBACK:
                self.rl.resume(self.rate)
            decision = self.rl.on_feedback(report, now_ms)
        self.rate = decision.rate_kbps
        return decision

    def finish(self, now_ms):
        fin = getattr(self.rl, "finish", None)
        if fin is not None:
            fin(now_ms)
