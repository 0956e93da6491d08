"""Per-window statistics and the 30-dimensional observation built from them."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..simcore import FeedbackReport

HISTORY_WINDOWS = 10
N_FEATURES = 3
OBS_DIM = HISTORY_WINDOWS * N_FEATURES
NEUTRAL = (0.0, 1.0, 1.0)

# keep network inputs in a sane range; ratios above this carry no extra signal
MAX_RATIO = 10.0
MAX_GRADIENT = 5.0


@dataclass(frozen=True)
class WindowStats:
    mean_rtt_ms: float
    min_historic_mean_rtt_ms: float
    rtt_slope: float
    packets_sent: int
    packets_acked: int
    bytes_acked: int
    window_index: int
    loss_rate: float = 0.0

    def features(self) -> tuple[float, float, float]:
        ratio = self.mean_rtt_ms / self.min_historic_mean_rtt_ms if self.min_historic_mean_rtt_ms > 0 else 1.0
        sending = self.packets_sent / max(self.packets_acked, 1)
        return (
            min(max(self.rtt_slope, -MAX_GRADIENT), MAX_GRADIENT),
            min(max(ratio, 1.0), MAX_RATIO),
            min(sending, MAX_RATIO),
        )


def rtt_slope(send_times_ms, rtts_ms) -> float:
    """Least-squares slope of RTT against send time (ms per ms)."""
    n = len(send_times_ms)
    if n < 2:
        return 0.0
    x = np.asarray(send_times_ms, dtype=float)
    y = np.asarray(rtts_ms, dtype=float)
    x = x - x.mean()
    sxx = float(x @ x)
    if sxx <= 1e-12:
        return 0.0
    return float(x @ (y - y.mean())) / sxx


def extract_observation(history) -> np.ndarray:
    """Stack the last ten windows' features, most recent first.

    Missing history is padded with the neutral window ``(0, 1, 1)``.
    """
    recent = list(history)[-HISTORY_WINDOWS:][::-1]
    rows = [w.features() for w in recent]
    rows += [NEUTRAL] * (HISTORY_WINDOWS - len(rows))
    return np.asarray(rows, dtype=float).reshape(OBS_DIM)


class WindowTracker:
    """Turns feedback reports into :class:`WindowStats` and keeps the history."""

    def __init__(self, initial_rtt_ms: float):
        self.history: deque[WindowStats] = deque(maxlen=HISTORY_WINDOWS)
        self.min_mean_rtt = float("inf")
        self.last_mean_rtt = initial_rtt_ms
        self.tput_hist: deque[float] = deque(maxlen=4)
        self.index = 0

    def update(self, report: FeedbackReport) -> WindowStats:
        mean = report.mean_rtt_ms
        if mean is None:
            mean = self.last_mean_rtt
        self.last_mean_rtt = mean
        self.min_mean_rtt = min(self.min_mean_rtt, mean)
        stats = WindowStats(
            mean_rtt_ms=mean,
            min_historic_mean_rtt_ms=self.min_mean_rtt,
            rtt_slope=rtt_slope(report.send_times_ms, report.rtt_samples_ms),
            packets_sent=report.packets_sent,
            packets_acked=report.packets_acked,
            bytes_acked=report.bytes_acked,
            window_index=self.index,
            loss_rate=report.loss_rate,
        )
        self.index += 1
        self.history.append(stats)
        self.tput_hist.append(report.throughput_kbps)
        return stats

    @property
    def throughput_200ms_kbps(self) -> float:
        """Delivery rate over the last four 50 ms windows."""
        return sum(self.tput_hist) / len(self.tput_hist) if self.tput_hist else 0.0

    def observation(self) -> np.ndarray:
        return extract_observation(self.history)
