"""Training rewards: a network-level linear reward and a frame-quality reward."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

KINDS = ("network", "nvc")


@dataclass(frozen=True)
class RewardConfig:
    kind: str = "nvc"
    # network reward: a*Tput[kbps] + b*Lat[s] + c*Loss
    tput_coef: float = 120.0
    latency_coef: float = -1000.0
    loss_coef: float = -2000.0
    # nvc reward: qbar - a*Lat[s]
    nvc_latency_coef: float = 0.1
    n: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reward kind {self.kind!r}")


@dataclass(frozen=True)
class NetworkSample:
    tput_kbps: float
    latency_s: float
    loss: float


def reward_network(windows: Sequence[NetworkSample], cfg: RewardConfig = RewardConfig(kind="network")) -> float:
    """Mean over windows of ``a*Tput + b*Lat + c*Loss``."""
    if not windows:
        return 0.0
    total = 0.0
    for w in windows:
        total += cfg.tput_coef * w.tput_kbps + cfg.latency_coef * w.latency_s + cfg.loss_coef * w.loss
    return total / len(windows)


_warned_clamp = False


def reward_nvc(frames: Iterable[tuple[float, float]], cfg: RewardConfig = RewardConfig()) -> float:
    """Mean over frames of ``qbar - a*latency`` with latency in seconds.

    ``frames`` yields ``(qbar, latency_s)``; qbar outside [0, 1] is clamped.
    """
    global _warned_clamp
    total = 0.0
    n = 0
    for qbar, lat in frames:
        if not 0.0 <= qbar <= 1.0:
            if not _warned_clamp:
                log.warning("normalized quality %.4f outside [0, 1]; clamping", qbar)
                _warned_clamp = True
            qbar = min(max(qbar, 0.0), 1.0)
        total += qbar - cfg.nvc_latency_coef * lat
        n += 1
    return total / n if n else 0.0
