"""Network traces: piecewise-constant bandwidth plus per-trace link parameters.

Trace files are plain text, one ``time_s bandwidth_mbps`` breakpoint per line,
with an optional JSON sidecar (``<name>.json``) holding the scalar link
parameters.
"""

from __future__ import annotations

import bisect
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

# Table of generator bounds: (low, high) per parameter.
BANDWIDTH_RANGE_MBPS = (0.6, 6.0)
MIN_RTT_RANGE_MS = (2.0, 200.0)
CHANGE_INTERVAL_RANGE_S = (0.0, 15.0)  # left-open
LOSS_RANGE = (0.0, 0.05)
QUEUE_RANGE_PACKETS = (1, 100)

DEFAULT_DURATION_S = 30.0
DEFAULT_MIN_RTT_MS = 50.0
DEFAULT_LOSS = 0.0
DEFAULT_QUEUE_PACKETS = 50


class TraceError(ValueError):
    """Raised for malformed trace files or invalid trace parameters."""


@dataclass(frozen=True)
class NetworkTrace:
    breakpoints: tuple[tuple[float, float], ...]
    min_rtt_ms: float = DEFAULT_MIN_RTT_MS
    random_loss_rate: float = DEFAULT_LOSS
    queue_capacity_packets: int = DEFAULT_QUEUE_PACKETS
    label: str = ""
    duration_s: float = DEFAULT_DURATION_S

    def __post_init__(self):
        if not self.breakpoints:
            raise TraceError("trace has no breakpoints")
        times = [t for t, _ in self.breakpoints]
        if times[0] != 0:
            raise TraceError("first breakpoint must be at t=0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise TraceError("breakpoint times must be strictly increasing")
        if any(bw < 0 or not math.isfinite(bw) for _, bw in self.breakpoints):
            raise TraceError("bandwidth must be finite and non-negative")
        if self.min_rtt_ms <= 0:
            raise TraceError("min_rtt_ms must be positive")
        if not 0 <= self.random_loss_rate <= 1:
            raise TraceError("random_loss_rate must lie in [0, 1]")
        if self.queue_capacity_packets < 1:
            raise TraceError("queue capacity must be at least one packet")
        if self.duration_s <= 0:
            raise TraceError("duration must be positive")
        object.__setattr__(self, "_times", times)

    @property
    def owd_ms(self) -> float:
        return self.min_rtt_ms / 2.0

    @property
    def times(self) -> list[float]:
        return self._times  # type: ignore[attr-defined]

    def bandwidths(self) -> list[float]:
        return [bw for _, bw in self.breakpoints]

    def bandwidth_at(self, t: float) -> float:
        return bandwidth_at(self, t)

    def mean_bandwidth(self, t0: float, t1: float) -> float:
        """Time-averaged bandwidth (Mbps) over ``[t0, t1)`` seconds."""
        if t1 <= t0:
            return self.bandwidth_at(min(t0, self.duration_s))
        times = self.times
        total = 0.0
        i = max(bisect.bisect_right(times, t0) - 1, 0)
        t = t0
        while t < t1:
            seg_end = times[i + 1] if i + 1 < len(times) else math.inf
            nxt = min(seg_end, t1)
            total += self.breakpoints[i][1] * (nxt - t)
            t = nxt
            i += 1
        return total / (t1 - t0)


def bandwidth_at(trace: NetworkTrace, t: float) -> float:
    """Bandwidth in Mbps of the segment active at ``t`` seconds.

    Segments are left-closed and right-open, so a query exactly at a
    breakpoint returns the new segment's value.
    """
    if t < 0 or t > trace.duration_s or math.isnan(t):
        raise TraceError(f"t={t} outside trace range [0, {trace.duration_s}]")
    i = bisect.bisect_right(trace.times, t) - 1
    return trace.breakpoints[i][1]


@dataclass(frozen=True)
class TraceGenParams:
    bandwidth_mbps: tuple[float, float] = BANDWIDTH_RANGE_MBPS
    min_rtt_ms: tuple[float, float] = MIN_RTT_RANGE_MS
    change_interval_s: tuple[float, float] = CHANGE_INTERVAL_RANGE_S
    loss: tuple[float, float] = LOSS_RANGE
    queue_packets: tuple[int, int] = QUEUE_RANGE_PACKETS
    duration_s: float = DEFAULT_DURATION_S

    def validate(self) -> None:
        for name in ("bandwidth_mbps", "min_rtt_ms", "change_interval_s", "loss", "queue_packets"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise TraceError(f"inverted range for {name}: ({lo}, {hi})")
        if self.change_interval_s[1] <= 0:
            raise TraceError("change interval upper bound must be positive")
        if self.bandwidth_mbps[0] < 0 or self.min_rtt_ms[0] <= 0:
            raise TraceError("bandwidth and RTT ranges must be positive")
        if not (0 <= self.loss[0] and self.loss[1] <= 1):
            raise TraceError("loss range must lie within [0, 1]")
        if self.queue_packets[0] < 1:
            raise TraceError("queue range must start at one packet or more")
        if self.duration_s <= 0:
            raise TraceError("duration must be positive")


def generate_trace(params: TraceGenParams, seed: int, label: str | None = None) -> NetworkTrace:
    """Draw one synthetic trace. All parameters are sampled uniformly."""
    params.validate()
    rng = np.random.default_rng(seed)
    min_rtt = float(rng.uniform(*params.min_rtt_ms))
    loss = float(rng.uniform(*params.loss))
    lo_q, hi_q = params.queue_packets
    queue = int(rng.integers(lo_q, hi_q + 1))

    lo_i, hi_i = params.change_interval_s
    breakpoints = []
    t = 0.0
    while t < params.duration_s:
        breakpoints.append((round(t, 6), round(float(rng.uniform(*params.bandwidth_mbps)), 6)))
        if lo_i == hi_i:
            seg = hi_i
        else:
            # the lower bound is excluded: (lo, hi]
            seg = hi_i - float(rng.uniform(0.0, hi_i - lo_i))
        t += seg
    return NetworkTrace(
        breakpoints=tuple(breakpoints),
        min_rtt_ms=round(min_rtt, 6),
        random_loss_rate=round(loss, 8),
        queue_capacity_packets=queue,
        label=label if label is not None else f"gen-{seed}",
        duration_s=params.duration_s,
    )


def generate_traces(params: TraceGenParams, count: int, seed: int) -> list[NetworkTrace]:
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)
    return [
        generate_trace(params, int(s), label=f"trace-{seed}-{i:04d}")
        for i, s in enumerate(seeds)
    ]


def constant_trace(bandwidth_mbps: float, duration_s: float = DEFAULT_DURATION_S, **kw) -> NetworkTrace:
    return NetworkTrace(breakpoints=((0.0, bandwidth_mbps),), duration_s=duration_s, **kw)


# -- file format ------------------------------------------------------------

def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_trace(trace: NetworkTrace, path: str | os.PathLike) -> Path:
    path = Path(path)
    lines = [f"{t!r} {bw!r}" for t, bw in trace.breakpoints]
    path.write_text("\n".join(lines) + "\n")
    meta = {
        "min_rtt_ms": trace.min_rtt_ms,
        "loss": trace.random_loss_rate,
        "queue": trace.queue_capacity_packets,
        "label": trace.label,
        "duration_s": trace.duration_s,
    }
    _sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_trace(path: str | os.PathLike, **defaults) -> NetworkTrace:
    """Parse a breakpoint file and its optional JSON sidecar.

    Missing sidecar fields fall back to ``defaults`` and then to the module
    defaults. Duration defaults to the last breakpoint time rounded up to a
    whole second, or 30 s if that is longer.
    """
    path = Path(path)
    breakpoints = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TraceError(f"{path}:{lineno}: expected 'time_s bandwidth_mbps', got {raw!r}")
        try:
            t, bw = float(parts[0]), float(parts[1])
        except ValueError:
            raise TraceError(f"{path}:{lineno}: non-numeric value in {raw!r}") from None
        if breakpoints and t <= breakpoints[-1][0]:
            raise TraceError(f"{path}:{lineno}: time {t} not increasing")
        breakpoints.append((t, bw))
    if not breakpoints:
        raise TraceError(f"{path}: empty trace file")

    meta = dict(defaults)
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        try:
            meta.update(json.loads(sidecar.read_text()))
        except json.JSONDecodeError as exc:
            raise TraceError(f"{sidecar}: {exc}") from None
    duration = meta.get("duration_s")
    if duration is None:
        duration = max(DEFAULT_DURATION_S, math.ceil(breakpoints[-1][0]))
    try:
        return NetworkTrace(
            breakpoints=tuple(breakpoints),
            min_rtt_ms=float(meta.get("min_rtt_ms", DEFAULT_MIN_RTT_MS)),
            random_loss_rate=float(meta.get("loss", DEFAULT_LOSS)),
            queue_capacity_packets=int(meta.get("queue", DEFAULT_QUEUE_PACKETS)),
            label=str(meta.get("label", path.stem)),
            duration_s=float(duration),
        )
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from None


def load_trace_dir(directory: str | os.PathLike) -> list[NetworkTrace]:
    directory = Path(directory)
    files = sorted(p for p in directory.glob("*.txt"))
    if not files:
        raise TraceError(f"no trace files (*.txt) in {directory}")
    return [load_trace(p) for p in files]


def trace_to_dict(trace: NetworkTrace) -> dict:
    d = asdict(trace)
    d["breakpoints"] = [list(bp) for bp in trace.breakpoints]
    return d


def trace_from_dict(d: dict) -> NetworkTrace:
    d = dict(d)
    d["breakpoints"] = tuple(tuple(bp) for bp in d["breakpoints"])
    return NetworkTrace(**d)
