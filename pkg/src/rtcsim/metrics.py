"""QoE and network-level metrics computed from session logs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from .simcore import US_PER_MS, SessionLog

log = logging.getLogger(__name__)

STALL_GAP_MS = 200.0
PERCENTILE = 0.98


@dataclass(frozen=True)
class QoEReport:
    mean_quality_db: float
    p98_frame_delay_ms: float
    stalls_per_sec: float
    stall_time_ratio: float
    tput_mbps: float
    p98_packet_delay_ms: float
    loss_pct: float
    net_loss_pct: float
    frames: int

    def as_row(self) -> dict:
        return asdict(self)


QOE_COLUMNS = tuple(f.name for f in fields(QoEReport))
RESULT_KEYS = ("controller", "trace", "profile", "seed")
RESULT_COLUMNS = RESULT_KEYS + QOE_COLUMNS


def ssim_db(ssim: float) -> float:
    if not 0.0 <= ssim < 1.0:
        raise ValueError(f"ssim must lie in [0, 1), got {ssim}")
    return -10.0 * math.log10(1.0 - ssim)


def p98(values: Sequence[float]) -> float:
    """Nearest-rank 98th percentile."""
    if len(values) == 0:
        raise ValueError("p98 of an empty list")
    s = sorted(values)
    rank = math.ceil(PERCENTILE * len(s))
    return s[max(rank, 1) - 1]


def count_stalls(decode_times: Sequence[float], duration_s: float,
                 gap_ms: float = STALL_GAP_MS) -> tuple[float, float]:
    """(stalls per second, fraction of the session spent stalled).

    A stall is a gap between consecutive decodes longer than ``gap_ms``; only
    the excess over ``gap_ms`` counts as stall time.
    """
    if len(decode_times) < 2:
        log.warning("fewer than two decode events; reporting no stalls")
        return 0.0, 0.0
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    stalls = 0
    stalled_ms = 0.0
    for a, b in zip(decode_times, decode_times[1:]):
        gap = b - a
        if gap > gap_ms:
            stalls += 1
            stalled_ms += gap - gap_ms
    ratio = min(stalled_ms / (duration_s * 1000.0), 1.0)
    return stalls / duration_s, ratio


def session_qoe(slog: SessionLog) -> QoEReport:
    if not slog.frames:
        raise ValueError("session log has no frames")
    frames = slog.frames
    decoded = [f for f in frames if f.decode_ms is not None]
    quality = sum(f.quality_db for f in frames) / len(frames)
    delays = [f.decode_ms - f.encode_ms for f in decoded]
    stall_rate, stall_ratio = count_stalls(sorted(f.decode_ms for f in decoded), slog.duration_s)

    deadline_us = {f.frame_id: f.deadline_ms * US_PER_MS for f in frames}
    horizon_us = slog.duration_s * 1e6
    slots_total: set = set()
    slots_ok: set = set()
    sent = dropped = 0
    bits = 0
    pkt_delays = []
    for p in slog.packets:
        sent += 1
        key = (p.frame_id, p.slot)
        slots_total.add(key)
        if p.drop_cause is not None or p.deliver_us is None:
            dropped += p.drop_cause is not None
            continue
        pkt_delays.append((p.deliver_us - p.enqueue_us) / US_PER_MS)
        if p.deliver_us <= horizon_us:
            bits += 8 * p.size_bytes
        dl = deadline_us.get(p.frame_id)
        if dl is not None and p.deliver_us < dl:
            slots_ok.add(key)
    loss_pct = 100.0 * (1 - len(slots_ok) / len(slots_total)) if slots_total else 0.0
    return QoEReport(
        mean_quality_db=quality,
        p98_frame_delay_ms=p98(delays) if delays else math.nan,
        stalls_per_sec=stall_rate,
        stall_time_ratio=stall_ratio,
        tput_mbps=bits / slog.duration_s / 1e6,
        p98_packet_delay_ms=p98(pkt_delays) if pkt_delays else math.nan,
        loss_pct=loss_pct,
        net_loss_pct=100.0 * dropped / sent if sent else 0.0,
        frames=len(frames),
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_results(rows: Iterable[dict], path) -> int:
    """Write result rows (keys + QoE fields) to CSV; returns the row count."""
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in RESULT_COLUMNS])
            n += 1
    return n


def read_results(path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for lineno, r in enumerate(reader, start=2):
            try:
                row = {k: r[k] for k in RESULT_KEYS}
                row["seed"] = int(row["seed"])
                for c in QOE_COLUMNS:
                    row[c] = int(r[c]) if c == "frames" else float(r[c])
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
            rows.append(row)
    return rows


def summarize(rows: Sequence[dict]) -> dict[str, dict[str, float]]:
    """Per-controller means of every QoE column, in first-seen order."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["controller"], []).append(r)
    out = {}
    for name, rs in groups.items():
        out[name] = {"sessions": len(rs)}
        for c in QOE_COLUMNS:
            vals = [r[c] for r in rs if not (isinstance(r[c], float) and math.isnan(r[c]))]
            out[name][c] = sum(vals) / len(vals) if vals else math.nan
    return out
