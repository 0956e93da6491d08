"""Packet-level discrete-event simulation of one bottleneck link.

A session encodes a frame every 40 ms at the controller's current rate, paces
the frame's packets evenly over the frame interval into a FIFO drop-tail
queue, and serves the queue at the trace bandwidth.  The receiver aggregates
deliveries into 50 ms feedback windows that reach the sender one
propagation delay later.

Times are integer microseconds internally; 1 Mbps is exactly 1 bit/us.
"""

from __future__ import annotations

import csv
import enum
import heapq
import io
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .codec import (
    FRAME_INTERVAL_MS,
    MTU_BYTES,
    CodecProfile,
    CodecSession,
    EncodedFrame,
    decode_deadline_ms,
)
from .traces import NetworkTrace

US_PER_MS = 1000
FEEDBACK_INTERVAL_MS = 50
FEEDBACK_INTERVAL_US = FEEDBACK_INTERVAL_MS * US_PER_MS
FRAME_INTERVAL_US = int(FRAME_INTERVAL_MS * US_PER_MS)
NEVER = 1 << 62


class DropCause(str, enum.Enum):
    QUEUE_OVERFLOW = "queue_overflow"
    RANDOM_LOSS = "random_loss"


class EnqueueResult(enum.Enum):
    QUEUED = "queued"
    DROPPED_QUEUE = "dropped_queue"
    DROPPED_RANDOM = "dropped_random"


class Packet:
    __slots__ = ("id", "frame_id", "slot", "size_bytes", "enqueue_us", "depart_us",
                 "deliver_us", "drop_cause", "retx")

    def __init__(self, id: int, frame_id: int, size_bytes: int, enqueue_us: int, slot: int = 0, retx: bool = False):
        self.id = id
        self.frame_id = frame_id
        self.slot = slot
        self.size_bytes = size_bytes
        self.enqueue_us = enqueue_us
        self.depart_us: int | None = None
        self.deliver_us: int | None = None
        self.drop_cause: DropCause | None = None
        self.retx = retx

    @property
    def enqueue_time(self) -> float:
        return self.enqueue_us / US_PER_MS

    @property
    def deliver_time(self) -> float | None:
        return None if self.deliver_us is None else self.deliver_us / US_PER_MS

    def to_dict(self) -> dict:
        return {
            "id": self.id, "frame_id": self.frame_id, "slot": self.slot, "size": self.size_bytes,
            "enqueue_us": self.enqueue_us, "deliver_us": self.deliver_us,
            "drop": self.drop_cause.value if self.drop_cause else None, "retx": self.retx,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Packet":
        p = cls(d["id"], d["frame_id"], d["size"], d["enqueue_us"], d["slot"], d["retx"])
        p.deliver_us = d["deliver_us"]
        p.drop_cause = DropCause(d["drop"]) if d["drop"] else None
        return p

    def __repr__(self):
        return f"Packet(id={self.id}, frame={self.frame_id}, size={self.size_bytes}, enq={self.enqueue_us})"


class LinkState:
    """Bottleneck link: FIFO queue served at the trace's piecewise bandwidth.

    ``queue_capacity_packets`` bounds the packets waiting behind the one
    being serialized.
    """

    def __init__(self, trace: NetworkTrace, rng_seed: int = 0, queue_capacity_packets: int | None = None,
                 owd_ms: float | None = None, random_loss_rate: float | None = None):
        self.trace = trace
        self.queue_capacity_packets = (
            trace.queue_capacity_packets if queue_capacity_packets is None else queue_capacity_packets
        )
        self.owd_us = int(round((trace.owd_ms if owd_ms is None else owd_ms) * US_PER_MS))
        self.random_loss_rate = trace.random_loss_rate if random_loss_rate is None else random_loss_rate
        if not 0 <= self.random_loss_rate <= 1:
            raise ValueError("random_loss_rate must lie in [0, 1]")
        self.rng = random.Random(rng_seed)
        self.queue: deque[Packet] = deque()
        self.busy_until_us = 0
        self.head_finish_us: int | None = None
        self.serviced_until_us = 0
        self.max_waiting = 0
        self.n_enqueued = 0
        self.n_departed = 0
        self.n_dropped = 0
        self._seg_start = [int(round(t * 1e6)) for t, _ in trace.breakpoints]
        self._seg_bw = [bw for _, bw in trace.breakpoints]

    @property
    def owd_ms(self) -> float:
        return self.owd_us / US_PER_MS

    @property
    def waiting(self) -> int:
        return max(len(self.queue) - 1, 0)

    def bandwidth_bits_per_us(self, t_us: int) -> float:
        i = _segment_index(self._seg_start, t_us)
        return self._seg_bw[i]

    def finish_time(self, start_us: int, bits: float) -> int:
        """Integrate the piecewise-constant rate from ``start_us`` until ``bits`` are sent."""
        starts, bws = self._seg_start, self._seg_bw
        i = _segment_index(starts, start_us)
        t = float(start_us)
        remaining = float(bits)
        n = len(starts)
        while True:
            bw = bws[i]
            seg_end = starts[i + 1] if i + 1 < n else math.inf
            if bw > 0:
                need = remaining / bw
                if t + need <= seg_end:
                    return int(math.floor(t + need + 0.5))
                remaining -= (seg_end - t) * bw
            elif seg_end == math.inf:
                return NEVER
            t = seg_end
            i += 1


def _segment_index(starts: list[int], t_us: int) -> int:
    # linear scan from the end is fine for short traces, bisect for long ones
    lo, hi = 0, len(starts)
    while lo < hi:
        mid = (lo + hi) // 2
        if starts[mid] <= t_us:
            lo = mid + 1
        else:
            hi = mid
    return max(lo - 1, 0)


def service_link(link: LinkState, until_us: int) -> list[Packet]:
    """Depart every packet whose serialization completes by ``until_us``.

    Returns the departed packets in FIFO order with ``deliver_us`` set to
    departure plus the one-way propagation delay.
    """
    if until_us < link.serviced_until_us:
        raise ValueError(f"service time went backwards: {until_us} < {link.serviced_until_us}")
    out = []
    q = link.queue
    while q:
        head = q[0]
        if link.head_finish_us is None:
            start = max(link.busy_until_us, head.enqueue_us)
            link.head_finish_us = link.finish_time(start, head.size_bytes * 8)
        finish = link.head_finish_us
        if finish > until_us:
            break
        q.popleft()
        head.depart_us = finish
        head.deliver_us = finish + link.owd_us
        link.busy_until_us = finish
        link.head_finish_us = None
        link.n_departed += 1
        out.append(head)
    link.serviced_until_us = until_us
    return out


def enqueue_packet(link: LinkState, pkt: Packet, now_us: int) -> EnqueueResult:
    """Admit ``pkt`` at ``now_us``. Random loss is drawn before queue admission.

    The link must already be serviced up to ``now_us`` so that the queue
    occupancy is current.
    """
    if link.serviced_until_us < now_us:
        raise ValueError("service the link up to now before enqueueing")
    pkt.enqueue_us = now_us
    if link.rng.random() < link.random_loss_rate:
        pkt.drop_cause = DropCause.RANDOM_LOSS
        link.n_dropped += 1
        return EnqueueResult.DROPPED_RANDOM
    if link.queue and len(link.queue) - 1 >= link.queue_capacity_packets:
        pkt.drop_cause = DropCause.QUEUE_OVERFLOW
        link.n_dropped += 1
        return EnqueueResult.DROPPED_QUEUE
    link.queue.append(pkt)
    link.n_enqueued += 1
    if link.waiting > link.max_waiting:
        link.max_waiting = link.waiting
    return EnqueueResult.QUEUED


# -- feedback ---------------------------------------------------------------

@dataclass
class FrameFeedback:
    frame_id: int
    bitrate_kbps: float
    quality_db: float
    quality_norm: float
    latency_ms: float
    loss_rate: float


@dataclass
class FeedbackReport:
    """Receiver statistics for one feedback window ``[start, end)``.

    The sender fills ``packets_sent``/``bytes_sent_in_window`` (what it sent
    since the previous report arrived) when the report reaches it.
    """

    window_start_ms: float
    window_end_ms: float
    acked_packet_ids: list[int] = field(default_factory=list)
    rtt_samples_ms: list[float] = field(default_factory=list)
    send_times_ms: list[float] = field(default_factory=list)
    bytes_acked: int = 0
    lost_packet_ids: list[int] = field(default_factory=list)
    decoded_frames: list[FrameFeedback] = field(default_factory=list)
    arrival_ms: float = 0.0
    packets_sent: int = 0
    bytes_sent_in_window: int = 0

    @property
    def duration_ms(self) -> float:
        return self.window_end_ms - self.window_start_ms

    @property
    def packets_acked(self) -> int:
        return len(self.acked_packet_ids)

    @property
    def throughput_kbps(self) -> float:
        return self.bytes_acked * 8 / self.duration_ms

    @property
    def loss_rate(self) -> float:
        n = len(self.lost_packet_ids) + len(self.acked_packet_ids)
        return len(self.lost_packet_ids) / n if n else 0.0

    @property
    def mean_rtt_ms(self) -> float | None:
        s = self.rtt_samples_ms
        return sum(s) / len(s) if s else None


# -- controller interface ---------------------------------------------------

class Mode(str, enum.Enum):
    RL = "RL"
    FALLBACK = "FALLBACK"
    RULE = "RULE"
    ORACLE = "ORACLE"


@dataclass(frozen=True)
class ControllerDecision:
    rate_kbps: float
    mode: Mode
    timestamp_ms: float


@dataclass(frozen=True)
class SwitchEvent:
    timestamp_ms: float
    from_mode: Mode
    to_mode: Mode


class Controller(Protocol):
    name: str

    def start(self, trace: NetworkTrace, owd_ms: float) -> ControllerDecision: ...

    def on_feedback(self, report: FeedbackReport, now_ms: float) -> ControllerDecision: ...

    def frame_rate(self, now_ms: float) -> float: ...


# -- session log ------------------------------------------------------------

@dataclass
class FrameRecord:
    frame_id: int
    encode_ms: float
    bitrate_kbps: float
    n_packets: int
    deadline_ms: float
    decode_ms: float | None = None
    loss_rate: float = 0.0
    quality_db: float = 0.0

    CSV_COLUMNS = ("frame_id", "encode_ms", "decode_ms", "bitrate_kbps", "loss_rate", "quality_db")


@dataclass
class SessionLog:
    duration_s: float
    owd_ms: float
    packets: list[Packet] = field(default_factory=list)
    frames: list[FrameRecord] = field(default_factory=list)
    decisions: list[ControllerDecision] = field(default_factory=list)
    rewards: list[tuple[float, float]] = field(default_factory=list)
    switches: list[SwitchEvent] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    end_ms: float = 0.0

    def counts(self, at_ms: float | None = None) -> dict[str, int]:
        """Packet accounting at a checkpoint (default: end of the run)."""
        t_us = int(round((self.end_ms if at_ms is None else at_ms) * US_PER_MS))
        sent = delivered = dropped = 0
        for p in self.packets:
            if p.enqueue_us > t_us:
                continue
            sent += 1
            if p.drop_cause is not None:
                dropped += 1
            elif p.deliver_us is not None and p.deliver_us <= t_us:
                delivered += 1
        return {"sent": sent, "delivered": delivered, "dropped": dropped,
                "in_flight": sent - delivered - dropped}

    # serialization
    def to_ndjson(self) -> str:
        buf = io.StringIO()
        head = {"type": "session", "duration_s": self.duration_s, "owd_ms": self.owd_ms,
                "end_ms": self.end_ms, "meta": self.meta}
        buf.write(json.dumps(head, sort_keys=True) + "\n")
        for p in self.packets:
            buf.write(json.dumps({"type": "packet", **p.to_dict()}, sort_keys=True) + "\n")
        for f in self.frames:
            buf.write(json.dumps({"type": "frame", **f.__dict__}, sort_keys=True) + "\n")
        for d in self.decisions:
            buf.write(json.dumps({"type": "decision", "t_ms": d.timestamp_ms, "rate_kbps": d.rate_kbps,
                                  "mode": d.mode.value}, sort_keys=True) + "\n")
        for t, r in self.rewards:
            buf.write(json.dumps({"type": "reward", "t_ms": t, "reward": r}) + "\n")
        for s in self.switches:
            buf.write(json.dumps({"type": "switch", "t_ms": s.timestamp_ms, "from": s.from_mode.value,
                                  "to": s.to_mode.value}, sort_keys=True) + "\n")
        return buf.getvalue()

    @classmethod
    def from_ndjson(cls, text: str) -> "SessionLog":
        log = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            ev = json.loads(line)
            kind = ev.pop("type")
            if kind == "session":
                log = cls(duration_s=ev["duration_s"], owd_ms=ev["owd_ms"], meta=ev["meta"], end_ms=ev["end_ms"])
            elif log is None:
                raise ValueError(f"line {lineno}: event before session header")
            elif kind == "packet":
                log.packets.append(Packet.from_dict(ev))
            elif kind == "frame":
                log.frames.append(FrameRecord(**ev))
            elif kind == "decision":
                log.decisions.append(ControllerDecision(ev["rate_kbps"], Mode(ev["mode"]), ev["t_ms"]))
            elif kind == "reward":
                log.rewards.append((ev["t_ms"], ev["reward"]))
            elif kind == "switch":
                log.switches.append(SwitchEvent(ev["t_ms"], Mode(ev["from"]), Mode(ev["to"])))
            else:
                raise ValueError(f"line {lineno}: unknown event type {kind!r}")
        if log is None:
            raise ValueError("empty session stream")
        return log

    def frames_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(FrameRecord.CSV_COLUMNS)
        for f in self.frames:
            w.writerow([f.frame_id, f"{f.encode_ms:.3f}",
                        "" if f.decode_ms is None else f"{f.decode_ms:.3f}",
                        f"{f.bitrate_kbps:.3f}", f"{f.loss_rate:.6f}", f"{f.quality_db:.6f}"])
        return buf.getvalue()

    def write(self, directory: str | Path, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        ev = directory / f"{stem}.ndjson"
        fr = directory / f"{stem}.frames.csv"
        ev.write_text(self.to_ndjson())
        fr.write_text(self.frames_csv())
        return ev, fr


# -- session ----------------------------------------------------------------

# event kinds, ordered by priority at equal timestamps
_WINDOW, _DEADLINE, _FEEDBACK, _FRAME, _SEND, _RETX = range(6)


class _FrameState:
    __slots__ = ("frame", "record", "arrivals", "n_arrived", "last_arrival_us", "rtt_sum", "rtt_n")

    def __init__(self, frame: EncodedFrame, record: FrameRecord):
        self.frame = frame
        self.record = record
        self.arrivals: list[int | None] = [None] * frame.n_packets
        self.n_arrived = 0
        self.last_arrival_us = 0
        self.rtt_sum = 0.0
        self.rtt_n = 0


class Session:
    """One simulated video call. Use :func:`run_session` unless stepping manually."""

    def __init__(self, trace: NetworkTrace, controller, codec: CodecSession | CodecProfile,
                 duration_s: float | None = None, seed: int = 0, drain_s: float = 1.0,
                 deadline_slack_ms: float | None = None):
        if duration_s is None:
            duration_s = trace.duration_s
        if duration_s <= 0:
            raise ValueError("duration must be positive")
        if isinstance(codec, CodecProfile):
            codec = CodecSession(codec)
        self.trace = trace
        self.controller = controller
        self.codec = codec
        self.duration_us = int(round(duration_s * 1e6))
        self.end_us = self.duration_us + int(round(drain_s * 1e6))
        self.link = LinkState(trace, rng_seed=seed)
        self.owd_us = self.link.owd_us
        self.rtt_us = 2 * self.owd_us
        self.slack_ms = codec.deadline_slack_ms if deadline_slack_ms is None else deadline_slack_ms
        self.nvc = codec.mode == "nvc"
        self.log = SessionLog(duration_s=duration_s, owd_ms=self.owd_us / US_PER_MS,
                              meta={"trace": trace.label, "profile": codec.profile.name,
                                    "codec_mode": codec.mode, "controller": getattr(controller, "name", ""),
                                    "seed": seed})
        self._events: list = []
        self._seq = 0
        self._next_id = 0
        self._arrivals: deque[Packet] = deque()
        self._frames: dict[int, _FrameState] = {}
        self._pending: deque[_FrameState] = deque()
        self._prev_decode_us = 0
        self._highest_seen = -1
        self._window: FeedbackReport = FeedbackReport(0.0, FEEDBACK_INTERVAL_MS)
        self._sent_pkts = 0
        self._sent_bytes = 0
        self._last_rtt_ms = float(2 * self.owd_us) / US_PER_MS
        self._rate_kbps = 0.0

    def _push(self, t_us: int, kind: int, data=None) -> None:
        self._seq += 1
        heapq.heappush(self._events, (t_us, kind, self._seq, data))

    # -- link / receiver plumbing
    def _advance(self, now_us: int) -> None:
        if now_us > self.link.serviced_until_us:
            self._arrivals.extend(service_link(self.link, now_us))

    def _receive(self, now_us: int) -> None:
        """Hand packets delivered strictly before ``now_us`` to the receiver."""
        arr = self._arrivals
        win = self._window
        owd_ms = self.owd_us / US_PER_MS
        while arr and arr[0].deliver_us < now_us:
            p = arr.popleft()
            if p.id > self._highest_seen + 1:
                win.lost_packet_ids.extend(range(self._highest_seen + 1, p.id))
            if p.id > self._highest_seen:
                self._highest_seen = p.id
            rtt = (p.deliver_us - p.enqueue_us) / US_PER_MS + owd_ms
            win.acked_packet_ids.append(p.id)
            win.rtt_samples_ms.append(rtt)
            win.send_times_ms.append(p.enqueue_us / US_PER_MS)
            win.bytes_acked += p.size_bytes
            fs = self._frames.get(p.frame_id)
            if fs is not None and fs.arrivals[p.slot] is None:
                fs.arrivals[p.slot] = p.deliver_us
                fs.n_arrived += 1
                fs.last_arrival_us = max(fs.last_arrival_us, p.deliver_us)
                fs.rtt_sum += rtt
                fs.rtt_n += 1

    def _decode_ready(self, now_us: int) -> None:
        pend = self._pending
        while pend:
            fs = pend[0]
            frame, rec = fs.frame, fs.record
            deadline_us = int(round(frame.decode_deadline_ms * US_PER_MS))
            complete = fs.n_arrived == frame.n_packets
            if complete and (not self.nvc or fs.last_arrival_us < deadline_us):
                t = max(fs.last_arrival_us, self._prev_decode_us)
            elif self.nvc and now_us >= deadline_us:
                t = max(deadline_us, self._prev_decode_us)
            else:
                break
            pend.popleft()
            loss = _late_fraction(fs.arrivals, deadline_us)
            rec.loss_rate = loss
            if self.nvc:
                rec.quality_db = self.codec.decode_partial(frame, loss)
                # a frame with nothing received never reaches the display
                rec.decode_ms = t / US_PER_MS if fs.n_arrived else None
            else:
                rec.quality_db = self.codec.profile.quality(frame.target_bitrate_kbps, 0.0)
                rec.decode_ms = t / US_PER_MS
            if rec.decode_ms is not None:
                self._prev_decode_us = t
            latency = fs.rtt_sum / fs.rtt_n if fs.rtt_n else self._last_rtt_ms
            self._window.decoded_frames.append(FrameFeedback(
                frame.frame_id, frame.target_bitrate_kbps, rec.quality_db,
                self.codec.profile.normalize(rec.quality_db), latency, loss))
            del self._frames[frame.frame_id]

    # -- sender
    def _send(self, pkt: Packet, now_us: int) -> None:
        self._advance(now_us)
        self.log.packets.append(pkt)
        self._sent_pkts += 1
        self._sent_bytes += pkt.size_bytes
        res = enqueue_packet(self.link, pkt, now_us)
        if res is not EnqueueResult.QUEUED and not self.nvc:
            # receiver NACKs the gap; sender retransmits one RTT after the send
            self._push(now_us + max(self.rtt_us, 1), _RETX, pkt)

    def _new_packet(self, frame_id: int, size: int, t_us: int, slot: int, retx: bool = False) -> Packet:
        p = Packet(self._next_id, frame_id, size, t_us, slot, retx)
        self._next_id += 1
        return p

    def _encode_frame(self, now_us: int) -> None:
        fid = now_us // FRAME_INTERVAL_US
        now_ms = now_us / US_PER_MS
        rate = self.controller.frame_rate(now_ms)
        deadline = decode_deadline_ms(now_ms, self.owd_us / US_PER_MS, self.slack_ms)
        frame = EncodedFrame(fid, rate, now_ms, deadline)
        rec = FrameRecord(fid, now_ms, rate, frame.n_packets, deadline)
        self.log.frames.append(rec)
        fs = _FrameState(frame, rec)
        self._frames[fid] = fs
        self._pending.append(fs)
        spacing = FRAME_INTERVAL_US / frame.n_packets
        for k, size in enumerate(frame.packet_sizes()):
            self._push(now_us + int(k * spacing), _SEND, (fid, size, k))
        self._push(int(round(deadline * US_PER_MS)), _DEADLINE, None)

    def _decide(self, decision: ControllerDecision) -> None:
        self._rate_kbps = decision.rate_kbps
        self.log.decisions.append(decision)

    def run(self) -> SessionLog:
        ctrl = self.controller
        self._decide(ctrl.start(self.trace, self.owd_us / US_PER_MS))
        for t in range(0, self.duration_us, FRAME_INTERVAL_US):
            self._push(t, _FRAME)
        self._push(FEEDBACK_INTERVAL_US, _WINDOW)

        events = self._events
        end = self.end_us
        popped = 0
        while events:
            now, kind, _, data = heapq.heappop(events)
            if now > end:
                break
            popped += 1
            if kind == _SEND:
                fid, size, slot = data
                self._send(self._new_packet(fid, size, now, slot), now)
            elif kind == _FRAME:
                self._encode_frame(now)
            elif kind == _WINDOW:
                self._advance(now)
                self._receive(now)
                self._decode_ready(now)
                report = self._window
                if report.rtt_samples_ms:
                    self._last_rtt_ms = report.rtt_samples_ms[-1]
                nxt = now + FEEDBACK_INTERVAL_US
                self._window = FeedbackReport(now / US_PER_MS, nxt / US_PER_MS)
                arrive = now + self.owd_us
                if arrive < self.duration_us:
                    self._push(arrive, _FEEDBACK, report)
                if nxt <= end:
                    self._push(nxt, _WINDOW)
            elif kind == _FEEDBACK:
                report = data
                report.arrival_ms = now / US_PER_MS
                report.packets_sent = self._sent_pkts
                report.bytes_sent_in_window = self._sent_bytes
                self._sent_pkts = self._sent_bytes = 0
                self._decide(ctrl.on_feedback(report, now / US_PER_MS))
            elif kind == _DEADLINE:
                self._advance(now)
                self._receive(now)
                self._decode_ready(now)
            elif kind == _RETX:
                orig = data
                fs = self._frames.get(orig.frame_id)
                if fs is not None and fs.arrivals[orig.slot] is None:
                    self._send(self._new_packet(orig.frame_id, orig.size_bytes, now, orig.slot, True), now)

        self._advance(end)
        self._receive(end + 1)
        self._decode_ready(end)
        floor = self.codec.profile.q_min_db
        for fs in self._pending:
            fs.record.loss_rate = _late_fraction(fs.arrivals, int(round(fs.frame.decode_deadline_ms * US_PER_MS)))
            fs.record.quality_db = floor
        self._pending.clear()
        self.log.end_ms = end / US_PER_MS
        finish = getattr(ctrl, "finish", None)
        if finish is not None:
            finish(end / US_PER_MS)
        self.log.rewards = list(getattr(ctrl, "reward_trace", []))
        self.log.switches = list(getattr(ctrl, "switch_events", []))
        self.log.meta["max_queue_waiting"] = self.link.max_waiting
        # scheduled events plus per-packet departures and drops on the link
        self.log.meta["events"] = popped + self.link.n_departed + self.link.n_dropped
        return self.log


def _late_fraction(arrivals: list[int | None], deadline_us: int) -> float:
    late = sum(1 for t in arrivals if t is None or t >= deadline_us)
    return late / len(arrivals)


def run_session(trace: NetworkTrace, controller, codec: CodecSession | CodecProfile,
                duration_s: float | None = None, seed: int = 0, **kw) -> SessionLog:
    """Simulate one session and return its complete log."""
    if not trace.breakpoints:
        raise ValueError("empty trace")
    return Session(trace, controller, codec, duration_s, seed, **kw).run()


def check_invariants(log: SessionLog, queue_capacity: int, checkpoints: Iterable[float] = ()) -> None:
    """Assert conservation, FIFO, delay floor and the queue bound on a finished log."""
    owd_us = int(round(log.owd_ms * US_PER_MS))
    for t in list(checkpoints) + [None]:
        c = log.counts(t)
        assert c["in_flight"] >= 0, c
    delivered = [p for p in log.packets if p.deliver_us is not None]
    for p in delivered:
        assert p.drop_cause is None
        assert p.deliver_us >= p.enqueue_us + owd_us
    by_enqueue = sorted(delivered, key=lambda p: (p.enqueue_us, p.id))
    for a, b in zip(by_enqueue, by_enqueue[1:]):
        assert a.deliver_us <= b.deliver_us
    assert log.meta.get("max_queue_waiting", 0) <= queue_capacity
