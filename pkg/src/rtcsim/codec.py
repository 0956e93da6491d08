"""Video codec models driven by quality profiles.

The loss-tolerant (``nvc``) mode decodes whatever part of a frame arrived by
its deadline and looks the quality up on a (bitrate, frame-loss) grid.  Lost
data also damages the decoder's reference state, which costs quality on later
frames until the next state synchronization.  The ``traditional`` mode only
decodes complete frames and always reaches the loss-free quality.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

log = logging.getLogger(__name__)

FPS = 25
FRAME_INTERVAL_MS = 1000.0 / FPS
MTU_BYTES = 1200
SYNC_INTERVAL_FRAMES = 10
DEFAULT_DEADLINE_SLACK_MS = 60.0
DAMAGE_DECAY = 0.9
DAMAGE_PENALTY_DB = 3.0

MODES = ("nvc", "traditional")


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class CodecProfile:
    """Quality surface ``quality_db[i][j]`` at ``bitrates_kbps[i]``, ``losses[j]``."""

    mode: str
    bitrates_kbps: tuple[float, ...]
    losses: tuple[float, ...]
    quality_db: tuple[tuple[float, ...], ...]
    name: str = ""
    fps: int = FPS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ProfileError(f"unknown codec mode {self.mode!r}")
        rates, losses, grid = self.bitrates_kbps, self.losses, self.quality_db
        if len(rates) < 2 or len(losses) < 2:
            raise ProfileError("profile needs at least two bitrates and two loss levels")
        if any(b <= a for a, b in zip(rates, rates[1:])) or rates[0] <= 0:
            raise ProfileError("bitrates must be positive and strictly increasing")
        if any(b <= a for a, b in zip(losses, losses[1:])):
            raise ProfileError("losses must be strictly increasing")
        if losses[0] != 0 or losses[-1] > 1:
            raise ProfileError("loss axis must start at 0 and stay within [0, 1]")
        if len(grid) != len(rates) or any(len(row) != len(losses) for row in grid):
            raise ProfileError("quality grid shape does not match the axes")
        if not all(math.isfinite(q) for row in grid for q in row):
            raise ProfileError("quality grid contains non-finite values")
        object.__setattr__(self, "_log_rates", [math.log(r) for r in rates])
        flat = [q for row in grid for q in row]
        object.__setattr__(self, "_q_lo", min(flat))
        object.__setattr__(self, "_q_hi", max(flat))
        object.__setattr__(self, "_warned", False)

    @property
    def q_min_db(self) -> float:
        return self._q_lo  # type: ignore[attr-defined]

    @property
    def q_max_db(self) -> float:
        return self._q_hi  # type: ignore[attr-defined]

    def row_bounds(self, bitrate_kbps: float) -> tuple[float, float]:
        """(worst, best) quality at this bitrate: full loss and zero loss."""
        return self.quality(bitrate_kbps, self.losses[-1]), self.quality(bitrate_kbps, 0.0)

    def quality(self, bitrate_kbps: float, loss: float) -> float:
        """Bilinear interpolation on (log bitrate, loss); clamps at grid edges."""
        rates = self.bitrates_kbps
        if bitrate_kbps < rates[0] or bitrate_kbps > rates[-1]:
            if not self._warned:  # type: ignore[attr-defined]
                log.warning("bitrate %.1f kbps outside profile %r grid; clamping", bitrate_kbps, self.name)
                object.__setattr__(self, "_warned", True)
            bitrate_kbps = min(max(bitrate_kbps, rates[0]), rates[-1])
        loss = min(max(loss, 0.0), self.losses[-1])
        x = math.log(bitrate_kbps)
        xs = self._log_rates  # type: ignore[attr-defined]
        i = min(max(bisect.bisect_right(xs, x) - 1, 0), len(xs) - 2)
        j = min(max(bisect.bisect_right(self.losses, loss) - 1, 0), len(self.losses) - 2)
        tx = (x - xs[i]) / (xs[i + 1] - xs[i])
        ty = (loss - self.losses[j]) / (self.losses[j + 1] - self.losses[j])
        g = self.quality_db
        top = g[i][j] * (1 - ty) + g[i][j + 1] * ty
        bot = g[i + 1][j] * (1 - ty) + g[i + 1][j + 1] * ty
        return top * (1 - tx) + bot * tx

    def normalize(self, quality_db: float) -> float:
        """Map a quality onto [0, 1] using the profile's worst and best frames."""
        span = self.q_max_db - self.q_min_db
        return (quality_db - self.q_min_db) / span if span > 0 else 1.0

    def monotonicity_violations(self, tol: float = 0.0) -> list[tuple[int, int, str]]:
        """Grid cells where quality rises with loss or falls with bitrate."""
        bad = []
        g = self.quality_db
        for i in range(len(g)):
            for j in range(len(g[i])):
                if j + 1 < len(g[i]) and g[i][j + 1] > g[i][j] + tol:
                    bad.append((i, j, "loss"))
                if i + 1 < len(g) and g[i + 1][j] < g[i][j] - tol:
                    bad.append((i, j, "bitrate"))
        return bad

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "name": self.name,
            "bitrates_kbps": list(self.bitrates_kbps),
            "losses": list(self.losses),
            "quality_db": [list(r) for r in self.quality_db],
        }


def profile_from_dict(d: dict) -> CodecProfile:
    missing = {"mode", "bitrates_kbps", "losses", "quality_db"} - set(d)
    if missing:
        raise ProfileError(f"profile missing fields: {sorted(missing)}")
    try:
        prof = CodecProfile(
            mode=str(d["mode"]),
            bitrates_kbps=tuple(float(r) for r in d["bitrates_kbps"]),
            losses=tuple(float(x) for x in d["losses"]),
            quality_db=tuple(tuple(float(q) for q in row) for row in d["quality_db"]),
            name=str(d.get("name", "")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProfileError):
            raise
        raise ProfileError(f"malformed profile: {exc}") from None
    if prof.mode == "nvc" and prof.monotonicity_violations():
        log.warning("nvc profile %r is not monotone in bitrate/loss", prof.name)
    return prof


def save_profile(profile: CodecProfile, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=1) + "\n")


def load_profile(path: str | os.PathLike) -> CodecProfile:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: {exc}") from None
    if not data.get("name"):
        data["name"] = path.stem
    return profile_from_dict(data)


# -- synthetic profiles -----------------------------------------------------

DEFAULT_BITRATES = (200, 300, 400, 500, 600, 800, 1000, 1250, 1500, 2000, 2500, 3000, 4000, 5000, 6000)
DEFAULT_LOSSES = tuple(round(0.05 * k, 2) for k in range(21))


def synthetic_nvc_profile(
    quality_at_1mbps_db: float = 14.0,
    rate_slope_db: float = 4.0,
    floor_db: float = 4.0,
    loss_exponent: float = 2.0,
    name: str = "nvc-default",
    bitrates: Sequence[float] = DEFAULT_BITRATES,
    losses: Sequence[float] = DEFAULT_LOSSES,
) -> CodecProfile:
    """Grid with log-rate loss-free quality and a smooth concave drop in loss.

    ``q(R, l) = q0(R) - (q0(R) - floor) * l**loss_exponent`` with
    ``q0(R) = quality_at_1mbps + rate_slope * ln(R / 1000)``.
    """
    grid = []
    for r in bitrates:
        q0 = quality_at_1mbps_db + rate_slope_db * math.log(r / 1000.0)
        if q0 <= floor_db:
            raise ProfileError(f"loss-free quality at {r} kbps is below the floor")
        grid.append(tuple(q0 - (q0 - floor_db) * l**loss_exponent for l in losses))
    return CodecProfile(
        mode="nvc",
        bitrates_kbps=tuple(float(r) for r in bitrates),
        losses=tuple(losses),
        quality_db=tuple(grid),
        name=name,
    )


def default_nvc_profile() -> CodecProfile:
    return synthetic_nvc_profile()


def traditional_profile_from(nvc: CodecProfile, name: str | None = None) -> CodecProfile:
    """Same loss-free qualities; any loss drops to the floor (cannot decode)."""
    floor = nvc.q_min_db
    grid = tuple(tuple([row[0]] + [floor] * (len(row) - 1)) for row in nvc.quality_db)
    return CodecProfile(
        mode="traditional",
        bitrates_kbps=nvc.bitrates_kbps,
        losses=nvc.losses,
        quality_db=grid,
        name=name or nvc.name.replace("nvc", "trad"),
    )


def profile_family(count: int, mode: str = "nvc") -> list[CodecProfile]:
    """Deterministic set of content-like variations around the default profile."""
    variants = [
        (14.0, 4.0, 4.0, 2.0),
        (12.0, 3.6, 3.5, 1.7),
        (15.5, 4.4, 5.0, 2.3),
        (13.0, 4.2, 4.5, 1.9),
        (16.0, 3.8, 5.5, 2.1),
        (11.5, 4.6, 3.0, 1.8),
        (14.5, 3.4, 4.0, 2.4),
        (13.5, 4.8, 3.5, 2.0),
    ]
    out = []
    for k in range(count):
        q, s, f, p = variants[k % len(variants)]
        bump = 0.25 * (k // len(variants))
        prof = synthetic_nvc_profile(q + bump, s, f, p, name=f"nvc-{k}")
        out.append(prof if mode == "nvc" else traditional_profile_from(prof, name=f"trad-{k}"))
    return out


# -- frames and decoding ----------------------------------------------------

@dataclass
class EncodedFrame:
    frame_id: int
    target_bitrate_kbps: float
    encode_ms: float
    decode_deadline_ms: float
    fps: int = FPS
    mtu: int = MTU_BYTES
    size_bytes: int = field(init=False)
    n_packets: int = field(init=False)

    def __post_init__(self):
        self.size_bytes = max(int(round(self.target_bitrate_kbps * 1000 / 8 / self.fps)), 1)
        self.n_packets = math.ceil(self.size_bytes / self.mtu)

    def packet_sizes(self) -> list[int]:
        sizes = [self.mtu] * (self.n_packets - 1)
        sizes.append(self.size_bytes - self.mtu * (self.n_packets - 1))
        return sizes


def decode_deadline_ms(encode_ms: float, owd_ms: float, slack_ms: float = DEFAULT_DEADLINE_SLACK_MS) -> float:
    return encode_ms + FRAME_INTERVAL_MS + owd_ms + slack_ms


def frame_loss_rate(frame: EncodedFrame, arrivals: Sequence[float | None]) -> float:
    """Fraction of the frame's packets not delivered strictly before its deadline.

    ``arrivals`` holds one delivery time (ms) per packet, ``None`` for drops.
    """
    if len(arrivals) != frame.n_packets:
        raise ValueError(f"expected {frame.n_packets} arrival entries, got {len(arrivals)}")
    late = sum(1 for t in arrivals if t is None or t >= frame.decode_deadline_ms)
    return late / frame.n_packets


@dataclass
class ReferenceState:
    damage: float = 0.0
    frames_since_sync: int = 0


def decode_nvc(
    profile: CodecProfile,
    frame: EncodedFrame,
    loss: float,
    ref: ReferenceState,
    decay: float = DAMAGE_DECAY,
    penalty_db: float = DAMAGE_PENALTY_DB,
    sync_interval: int = SYNC_INTERVAL_FRAMES,
) -> tuple[float, ReferenceState]:
    """Quality of a partially received frame and the updated reference state."""
    if profile.mode != "nvc":
        raise ProfileError("decode_nvc needs an nvc profile")
    base = profile.quality(frame.target_bitrate_kbps, loss)
    quality = max(base - penalty_db * ref.damage, profile.q_min_db)
    damage = min(max(ref.damage * decay + loss, 0.0), 1.0)
    since = ref.frames_since_sync + 1
    if since >= sync_interval:
        # state sync only needed when something was lost since the last one
        damage = 0.0
        since = 0
    return quality, ReferenceState(damage, since)


@dataclass(frozen=True)
class Decoded:
    quality_db: float
    decode_ms: float


class Pending:
    """Frame still waiting for missing packets."""

    def __repr__(self):
        return "Pending"


PENDING = Pending()


def decode_traditional(
    profile: CodecProfile, frame: EncodedFrame, arrivals: Sequence[float | None]
) -> Decoded | Pending:
    """Complete frames decode at their last arrival; incomplete ones stay pending.

    ``arrivals`` is per packet slot, holding the earliest delivery of the
    original or any retransmission.
    """
    if any(t is None for t in arrivals):
        return PENDING
    return Decoded(profile.quality(frame.target_bitrate_kbps, 0.0), max(arrivals))  # type: ignore[arg-type]


@dataclass
class CodecSession:
    """A profile plus the decoder state of one simulated session."""

    profile: CodecProfile
    ref: ReferenceState = field(default_factory=ReferenceState)
    decay: float = DAMAGE_DECAY
    penalty_db: float = DAMAGE_PENALTY_DB
    deadline_slack_ms: float = DEFAULT_DEADLINE_SLACK_MS

    @property
    def mode(self) -> str:
        return self.profile.mode

    def decode_partial(self, frame: EncodedFrame, loss: float) -> float:
        q, self.ref = decode_nvc(self.profile, frame, loss, self.ref, self.decay, self.penalty_db)
        return q

    def reset(self) -> None:
        self.ref = ReferenceState()
