import math
import random

import pytest

from rtcsim.codec import default_nvc_profile
from rtcsim.controllers import GccLike, OracleController
from rtcsim.metrics import (
    QOE_COLUMNS, RESULT_COLUMNS, count_stalls, p98, read_results, session_qoe, ssim_db, summarize,
    write_results,
)
from rtcsim.simcore import DropCause, FrameRecord, Packet, SessionLog, run_session
from rtcsim.traces import TraceGenParams, constant_trace, generate_trace


def test_ssim_db_values():
    assert abs(ssim_db(0.9) - 10.0) <= 1e-9
    assert abs(ssim_db(0.99) - 20.0) <= 1e-9
    assert ssim_db(0.0) == 0.0
    for bad in (1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            ssim_db(bad)


def test_p98_examples():
    assert p98(list(range(1, 101))) == 98
    assert p98([50.0] * 7) == 50.0
    assert p98([10, 20]) == 20
    with pytest.raises(ValueError):
        p98([])


def test_p98_matches_sort_oracle():
    rng = random.Random(98)
    for _ in range(1000):
        n = rng.randint(1, 300)
        xs = [rng.uniform(0, 1000) if rng.random() < 0.8 else float(rng.randint(0, 5)) for _ in range(n)]
        s = sorted(xs)
        rank = max(1, math.ceil(0.98 * n))
        assert p98(xs) == s[rank - 1]


def test_stall_examples():
    rate, ratio = count_stalls([0, 40, 300], 1.0)
    assert rate == 1.0
    assert ratio == pytest.approx(0.06, abs=1e-12)
    assert count_stalls([40.0 * k for k in range(100)], 4.0) == (0.0, 0.0)
    assert count_stalls([0.0, 200.0, 400.0], 1.0) == (0.0, 0.0)
    assert count_stalls([5.0], 1.0) == (0.0, 0.0)


def _hand_log():
    log = SessionLog(duration_s=0.12, owd_ms=10.0)
    # three frames, one packet each except frame 1 which has two
    log.frames = [
        FrameRecord(0, 0.0, 1000.0, 1, 110.0, decode_ms=30.0, loss_rate=0.0, quality_db=14.0),
        FrameRecord(1, 40.0, 1000.0, 2, 150.0, decode_ms=150.0, loss_rate=0.5, quality_db=9.0),
        FrameRecord(2, 80.0, 1000.0, 1, 190.0, decode_ms=None, loss_rate=1.0, quality_db=4.0),
    ]
    pkts = [Packet(0, 0, 1000, 0, 0), Packet(1, 1, 1000, 40_000, 0), Packet(2, 1, 500, 45_000, 1),
            Packet(3, 2, 800, 80_000, 0)]
    pkts[0].deliver_us = 30_000
    pkts[1].deliver_us = 70_000
    pkts[2].deliver_us = 160_000  # after the frame's 150 ms deadline and the 120 ms horizon
    pkts[3].drop_cause = DropCause.QUEUE_OVERFLOW
    log.packets = pkts
    return log


def test_hand_built_log():
    q = session_qoe(_hand_log())
    assert q.frames == 3
    assert q.mean_quality_db == pytest.approx((14 + 9 + 4) / 3)
    # decoded frames only: delays 30 and 110
    assert q.p98_frame_delay_ms == 110.0
    assert q.stalls_per_sec == 0.0
    # 2000 bytes delivered inside the 120 ms horizon
    assert q.tput_mbps == pytest.approx(2000 * 8 / 0.12 / 1e6)
    assert q.p98_packet_delay_ms == 115.0
    # slots: (0,0) ok, (1,0) ok, (1,1) late, (2,0) dropped
    assert q.loss_pct == pytest.approx(50.0)
    assert q.net_loss_pct == pytest.approx(25.0)


def test_empty_log_is_an_error():
    with pytest.raises(ValueError):
        session_qoe(SessionLog(duration_s=1.0, owd_ms=10.0))


def test_oracle_constant_trace_qoe():
    q = session_qoe(run_session(constant_trace(3.0), OracleController(), default_nvc_profile()))
    assert q.loss_pct == 0.0
    assert q.tput_mbps == pytest.approx(3.0, rel=0.02)
    assert q.stalls_per_sec == 0.0


def test_results_csv_roundtrip_is_stable(tmp_path):
    rows = []
    for seed in range(3):
        tr = generate_trace(TraceGenParams(duration_s=5.0), seed)
        row = {"controller": "gcc", "trace": tr.label, "profile": "p", "seed": seed}
        row.update(session_qoe(run_session(tr, GccLike(), default_nvc_profile(), seed=seed)).as_row())
        rows.append(row)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert write_results(rows, a) == 3
    back = read_results(a)
    write_results(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert list(back[0]) == list(RESULT_COLUMNS)
    for r0, r1 in zip(rows, back):
        for c in QOE_COLUMNS:
            assert r1[c] == pytest.approx(r0[c], abs=1e-6)
    means = summarize(back)
    assert means["gcc"]["sessions"] == 3


def test_malformed_results_report_line(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text(",".join(RESULT_COLUMNS) + "\n" + ",".join(["x", "t", "p", "0"] + ["1.0"] * 8 + ["oops"]) + "\n")
    with pytest.raises(ValueError, match=":2:"):
        read_results(f)
