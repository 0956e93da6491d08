import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rtcsim.traces import (
    BANDWIDTH_RANGE_MBPS, LOSS_RANGE, MIN_RTT_RANGE_MS, QUEUE_RANGE_PACKETS, NetworkTrace, TraceError,
    TraceGenParams, bandwidth_at, constant_trace, generate_trace, generate_traces, load_trace, save_trace,
    trace_from_dict, trace_to_dict,
)


def test_fixed_interval_equal_to_duration_gives_one_segment():
    p = TraceGenParams(change_interval_s=(30.0, 30.0), duration_s=30.0)
    tr = generate_trace(p, seed=3)
    assert len(tr.breakpoints) == 1
    assert tr.bandwidth_at(0) == tr.bandwidth_at(29.9)


def test_generated_traces_stay_in_range():
    for tr in generate_traces(TraceGenParams(), 1000, seed=5):
        assert all(BANDWIDTH_RANGE_MBPS[0] <= bw <= BANDWIDTH_RANGE_MBPS[1] for bw in tr.bandwidths())
        assert MIN_RTT_RANGE_MS[0] <= tr.min_rtt_ms <= MIN_RTT_RANGE_MS[1]
        assert LOSS_RANGE[0] <= tr.random_loss_rate <= LOSS_RANGE[1]
        assert QUEUE_RANGE_PACKETS[0] <= tr.queue_capacity_packets <= QUEUE_RANGE_PACKETS[1]
        gaps = np.diff(tr.times)
        assert np.all(gaps > 0) and np.all(gaps <= 15.0 + 1e-6)
        assert tr.times[0] == 0


def test_same_seed_same_trace():
    p = TraceGenParams()
    assert generate_trace(p, 17) == generate_trace(p, 17)
    assert generate_trace(p, 17) != generate_trace(p, 18)


def _chi2_uniform(samples, lo, hi, bins=20):
    counts, _ = np.histogram(samples, bins=bins, range=(lo, hi))
    return stats.chisquare(counts).pvalue


def test_marginals_are_uniform():
    traces = generate_traces(TraceGenParams(duration_s=5.0), 10_000, seed=11)
    assert _chi2_uniform([t.min_rtt_ms for t in traces], *MIN_RTT_RANGE_MS) > 0.01
    assert _chi2_uniform([t.random_loss_rate for t in traces], *LOSS_RANGE) > 0.01
    assert _chi2_uniform([t.breakpoints[0][1] for t in traces], *BANDWIDTH_RANGE_MBPS) > 0.01
    q = np.bincount([t.queue_capacity_packets for t in traces], minlength=101)[1:]
    assert stats.chisquare(q).pvalue > 0.01


def test_bandwidth_lookup():
    tr = NetworkTrace(breakpoints=((0.0, 2.0), (5.0, 4.0)), duration_s=10.0)
    assert bandwidth_at(tr, 3.0) == 2.0
    assert bandwidth_at(tr, 5.0) == 4.0
    assert bandwidth_at(tr, 0.0) == 2.0
    c = constant_trace(1.5)
    assert {c.bandwidth_at(t) for t in (0, 7.3, 30)} == {1.5}
    with pytest.raises(TraceError):
        bandwidth_at(tr, 11.0)


def test_mean_bandwidth_integrates_segments():
    tr = NetworkTrace(breakpoints=((0.0, 2.0), (5.0, 4.0)), duration_s=10.0)
    assert tr.mean_bandwidth(4.0, 6.0) == pytest.approx(3.0)


def test_two_line_file(tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("0 2.0\n5 4.0\n")
    tr = load_trace(f)
    assert tr.breakpoints == ((0.0, 2.0), (5.0, 4.0))
    assert tr.label == "t"


def test_empty_and_malformed_files(tmp_path):
    f = tmp_path / "empty.txt"
    f.write_text("")
    with pytest.raises(TraceError):
        load_trace(f)
    f.write_text("0 2.0\n1 x\n")
    with pytest.raises(TraceError, match=":2:"):
        load_trace(f)
    f.write_text("0 2.0\n0 3.0\n")
    with pytest.raises(TraceError, match="not increasing"):
        load_trace(f)


def test_inverted_range_rejected():
    with pytest.raises(TraceError, match="inverted"):
        generate_trace(TraceGenParams(bandwidth_mbps=(3.0, 1.0)), 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), duration=st.floats(1.0, 120.0))
def test_save_load_roundtrip(tmp_path_factory, seed, duration):
    tr = generate_trace(TraceGenParams(duration_s=duration), seed)
    path = tmp_path_factory.mktemp("rt") / "x.txt"
    save_trace(tr, path)
    assert load_trace(path) == tr
    assert trace_from_dict(trace_to_dict(tr)) == tr
    assert math.isclose(tr.duration_s, duration)
