import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from cyberseer import sigproc
from cyberseer.errors import InvalidInputError, StateError, UnsupportedRateError
from cyberseer.telemetry import ChannelSeries


def test_downsample_examples():
    out = sigproc.downsample_mean(ChannelSeries("x", 4, [1, 2, 3, 4]), 1)
    assert out.values.tolist() == [2.5]
    assert out.rate_hz == 1
    const = sigproc.downsample_mean(ChannelSeries("x", 90, np.full(900, 3.25)), 1)
    assert np.all(const.values == 3.25)


def test_downsample_random_block_means(rng):
    x = rng.normal(size=360)
    out = sigproc.downsample_mean(ChannelSeries("x", 90, x), 1).values
    assert out.size == 4
    assert np.max(np.abs(out - oracles.block_means(x.tolist(), 90))) <= 1e-12


def test_downsample_drops_partial_block_and_keeps_mean(rng):
    x = rng.normal(size=95)
    out = sigproc.downsample_mean(ChannelSeries("x", 90, x), 1).values
    assert out.size == 1
    assert abs(out.mean() - x[:90].mean()) <= 1e-12


def test_downsample_rejects_non_integer_ratio():
    with pytest.raises(UnsupportedRateError):
        sigproc.downsample_mean(ChannelSeries("x", 90, np.ones(90)), 4)
    with pytest.raises(UnsupportedRateError):
        sigproc.downsample_mean(ChannelSeries("x", 4, np.ones(8)), 8)


def test_first_difference_examples(rng):
    assert sigproc.first_difference([5.0]).tolist() == [0.0]
    assert sigproc.first_difference([1.0, 3.0, 6.0]).tolist() == [0.0, 2.0, 3.0]
    x = rng.normal(size=100)
    back = np.cumsum(sigproc.first_difference(x)) + x[0]
    assert np.max(np.abs(back - x)) <= 1e-12
    with pytest.raises(InvalidInputError):
        sigproc.first_difference([])
    ch = sigproc.first_difference(ChannelSeries("speed", 1, [1.0, 2.0]))
    assert isinstance(ch, ChannelSeries) and ch.values.tolist() == [0.0, 1.0]


def test_trailing_stats_examples():
    st_ = sigproc.trailing_stats([2.0, 2.0, 2.0, 2.0], 3)
    assert st_.mean.tolist() == [2.0] * 4
    assert st_.std.tolist() == [0.0] * 4
    st_ = sigproc.trailing_stats([1.0, 2.0, 3.0], 3)
    assert st_.min.tolist() == [1, 1, 1]
    assert st_.max.tolist() == [1, 2, 3]
    assert st_.mean.tolist() == [1, 1.5, 2]
    with pytest.raises(InvalidInputError):
        sigproc.trailing_stats([], 3)


def test_trailing_stats_random_length_50(rng):
    x = rng.normal(size=50)
    got = sigproc.trailing_stats(x, 3)
    for g, want in zip(got, oracles.trailing_window(x.tolist(), 3)):
        assert np.max(np.abs(g - np.array(want))) <= 1e-12


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.integers(1, 6))
def test_trailing_stats_ordering(values, w):
    s = sigproc.trailing_stats(values, w)
    assert np.all(s.min <= s.mean) and np.all(s.mean <= s.max)
    assert np.all(s.std >= 0)


def _scripted_decomposition(x, rate=4, med_s=10.0, avg_s=4.0):
    n = len(x)
    mh, ah = int(round(med_s * rate / 2)), int(round(avg_s * rate / 2))
    med = [statistics.median(x[max(0, i - mh) : i + mh + 1]) for i in range(n)]
    scl = [statistics.fmean(med[max(0, i - ah) : i + ah + 1]) for i in range(n)]
    return np.array(scl)


def test_decompose_constant():
    d = sigproc.decompose_eda(ChannelSeries("eda", 4, np.full(100, 2.5)))
    assert np.all(d.scl.values == 2.5)
    assert np.all(d.scr.values == 0.0)


def test_decompose_matches_scripted_oracle_and_ramp_bound():
    t = np.arange(200, dtype=np.float64)
    ramp = 0.01 * t + 1.0
    d = sigproc.decompose_eda(ChannelSeries("eda", 4, ramp))
    scl = _scripted_decomposition(ramp.tolist())
    assert np.max(np.abs(d.scl.values - scl)) <= 1e-12
    bound = np.max(np.abs(ramp - scl))
    assert np.max(np.abs(d.scr.values)) <= bound + 1e-12
    # away from the edges the ramp is reproduced exactly by the tonic estimate
    assert np.max(np.abs(d.scr.values[30:-30])) <= 1e-12


def test_decompose_rejects_nan():
    with pytest.raises(InvalidInputError):
        sigproc.decompose_eda(ChannelSeries("eda", 4, [1.0, np.nan, 2.0]))


def test_scr_events_none_on_zero():
    assert sigproc.detect_scr_events(np.zeros(50)) == []


def test_scr_single_triangular_bump():
    bump = np.concatenate([np.linspace(0, 0.5, 7), np.linspace(0.5, 0, 6)[1:]])
    assert bump.size == 12
    x = np.concatenate([[0.0] * 3, bump, [0.0] * 3])
    ev = sigproc.detect_scr_events(x, rate_hz=4)
    assert len(ev) == 1
    e = ev[0]
    assert e.amplitude == pytest.approx(0.5, abs=1e-12)
    assert x[e.onset_idx] == 0.0 and e.peak_idx == int(np.argmax(x))
    assert x[e.offset_idx] <= 0.05
    # exhaustive scan: the offset is the first post-peak sample at or below the 10% level
    first = next(i for i in range(e.peak_idx + 1, x.size) if x[i] <= 0.05)
    assert e.offset_idx == first
    assert e.duration_s == (e.offset_idx - e.onset_idx) / 4
    assert e.area > 0


def test_scr_two_bumps_disjoint():
    bump = np.array([0, 0.1, 0.3, 0.2, 0.05, 0.0])
    x = np.concatenate([np.zeros(3), bump, np.zeros(4), 2 * bump, np.zeros(2)])
    ev = sigproc.detect_scr_events(x, rate_hz=4)
    assert len(ev) == 2
    assert ev[0].offset_idx <= ev[1].onset_idx
    assert ev[0].onset_idx < ev[0].peak_idx <= ev[0].offset_idx


def test_scr_subthreshold_ignored():
    x = np.array([0, 0.004, 0.008, 0.0, 0.0])
    assert sigproc.detect_scr_events(x, 0.01) == []
    assert len(sigproc.detect_scr_events(x, 0.008)) == 1


grid = st.integers(-64, 64).map(lambda k: k / 64.0)


@settings(max_examples=200)
@given(st.lists(grid, min_size=2, max_size=60), st.integers(-128, 128).map(lambda k: k / 64.0))
def test_scr_event_properties(values, shift):
    x = np.array(values)
    ev = sigproc.detect_scr_events(x, 0.01, 4)
    for a, b in zip(ev, ev[1:]):
        assert a.onset_idx < b.onset_idx
        assert a.offset_idx <= b.onset_idx
    for e in ev:
        assert e.onset_idx < e.peak_idx <= e.offset_idx
        assert e.amplitude >= 0.01 and e.area >= 0
    assert len(sigproc.detect_scr_events(x + shift, 0.01, 4)) == len(ev)


def test_normalizer_examples():
    stats = sigproc.fit_normalizer([[0.0], [10.0]])
    assert sigproc.apply_normalizer(stats, [[5.0]]).tolist() == [[0.5]]
    assert sigproc.apply_normalizer(stats, [[12.0]]).tolist() == [[1.0]]
    assert sigproc.apply_normalizer(stats, [[-3.0]]).tolist() == [[0.0]]
    const = sigproc.fit_normalizer([[3.0], [3.0], [3.0]])
    assert sigproc.apply_normalizer(const, [[3.0], [9.0]]).tolist() == [[0.5], [0.5]]


def test_normalizer_before_fit():
    with pytest.raises(StateError):
        sigproc.apply_normalizer(None, [[1.0]])
    with pytest.raises(StateError):
        sigproc.MinMaxNormalizer().transform([[1.0]])


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=20),
       st.lists(st.floats(-1e7, 1e7), min_size=3, max_size=3))
def test_normalizer_output_in_unit_interval(rows, probe):
    stats = sigproc.fit_normalizer(rows)
    out = sigproc.apply_normalizer(stats, [probe] + rows)
    assert np.all((out >= 0) & (out <= 1))


def test_normalizer_stats_immutable():
    stats = sigproc.fit_normalizer([[0.0, 1.0], [2.0, 3.0]])
    with pytest.raises(ValueError):
        stats.min[0] = 9.0
