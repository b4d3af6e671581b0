import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from cyberseer import features, sigproc, telemetry
from cyberseer.errors import InvalidInputError, StateError
from cyberseer.features import PersistencePair
from cyberseer.telemetry import ChannelSeries, RawSession


def _constant_session(duration=60, eda=2.0):
    ch = {name: ChannelSeries(name, 90, np.full(duration * 90, 1.5)) for name in telemetry.HEAD_CHANNELS + telemetry.MOTION_CHANNELS}
    ch["eda"] = ChannelSeries("eda", 4, np.full(duration * 4, eda))
    return RawSession("const", "p", duration, ch, 0.0, 30.0)


@pytest.mark.parametrize("span,count", [(10, 24), (15, 16), (20, 12), (30, 8), (40, 6)])
def test_segment_counts(span, count):
    assert features.n_segments(240, span) == count


def test_segment_count_errors():
    for bad in (0, -5, 241):
        with pytest.raises(InvalidInputError):
            features.n_segments(240, bad)


def test_segments_partition_the_session(processed):
    p = processed[0]
    segs = features.segment_session(p, 30)
    assert [s.start_s for s in segs] == list(range(0, 240, 30))
    joined = np.concatenate([s.series["eda"] for s in segs])
    assert joined.tobytes() == p.series["eda"][:240].tobytes()
    assert all(s.label == p.label for s in segs)
    assert sum(s.scr_native.size for s in segs) == 240 * 4


def test_feature_shapes(processed):
    for span in (10, 30):
        for sample in features.featurize_processed(processed[1], span):
            assert sample.kinematic.shape == (16, span)
            assert sample.eda_ts.shape == (15, span)
            assert sample.eda_num.shape == (38,)
            assert np.all(np.isfinite(sample.eda_num))


def test_row_rosters():
    assert len(features.KINEMATIC_ROWS) == 16
    assert len(features.EDA_TS_ROWS) == 15
    assert len(features.NUMERIC_FEATURES) == 38
    assert features.KINEMATIC_ROWS[3:6] == ("d_pos_x", "d_pos_y", "d_pos_z")
    for name in ("mean_scl", "std_scl", "std_scr", "corr", "num_responses",
                 "sum_scr_response_duration", "sum_scr_amplitude", "area_of_response_curve"):
        assert name in features.NUMERIC_FEATURES


def test_constant_pose_has_zero_deltas():
    s = features.featurize_session(_constant_session(), 30)
    for sample in s:
        for i, name in enumerate(features.KINEMATIC_ROWS):
            if name.startswith("d_"):
                assert np.all(sample.kinematic[i] == 0.0)


def test_delta_rows_match_session_wide_diff(processed):
    p = processed[2]
    full = np.stack([p.series[k] for k in ("pos_x", "pos_y", "pos_z")])
    diffs = np.array([oracles.first_difference(row.tolist()) for row in full])
    for sample, seg in zip(features.featurize_processed(p, 20), features.segment_session(p, 20)):
        cols = slice(seg.start_s, seg.start_s + 20)
        assert np.max(np.abs(sample.kinematic[3:6] - diffs[:, cols])) <= 1e-12
        assert sample.kinematic[0:3].tobytes() == np.ascontiguousarray(full[:, cols]).tobytes()


def test_eda_stat_rows_match_window_oracle(processed):
    p = processed[3]
    for k, name in enumerate(("eda", "scr", "scl")):
        want = np.array(oracles.trailing_window(p.series[name].tolist(), 3))
        for sample, seg in zip(features.featurize_processed(p, 30), features.segment_session(p, 30)):
            cols = slice(seg.start_s, seg.start_s + 30)
            got = sample.eda_ts[3 + 4 * k : 7 + 4 * k]
            assert np.max(np.abs(got - want[:, cols])) <= 1e-12


def test_constant_eda_segment():
    sample = features.featurize_session(_constant_session(eda=2.0), 30)[0]
    for k in range(3):
        assert np.all(sample.eda_ts[3 + 4 * k + 3] == 0.0)
    assert np.all(sample.eda_ts[3] == 2.0) and np.all(sample.eda_ts[4] == 2.0)
    v = dict(zip(features.NUMERIC_FEATURES, sample.eda_num))
    assert v["mean_eda"] == 2.0 and v["mean_scl"] == 2.0 and v["mean_scr"] == 0.0
    assert v["std_eda"] == 0.0 and v["slope_eda"] == 0.0 and v["corr"] == 0.0
    assert v["num_responses"] == 0.0 and v["area_of_response_curve"] == 0.0
    assert v["eda_persistence_sum"] == 0.0 and v["scr_persistence_sum"] == 0.0


def test_eda_matrix_requires_decomposition(processed):
    seg = features.segment_session(processed[0], 30)[0]
    series = {k: v for k, v in seg.series.items() if k != "scl"}
    bad = features.SegmentSlices(seg.session_id, 0, 0, seg.label, seg.ssq_delta, series, seg.scr_native, seg.scr_rate)
    with pytest.raises(StateError):
        features.eda_timeseries_matrix(bad)
    series = {k: v for k, v in seg.series.items() if k != "speed"}
    bad = features.SegmentSlices(seg.session_id, 0, 0, seg.label, seg.ssq_delta, series, seg.scr_native, seg.scr_rate)
    with pytest.raises(InvalidInputError, match="speed"):
        features.kinematic_feature_matrix(bad)


def _pairs(x):
    got = features.sublevel_persistence(x)
    finite = sorted((p.birth, p.death) for p in got if not p.essential)
    essential = [(p.birth, p.death) for p in got if p.essential]
    return finite, essential


def test_persistence_examples():
    assert features.sublevel_persistence([5.0]) == [PersistencePair(5.0, 5.0, True)]
    assert _pairs([1, 2, 3, 4]) == ([], [(1, 4)])
    assert _pairs([0, 2, 1, 3]) == ([(1, 2)], [(0, 3)])
    with pytest.raises(InvalidInputError):
        features.sublevel_persistence([1.0, np.inf])


@given(st.lists(st.integers(-5, 5), min_size=1, max_size=12))
def test_persistence_matches_run_scan_oracle(values):
    x = [float(v) for v in values]
    finite, essential = _pairs(x)
    want, ess = oracles.persistence_pairs(x)
    assert finite == sorted(want)
    assert essential == [ess]
    assert all(d >= b for b, d in finite)


def _segment(rng, n=30):
    eda = rng.uniform(1, 3, n)
    scl = rng.uniform(1, 3, n)
    scr = eda - scl
    native = rng.normal(0, 0.05, 4 * n)
    return features.SegmentSlices("s", 0, 0, 1, 30.0, {"eda": eda, "scl": scl, "scr": scr}, native, 4.0)


def test_numeric_vector_entries_1_to_19(rng):
    seg = _segment(rng)
    ev = sigproc.detect_scr_events(seg.scr_native, rate_hz=4)
    vec = features.eda_numerical_vector(seg, ev, features.sublevel_persistence(seg.series["eda"]),
                                        features.sublevel_persistence(seg.series["scr"]))
    want = []
    for k in ("eda", "scl", "scr"):
        want.extend(oracles.six_stats(seg.series[k].tolist()))
    assert np.max(np.abs(vec[:18] - want)) <= 1e-9
    assert vec[18] == pytest.approx(oracles.pearson_r(list(range(30)), seg.series["scl"].tolist()), abs=1e-12)
    assert vec[19] == len(ev)
    assert vec[26] == pytest.approx(len(ev) / 0.5)


def test_numeric_vector_order_free(rng):
    seg = _segment(rng)
    ev = sigproc.detect_scr_events(seg.scr_native, rate_hz=4)
    assert len(ev) >= 2
    ep = features.sublevel_persistence(seg.series["eda"])
    sp = features.sublevel_persistence(seg.series["scr"])
    a = features.eda_numerical_vector(seg, ev, ep, sp)
    b = features.eda_numerical_vector(seg, ev[::-1], ep[::-1], sp[::-1])
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_numeric_vector_dimension_mismatch(rng):
    seg = _segment(rng)
    bad = features.SegmentSlices("s", 0, 0, 1, 30.0, {**seg.series, "scr": seg.series["scr"][:-1]}, seg.scr_native, 4.0)
    with pytest.raises(InvalidInputError):
        features.eda_numerical_vector(bad, [], [], [])


def test_dataset_inputs_and_normalizer(small_dataset):
    d = small_dataset
    assert len(d) == 12 * 8 and d.n_sessions == 12
    norm = features.fit_dataset_normalizer(d, np.arange(40))
    dn = features.normalize_dataset(d, norm)
    for block in dn.inputs().values():
        assert np.all((block >= 0) & (block <= 1))
    raw_num = features.normalize_dataset(d, features.fit_dataset_normalizer(d, normalize_numeric=False))
    assert raw_num.eda_num is d.eda_num


def test_feature_store_round_trip(tmp_path, small_dataset):
    path = features.save_feature_store(small_dataset, tmp_path / "f.csf")
    assert path.read_bytes()[:4] == b"CSF1"
    back = features.load_feature_store(path)
    for name in ("kinematic", "eda_ts", "eda_num", "labels", "segment_index", "ssq_delta"):
        assert getattr(back, name).tobytes() == getattr(small_dataset, name).tobytes(), name
    assert back.session_ids.tolist() == small_dataset.session_ids.tolist()
    assert back.span_s == 30
    assert back.meta["config_hash"] == features.FeatureConfig().digest()


def test_feature_store_rejects_corruption(tmp_path, small_dataset):
    path = features.save_feature_store(small_dataset, tmp_path / "f.csf")
    blob = path.read_bytes()
    (tmp_path / "bad.csf").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(InvalidInputError):
        features.load_feature_store(tmp_path / "bad.csf")
    (tmp_path / "short.csf").write_bytes(blob[:1000])
    with pytest.raises(InvalidInputError):
        features.load_feature_store(tmp_path / "short.csf")


def test_csv_export(tmp_path, small_dataset):
    path = features.export_csv(small_dataset, tmp_path / "f.csv")
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header == features.csv_columns(30)
    assert len(header) == 3 + 16 * 30 + 15 * 30 + 38
    assert len(lines) == len(small_dataset) + 1
