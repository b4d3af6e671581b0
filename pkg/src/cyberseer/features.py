"""Segmentation and per-segment feature blocks.

Each segment yields three blocks:

* kinematic matrix, 16 x T_s (rows in :data:`KINEMATIC_ROWS` order)
* EDA time-series matrix, 15 x T_s (rows in :data:`EDA_TS_ROWS` order)
* EDA numerical vector, 38 entries (order in :data:`NUMERIC_FEATURES`)

First differences and trailing statistics are computed over the whole
session at 1 Hz and then sliced, so segment boundaries add no artificial
zeros.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import sigproc
from .errors import InvalidInputError, StateError
from .telemetry import RawSession

KINEMATIC_ROWS = (
    "pos_x", "pos_y", "pos_z",
    "d_pos_x", "d_pos_y", "d_pos_z",
    "rot_x", "rot_y", "rot_z",
    "d_rot_x", "d_rot_y", "d_rot_z",
    "speed", "d_speed",
    "rotation", "d_rotation",
)
EDA_TS_ROWS = (
    "eda", "scr", "scl",
    "eda_min", "eda_max", "eda_mean", "eda_std",
    "scr_min", "scr_max", "scr_mean", "scr_std",
    "scl_min", "scl_max", "scl_mean", "scl_std",
)

_STAT_NAMES = ("mean", "std", "min", "max", "range", "slope")
NUMERIC_FEATURES = (
    *(f"{stat}_{sig}" for sig in ("eda", "scl", "scr") for stat in _STAT_NAMES),
    "corr",
    "num_responses",
    "sum_scr_amplitude",
    "mean_scr_amplitude",
    "max_scr_amplitude",
    "sum_scr_response_duration",
    "mean_scr_response_duration",
    "area_of_response_curve",
    "response_rate_per_min",
    "mean_abs_diff_eda",
    "std_diff_eda",
    "mean_abs_diff_scr",
    "std_diff_scr",
    "eda_persistence_count",
    "eda_persistence_max",
    "eda_persistence_sum",
    "eda_persistence_mean",
    "eda_persistence_entropy",
    "scr_persistence_count",
    "scr_persistence_sum",
)
N_KINEMATIC = len(KINEMATIC_ROWS)
N_EDA_TS = len(EDA_TS_ROWS)
N_NUMERIC = len(NUMERIC_FEATURES)
assert (N_KINEMATIC, N_EDA_TS, N_NUMERIC) == (16, 15, 38)

ALLOWED_SPANS = (10, 15, 20, 30, 40)


@dataclass(frozen=True)
class FeatureConfig:
    window_s: int = 3
    scl_median_window_s: float = sigproc.SCL_MEDIAN_WINDOW_S
    scl_smooth_window_s: float = sigproc.SCL_SMOOTH_WINDOW_S
    scr_threshold_uS: float = sigproc.SCR_THRESHOLD_US
    scr_offset_fraction: float = sigproc.SCR_OFFSET_FRACTION

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- session-wide 1 Hz processing --------------------------------------------


@dataclass(frozen=True)
class ProcessedSession:
    """All 1 Hz feature rows of one session, plus the native-rate SCR."""

    session_id: str
    label: int
    ssq_delta: float
    series: dict[str, np.ndarray]  # row name -> 1 Hz array of length n_seconds
    scr_native: np.ndarray
    scr_rate: float

    @property
    def n_seconds(self) -> int:
        return next(iter(self.series.values())).size


def process_session(session: RawSession, config: FeatureConfig | None = None) -> ProcessedSession:
    """Downsample to 1 Hz, decompose EDA at its native rate, and compute the
    session-wide first differences and trailing statistics."""
    cfg = config or FeatureConfig()
    series: dict[str, np.ndarray] = {}
    for name in ("pos_x", "pos_y", "pos_z", "rot_x", "rot_y", "rot_z", "speed", "rotation"):
        x = sigproc.downsample_mean(session[name], 1).values
        series[name] = x
        series[f"d_{name}"] = sigproc.first_difference(x)

    eda = session["eda"]
    dec = sigproc.decompose_eda(eda, cfg.scl_median_window_s, cfg.scl_smooth_window_s)
    for name, ch in (("eda", eda), ("scr", dec.scr), ("scl", dec.scl)):
        x = sigproc.downsample_mean(ch, 1).values
        series[name] = x
        st = sigproc.trailing_stats(x, cfg.window_s)
        series[f"{name}_min"], series[f"{name}_max"] = st.min, st.max
        series[f"{name}_mean"], series[f"{name}_std"] = st.mean, st.std

    n = min(min(v.size for v in series.values()), session.duration_s)
    series = {k: v[:n] for k, v in series.items()}
    label = session.label
    return ProcessedSession(
        session_id=session.session_id,
        label=label.value,
        ssq_delta=label.ssq_delta,
        series=series,
        scr_native=dec.scr.values,
        scr_rate=float(dec.scr.rate_hz),
    )


@dataclass(frozen=True)
class SegmentSlices:
    """1 Hz rows of one segment plus the matching native-rate SCR slice."""

    session_id: str
    segment_index: int
    start_s: int
    label: int
    ssq_delta: float
    series: dict[str, np.ndarray]
    scr_native: np.ndarray
    scr_rate: float

    @property
    def width(self) -> int:
        return next(iter(self.series.values())).size


def n_segments(duration_s: int, span_s: int) -> int:
    if span_s <= 0 or span_s > duration_s:
        raise InvalidInputError(f"time span {span_s} outside (0, {duration_s}]")
    return duration_s // span_s


def segment_session(processed: ProcessedSession, span_s: int) -> list[SegmentSlices]:
    """Cut into ``floor(n_seconds / span_s)`` consecutive segments; the
    trailing remainder is dropped and every segment inherits the session label."""
    count = n_segments(processed.n_seconds, int(span_s))
    hi_per_s = processed.scr_rate
    out = []
    for k in range(count):
        a, b = k * span_s, (k + 1) * span_s
        out.append(
            SegmentSlices(
                session_id=processed.session_id,
                segment_index=k,
                start_s=a,
                label=processed.label,
                ssq_delta=processed.ssq_delta,
                series={name: v[a:b] for name, v in processed.series.items()},
                scr_native=processed.scr_native[int(a * hi_per_s) : int(b * hi_per_s)],
                scr_rate=hi_per_s,
            )
        )
    return out


def _stack(seg: SegmentSlices, rows: Sequence[str], err) -> np.ndarray:
    missing = [r for r in rows if r not in seg.series]
    if missing:
        raise err(f"segment lacks feature rows: {', '.join(missing)}")
    return np.vstack([seg.series[r] for r in rows])


def kinematic_feature_matrix(seg: SegmentSlices) -> np.ndarray:
    return _stack(seg, KINEMATIC_ROWS, InvalidInputError)


def eda_timeseries_matrix(seg: SegmentSlices) -> np.ndarray:
    return _stack(seg, EDA_TS_ROWS, StateError)


# --- sublevel-set persistence -------------------------------------------------


@dataclass(frozen=True)
class PersistencePair:
    birth: float
    death: float
    essential: bool = False

    @property
    def persistence(self) -> float:
        return self.death - self.birth


def sublevel_persistence(series) -> list[PersistencePair]:
    """0-dimensional persistence of the sublevel filtration of a 1-D signal.

    Samples enter in increasing (value, index) order. A sample with no
    entered neighbour starts a component; when a sample joins two components
    the younger one (higher birth value, then higher birth index) dies at
    that sample's value. The surviving component is paired with the global
    maximum and flagged ``essential``. Finite pairs come first, in death order.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("persistence of an empty series")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("persistence input must be finite")
    n = x.size
    parent = np.full(n, -1, dtype=np.int64)  # -1: not yet entered

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    pairs: list[PersistencePair] = []
    for i in np.lexsort((np.arange(n), x)):
        i = int(i)
        parent[i] = i
        roots = {find(j) for j in (i - 1, i + 1) if 0 <= j < n and parent[j] != -1}
        if not roots:
            continue
        # a component root is always its own birth (minimum) sample
        ordered = sorted(roots, key=lambda r: (x[r], r))
        elder = ordered[0]
        for young in ordered[1:]:
            pairs.append(PersistencePair(float(x[young]), float(x[i])))
            parent[young] = elder
        parent[i] = elder
    pairs.append(PersistencePair(float(x.min()), float(x.max()), essential=True))
    return pairs


def _persistence_summary(pairs: Iterable[PersistencePair]) -> tuple[float, float, float, float, float]:
    pers = np.array([p.persistence for p in pairs if not p.essential], dtype=np.float64)
    if pers.size == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    total = float(pers.sum())
    entropy = 0.0
    if total > 0:
        p = pers[pers > 0] / total
        entropy = float(-np.sum(p * np.log(p)))
    return float(pers.size), float(pers.max()), total, total / pers.size, entropy


# --- numerical vector ----------------------------------------------------------


def _slope(y: np.ndarray) -> float:
    n = y.size
    if n < 2:
        return 0.0
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def _basic_stats(y: np.ndarray) -> list[float]:
    lo, hi = float(y.min()), float(y.max())
    return [float(y.mean()), float(y.std()), lo, hi, hi - lo, _slope(y)]


def _corr_with_time(y: np.ndarray) -> float:
    n = y.size
    if n < 2:
        return 0.0
    t = np.arange(n, dtype=np.float64)
    yc = y - y.mean()
    tc = t - t.mean()
    syy = float(np.dot(yc, yc))
    if syy == 0.0:
        return 0.0
    return float(np.clip(np.dot(tc, yc) / math.sqrt(syy * float(np.dot(tc, tc))), -1.0, 1.0))


def _diff_stats(y: np.ndarray) -> tuple[float, float]:
    if y.size < 2:
        return 0.0, 0.0
    d = np.diff(y)
    return float(np.mean(np.abs(d))), float(np.std(d))


def eda_numerical_vector(
    seg: SegmentSlices,
    events: Sequence[sigproc.ScrEvent],
    eda_pairs: Sequence[PersistencePair],
    scr_pairs: Sequence[PersistencePair],
) -> np.ndarray:
    """The 38-entry EDA summary of one segment (see :data:`NUMERIC_FEATURES`)."""
    try:
        eda, scl, scr = (np.asarray(seg.series[k]) for k in ("eda", "scl", "scr"))
    except KeyError as exc:
        raise InvalidInputError(f"segment lacks {exc.args[0]!r}") from None
    if not (eda.size == scl.size == scr.size) or eda.size == 0:
        raise InvalidInputError("eda/scl/scr slices differ in length")
    n_native = seg.scr_native.size
    for ev in events:
        if not 0 <= ev.onset_idx < ev.peak_idx <= ev.offset_idx < max(n_native, 1):
            raise InvalidInputError("event indices fall outside the segment")

    out: list[float] = []
    for y in (eda, scl, scr):
        out.extend(_basic_stats(y))
    out.append(_corr_with_time(scl))

    amps = np.array([e.amplitude for e in events], dtype=np.float64)
    durs = np.array([e.duration_s for e in events], dtype=np.float64)
    areas = np.array([e.area for e in events], dtype=np.float64)
    count = len(events)
    minutes = eda.size / 60.0
    out.extend(
        [
            float(count),
            float(amps.sum()),
            float(amps.mean()) if count else 0.0,
            float(amps.max()) if count else 0.0,
            float(durs.sum()),
            float(durs.mean()) if count else 0.0,
            float(areas.sum()),
            count / minutes,
        ]
    )
    out.extend(_diff_stats(eda))
    out.extend(_diff_stats(scr))
    out.extend(_persistence_summary(eda_pairs))
    scr_summary = _persistence_summary(scr_pairs)
    out.extend([scr_summary[0], scr_summary[2]])
    vec = np.asarray(out, dtype=np.float64)
    assert vec.size == N_NUMERIC
    return vec


# --- samples and datasets --------------------------------------------------------


@dataclass(frozen=True)
class SegmentSample:
    session_id: str
    segment_index: int
    kinematic: np.ndarray  # (16, T_s)
    eda_ts: np.ndarray  # (15, T_s)
    eda_num: np.ndarray  # (38,)
    label: int
    ssq_delta: float = float("nan")


def featurize_segment(seg: SegmentSlices, config: FeatureConfig | None = None) -> SegmentSample:
    cfg = config or FeatureConfig()
    events = sigproc.detect_scr_events(
        seg.scr_native, cfg.scr_threshold_uS, seg.scr_rate, cfg.scr_offset_fraction
    )
    vec = eda_numerical_vector(
        seg,
        events,
        sublevel_persistence(seg.series["eda"]),
        sublevel_persistence(seg.series["scr"]),
    )
    return SegmentSample(
        session_id=seg.session_id,
        segment_index=seg.segment_index,
        kinematic=kinematic_feature_matrix(seg),
        eda_ts=eda_timeseries_matrix(seg),
        eda_num=vec,
        label=seg.label,
        ssq_delta=seg.ssq_delta,
    )


def featurize_processed(
    processed: ProcessedSession, span_s: int, config: FeatureConfig | None = None
) -> list[SegmentSample]:
    return [featurize_segment(s, config) for s in segment_session(processed, span_s)]


def featurize_session(
    session: RawSession, span_s: int, config: FeatureConfig | None = None
) -> list[SegmentSample]:
    return featurize_processed(process_session(session, config), span_s, config)


@dataclass
class SegmentDataset:
    """Struct-of-arrays view over many segments of one time span."""

    kinematic: np.ndarray  # (N, 16, T)
    eda_ts: np.ndarray  # (N, 15, T)
    eda_num: np.ndarray  # (N, 38)
    labels: np.ndarray  # (N,) int
    session_ids: np.ndarray  # (N,) str
    segment_index: np.ndarray  # (N,) int
    ssq_delta: np.ndarray = None
    span_s: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.labels.shape[0]
        if self.ssq_delta is None:
            self.ssq_delta = np.full(n, np.nan)
        t = self.kinematic.shape[2] if self.kinematic.ndim == 3 else 0
        if self.kinematic.shape != (n, N_KINEMATIC, t) or self.eda_ts.shape != (n, N_EDA_TS, t):
            raise InvalidInputError("time-series blocks have inconsistent shapes")
        if self.eda_num.shape != (n, N_NUMERIC):
            raise InvalidInputError("numerical block must be (N, 38)")
        if not self.span_s:
            self.span_s = t

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.session_ids.tolist(), self.segment_index.tolist()))

    @classmethod
    def from_samples(cls, samples: Sequence[SegmentSample], span_s: int | None = None, meta=None):
        if not samples:
            raise InvalidInputError("no samples")
        return cls(
            kinematic=np.stack([s.kinematic for s in samples]),
            eda_ts=np.stack([s.eda_ts for s in samples]),
            eda_num=np.stack([s.eda_num for s in samples]),
            labels=np.array([s.label for s in samples], dtype=np.int64),
            session_ids=np.array([s.session_id for s in samples]),
            segment_index=np.array([s.segment_index for s in samples], dtype=np.int64),
            ssq_delta=np.array([s.ssq_delta for s in samples], dtype=np.float64),
            span_s=span_s or samples[0].kinematic.shape[1],
            meta=dict(meta or {}),
        )

    def sample(self, i: int) -> SegmentSample:
        return SegmentSample(
            str(self.session_ids[i]),
            int(self.segment_index[i]),
            self.kinematic[i],
            self.eda_ts[i],
            self.eda_num[i],
            int(self.labels[i]),
            float(self.ssq_delta[i]),
        )

    def subset(self, idx) -> "SegmentDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return SegmentDataset(
            self.kinematic[idx],
            self.eda_ts[idx],
            self.eda_num[idx],
            self.labels[idx],
            self.session_ids[idx],
            self.segment_index[idx],
            self.ssq_delta[idx],
            self.span_s,
            dict(self.meta),
        )

    def inputs(self, idx=None) -> dict[str, np.ndarray]:
        """Model input dict keyed by the graph input names."""
        sel = slice(None) if idx is None else np.asarray(idx, dtype=np.int64)
        return {
            "kinematic": self.kinematic[sel],
            "eda_ts": self.eda_ts[sel],
            "eda_num": self.eda_num[sel],
        }

    @property
    def n_sessions(self) -> int:
        return len(set(self.session_ids.tolist()))


def build_dataset(
    sessions: Iterable[RawSession | ProcessedSession],
    span_s: int,
    config: FeatureConfig | None = None,
) -> SegmentDataset:
    cfg = config or FeatureConfig()
    samples: list[SegmentSample] = []
    ids = []
    for s in sessions:
        processed = s if isinstance(s, ProcessedSession) else process_session(s, cfg)
        samples.extend(featurize_processed(processed, span_s, cfg))
        ids.append(processed.session_id)
    return SegmentDataset.from_samples(
        samples, span_s, meta={"config_hash": cfg.digest(), "sessions": ids}
    )


# --- normalization over datasets -------------------------------------------------------


@dataclass(frozen=True)
class DatasetNormalizer:
    kinematic: sigproc.NormalizerStats
    eda_ts: sigproc.NormalizerStats
    eda_num: sigproc.NormalizerStats | None


def fit_dataset_normalizer(
    data: SegmentDataset, idx=None, normalize_numeric: bool = True
) -> DatasetNormalizer:
    """Per-feature min/max over the selected rows (all time steps pooled)."""
    sub = data if idx is None else data.subset(idx)
    kin = sub.kinematic.transpose(0, 2, 1).reshape(-1, N_KINEMATIC)
    eda = sub.eda_ts.transpose(0, 2, 1).reshape(-1, N_EDA_TS)
    return DatasetNormalizer(
        sigproc.fit_normalizer(kin),
        sigproc.fit_normalizer(eda),
        sigproc.fit_normalizer(sub.eda_num) if normalize_numeric else None,
    )


def normalize_dataset(data: SegmentDataset, norm: DatasetNormalizer) -> SegmentDataset:
    kin = sigproc.apply_normalizer(norm.kinematic, data.kinematic.transpose(0, 2, 1))
    eda = sigproc.apply_normalizer(norm.eda_ts, data.eda_ts.transpose(0, 2, 1))
    num = data.eda_num if norm.eda_num is None else sigproc.apply_normalizer(norm.eda_num, data.eda_num)
    return SegmentDataset(
        np.ascontiguousarray(kin.transpose(0, 2, 1)),
        np.ascontiguousarray(eda.transpose(0, 2, 1)),
        num,
        data.labels,
        data.session_ids,
        data.segment_index,
        data.ssq_delta,
        data.span_s,
        dict(data.meta),
    )


# --- feature store -------------------------------------------------------------------

STORE_MAGIC = b"CSF1"


def save_feature_store(data: SegmentDataset, path) -> Path:
    """Binary store: magic, u32 n_segments, u32 T_s, fixed-size records, JSON footer."""
    path = Path(path)
    n, t = len(data), data.span_s
    buf = io.BytesIO()
    buf.write(STORE_MAGIC)
    buf.write(struct.pack("<II", n, t))
    for i in range(n):
        buf.write(struct.pack("<B", int(data.labels[i])))
        buf.write(np.ascontiguousarray(data.kinematic[i], dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(data.eda_ts[i], dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(data.eda_num[i], dtype="<f8").tobytes())
    footer = {
        "session_ids": data.session_ids.tolist(),
        "segment_index": data.segment_index.tolist(),
        "ssq_delta": [None if math.isnan(v) else v for v in data.ssq_delta.tolist()],
        "config_hash": data.meta.get("config_hash", ""),
        "meta": {k: v for k, v in data.meta.items() if k != "config_hash"},
    }
    buf.write(json.dumps(footer, sort_keys=True).encode("utf-8"))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue())
    return path


def load_feature_store(path) -> SegmentDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != STORE_MAGIC:
        raise InvalidInputError(f"{path}: not a CSF1 feature store")
    n, t = struct.unpack_from("<II", raw, 4)
    rec = 1 + 8 * (N_KINEMATIC * t + N_EDA_TS * t + N_NUMERIC)
    body_end = 12 + n * rec
    if len(raw) < body_end:
        raise InvalidInputError(f"{path}: truncated feature store")
    labels = np.empty(n, dtype=np.int64)
    kin = np.empty((n, N_KINEMATIC, t))
    eda = np.empty((n, N_EDA_TS, t))
    num = np.empty((n, N_NUMERIC))
    off = 12
    for i in range(n):
        labels[i] = raw[off]
        off += 1
        for arr, count in ((kin, N_KINEMATIC * t), (eda, N_EDA_TS * t), (num, N_NUMERIC)):
            arr[i] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(arr.shape[1:])
            off += 8 * count
    try:
        footer = json.loads(raw[body_end:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"{path}: bad footer ({exc})") from None
    meta = dict(footer.get("meta", {}))
    meta["config_hash"] = footer.get("config_hash", "")
    return SegmentDataset(
        kin,
        eda,
        num,
        labels,
        np.array(footer["session_ids"]),
        np.array(footer["segment_index"], dtype=np.int64),
        np.array([np.nan if v is None else v for v in footer.get("ssq_delta", [None] * n)], dtype=np.float64),
        t,
        meta,
    )


def csv_columns(span_s: int) -> list[str]:
    cols = ["session_id", "segment_index", "label"]
    cols += [f"{r}@{k}" for r in KINEMATIC_ROWS for k in range(span_s)]
    cols += [f"{r}@{k}" for r in EDA_TS_ROWS for k in range(span_s)]
    cols += list(NUMERIC_FEATURES)
    return cols


def export_csv(data: SegmentDataset, path) -> Path:
    """One row per segment: ids, label, kinematic rows, EDA rows, numerical entries."""
    path = Path(path)
    lines = [",".join(csv_columns(data.span_s))]
    for i in range(len(data)):
        values = np.concatenate(
            [data.kinematic[i].ravel(), data.eda_ts[i].ravel(), data.eda_num[i]]
        )
        lines.append(
            ",".join(
                [str(data.session_ids[i]), str(int(data.segment_index[i])), str(int(data.labels[i]))]
                + [repr(float(v)) for v in values]
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
