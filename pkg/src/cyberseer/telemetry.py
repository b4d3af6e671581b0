"""Session data model, on-disk session format, labels and a synthetic generator.

A session directory holds ``manifest.json`` plus one CSV per channel group::

    head.csv    t,pos_x,pos_y,pos_z,rot_x,rot_y,rot_z   (90 Hz)
    motion.csv  t,speed,rotation                        (90 Hz)
    eda.csv     t,eda                                   (4 Hz)
    bvp.csv     t,bvp                                   (64 Hz, optional)
    tem.csv     t,tem                                   (4 Hz, optional)
"""

from __future__ import annotations

import csv
import json
import math
import types
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    InvalidInputError,
    LengthMismatchError,
    MalformedRowError,
    MissingChannelError,
    MissingFileError,
)

SICK_THRESHOLD = 20.0

HEAD_CHANNELS = ("pos_x", "pos_y", "pos_z", "rot_x", "rot_y", "rot_z")
MOTION_CHANNELS = ("speed", "rotation")
REQUIRED_CHANNELS = HEAD_CHANNELS + MOTION_CHANNELS + ("eda",)
OPTIONAL_CHANNELS = ("bvp", "tem")

# group name -> (default file, columns after t, default rate)
CHANNEL_GROUPS: dict[str, tuple[str, tuple[str, ...], int]] = {
    "head": ("head.csv", HEAD_CHANNELS, 90),
    "motion": ("motion.csv", MOTION_CHANNELS, 90),
    "eda": ("eda.csv", ("eda",), 4),
    "bvp": ("bvp.csv", ("bvp",), 64),
    "tem": ("tem.csv", ("tem",), 4),
}
REQUIRED_GROUPS = ("head", "motion", "eda")


def _as_rate(rate) -> Fraction:
    if isinstance(rate, Fraction):
        return rate
    if isinstance(rate, str):
        return Fraction(rate)
    return Fraction(rate).limit_denominator(10**6)


@dataclass(frozen=True)
class ChannelSeries:
    """One uniformly sampled channel.

    ``values`` is stored as a read-only float64 array. Finiteness is not
    enforced here so that broken recordings can still be represented and
    reported by :func:`validate_session`.
    """

    name: str
    rate_hz: Fraction
    values: np.ndarray

    def __post_init__(self):
        rate = _as_rate(self.rate_hz)
        if rate <= 0:
            raise InvalidInputError(f"channel {self.name!r}: rate must be positive")
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if values.size == 0:
            raise InvalidInputError(f"channel {self.name!r}: no samples")
        values.setflags(write=False)
        object.__setattr__(self, "rate_hz", rate)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values, rate_hz=None, name=None) -> "ChannelSeries":
        return ChannelSeries(
            name or self.name,
            self.rate_hz if rate_hz is None else rate_hz,
            values,
        )


@dataclass(frozen=True)
class RawSession:
    session_id: str
    participant_id: str
    duration_s: int
    channels: Mapping[str, ChannelSeries]
    ssq_pre: float
    ssq_post: float

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidInputError("duration_s must be positive")
        for name in REQUIRED_CHANNELS:
            if name not in self.channels:
                raise MissingChannelError(name)
        object.__setattr__(self, "channels", types.MappingProxyType(dict(self.channels)))

    def __getitem__(self, name: str) -> ChannelSeries:
        return self.channels[name]

    @property
    def ssq_delta(self) -> float:
        return ssq_delta(self.ssq_pre, self.ssq_post)

    @property
    def label(self) -> "CsLabel":
        return label_from_ssq(self.ssq_delta)

    def expected_length(self, name: str) -> int:
        return int(round(self.duration_s * self.channels[name].rate_hz))


@dataclass(frozen=True)
class CsLabel:
    value: int
    ssq_delta: float

    def __post_init__(self):
        if self.value not in (0, 1):
            raise InvalidInputError("label value must be 0 or 1")
        if (self.value == 1) != (self.ssq_delta >= SICK_THRESHOLD):
            raise InvalidInputError("label value inconsistent with ssq_delta")

    def __int__(self) -> int:
        return self.value


def _require_finite(**values):
    for key, v in values.items():
        if not math.isfinite(v):
            raise InvalidInputError(f"{key} must be finite, got {v!r}")


def ssq_delta(ssq_pre: float, ssq_post: float) -> float:
    """Post-exposure minus pre-exposure SSQ total. Negative deltas are kept."""
    _require_finite(ssq_pre=ssq_pre, ssq_post=ssq_post)
    if ssq_pre < 0 or ssq_post < 0:
        raise InvalidInputError("SSQ scores must be non-negative")
    return float(ssq_post) - float(ssq_pre)


def label_from_ssq(delta: float) -> CsLabel:
    _require_finite(delta=delta)
    return CsLabel(int(delta >= SICK_THRESHOLD), float(delta))


# --- disk format ------------------------------------------------------------


def _reconcile(series: ChannelSeries, expected: int) -> ChannelSeries:
    n = len(series)
    if n > expected:
        return series.with_values(series.values[:expected])
    if n == expected - 1:
        # one missing trailing sample: hold the last value
        return series.with_values(np.append(series.values, series.values[-1]))
    if n < expected - 1:
        raise LengthMismatchError(series.name, expected, n)
    return series


def _read_group_csv(path: Path, columns: tuple[str, ...]) -> list[list[float]]:
    if not path.is_file():
        raise MissingFileError(path)
    header = ["t", *columns]
    cols: list[list[float]] = [[] for _ in columns]
    last_t = -math.inf
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise MalformedRowError(path, 1, "empty file") from None
        if [c.strip() for c in first] != header:
            raise MalformedRowError(path, 1, f"expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise MalformedRowError(
                    path, lineno, f"expected {len(header)} fields, got {len(row)}"
                )
            try:
                nums = [float(x) for x in row]
            except ValueError as exc:
                raise MalformedRowError(path, lineno, str(exc)) from None
            if not nums[0] > last_t:
                raise MalformedRowError(path, lineno, "t is not strictly increasing")
            last_t = nums[0]
            for col, v in zip(cols, nums[1:]):
                col.append(v)
    if not cols[0]:
        raise MalformedRowError(path, 2, "no data rows")
    return cols


def load_session(manifest_path) -> RawSession:
    """Load and length-reconcile a session from ``manifest.json`` (or its directory)."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    if not manifest_path.is_file():
        raise MissingFileError(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRowError(manifest_path, exc.lineno, exc.msg) from None
    root = manifest_path.parent
    files: dict = manifest.get("channels", {})
    rates: dict = manifest.get("rates", {})
    duration = int(manifest["duration_s"])

    for group in REQUIRED_GROUPS:
        # name the first channel the absent file would have supplied
        if group not in files or not (root / files[group]).is_file():
            raise MissingChannelError(CHANNEL_GROUPS[group][1][0])

    channels: dict[str, ChannelSeries] = {}
    for group, (_, columns, default_rate) in CHANNEL_GROUPS.items():
        if group not in files:
            continue
        rate = _as_rate(rates.get(group, default_rate))
        data = _read_group_csv(root / files[group], columns)
        expected = int(round(duration * rate))
        for name, values in zip(columns, data):
            channels[name] = _reconcile(ChannelSeries(name, rate, values), expected)

    return RawSession(
        session_id=str(manifest["session_id"]),
        participant_id=str(manifest["participant_id"]),
        duration_s=duration,
        channels=channels,
        ssq_pre=float(manifest["ssq_pre"]),
        ssq_post=float(manifest["ssq_post"]),
    )


def save_session(session: RawSession, directory) -> Path:
    """Write a session directory; values use round-trip ``repr`` formatting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    rates = {}
    for group, (fname, columns, _) in CHANNEL_GROUPS.items():
        if not all(c in session.channels for c in columns):
            continue
        series = [session.channels[c] for c in columns]
        rate = series[0].rate_hz
        n = len(series[0])
        lines = [",".join(("t", *columns))]
        arrays = [s.values.tolist() for s in series]
        for i in range(n):
            t = repr(float(Fraction(i) / rate))
            lines.append(",".join([t, *(repr(a[i]) for a in arrays)]))
        (directory / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
        files[group] = fname
        rates[group] = str(rate)
    manifest = {
        "session_id": session.session_id,
        "participant_id": session.participant_id,
        "duration_s": session.duration_s,
        "ssq_pre": session.ssq_pre,
        "ssq_post": session.ssq_post,
        "channels": files,
        "rates": rates,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


# --- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # "non_finite" | "flatline" | "length_mismatch"
    channel: str
    index: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    session_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


def validate_session(session: RawSession) -> ValidationReport:
    violations: list[Violation] = []
    for name, series in session.channels.items():
        bad = np.flatnonzero(~np.isfinite(series.values))
        for idx in bad:
            violations.append(
                Violation("non_finite", name, int(idx), f"value {series.values[idx]!r}")
            )
        expected = session.expected_length(name)
        if abs(len(series) - expected) > 1:
            violations.append(
                Violation(
                    "length_mismatch", name, None, f"{len(series)} samples, expected {expected}"
                )
            )
    eda = session.channels["eda"].values
    finite = eda[np.isfinite(eda)]
    if finite.size == 0 or np.ptp(finite) == 0.0:
        violations.append(Violation("flatline", "eda", None, "zero variance over session"))
    return ValidationReport(session.session_id, tuple(violations))


def discard_invalid(sessions) -> tuple[list[RawSession], list[ValidationReport]]:
    """Keep sessions that pass validation; also return the failing reports."""
    kept, rejected = [], []
    for s in sessions:
        rep = validate_session(s)
        if rep.passed:
            kept.append(s)
        else:
            rejected.append(rep)
    return kept, rejected


# --- synthetic sessions -----------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic session generator.

    A latent severity in [0, 1] (high for sick sessions) drives EDA tonic
    drift, SCR burst rate and head/locomotion variability, so EDA and
    kinematics carry correlated class information.
    """

    duration_s: int = 240
    kinematic_hz: int = 90
    eda_hz: int = 4
    bvp_hz: int = 64
    tem_hz: int = 4
    include_optional: bool = False
    sick_probability: float = 0.55
    sick_delta_range: tuple[float, float] = (25.0, 60.0)
    nonsick_delta_range: tuple[float, float] = (0.0, 15.0)
    ssq_pre_range: tuple[float, float] = (0.0, 15.0)
    sick_scr_per_min: float = 6.0
    nonsick_scr_per_min: float = 1.0
    separation: float = 1.0

    def __post_init__(self):
        for key in ("duration_s", "kinematic_hz", "eda_hz", "bvp_hz", "tem_hz"):
            if getattr(self, key) <= 0:
                raise InvalidInputError(f"{key} must be positive")
        if not 0.0 <= self.sick_probability <= 1.0:
            raise InvalidInputError("sick_probability must be in [0, 1]")
        for key in ("sick_delta_range", "nonsick_delta_range", "ssq_pre_range"):
            lo, hi = getattr(self, key)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise InvalidInputError(f"{key} must be a finite (lo, hi) with lo <= hi")
        if self.ssq_pre_range[0] < 0:
            raise InvalidInputError("ssq_pre_range must be non-negative")
        if self.sick_scr_per_min < 0 or self.nonsick_scr_per_min < 0 or self.separation < 0:
            raise InvalidInputError("rates and separation must be non-negative")


def _smooth_noise(rng, n_out: int, duration_s: int, knots_per_s: float, scale: float):
    n_knots = int(duration_s * knots_per_s) + 2
    knots = rng.normal(0.0, scale, n_knots)
    t_knots = np.arange(n_knots) / knots_per_s
    t = np.arange(n_out) * (duration_s / n_out)
    return np.interp(t, t_knots, knots)


def generate_synthetic_session(
    config: GeneratorConfig | None = None,
    seed: int = 0,
    session_id: str | None = None,
    participant_id: str | None = None,
) -> RawSession:
    cfg = config or GeneratorConfig()
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))
    dur = cfg.duration_s
    sep = cfg.separation

    sick = rng.random() < cfg.sick_probability
    lo, hi = cfg.sick_delta_range if sick else cfg.nonsick_delta_range
    delta = float(rng.uniform(lo, hi))
    if sick:
        severity = 0.55 + 0.45 * ((delta - lo) / (hi - lo) if hi > lo else 1.0)
    else:
        severity = 0.3 * ((delta - lo) / (hi - lo) if hi > lo else 0.0)
    pre = float(rng.uniform(*cfg.ssq_pre_range))
    post = pre + delta
    if post < 0:
        pre, post = pre - post, 0.0

    # kinematics ------------------------------------------------------------
    n = dur * cfg.kinematic_hz
    dt = 1.0 / cfg.kinematic_hz
    sway = 3.0 + 14.0 * severity * sep
    turn_sd = 6.0 + 24.0 * severity * sep
    rotation = _smooth_noise(rng, n, dur, 1.0, turn_sd)  # deg/s
    rotation += rng.normal(0.0, 0.5, n)
    heading = np.cumsum(rotation) * dt
    base_speed = 1.5 - 0.4 * severity * sep
    speed = base_speed + _smooth_noise(rng, n, dur, 1.0, 0.08 + 0.25 * severity * sep)
    speed = np.abs(speed + rng.normal(0.0, 0.02, n))
    rad = np.deg2rad(heading)
    pos_x = np.cumsum(speed * np.cos(rad)) * dt
    pos_z = np.cumsum(speed * np.sin(rad)) * dt
    pos_y = 1.65 + _smooth_noise(rng, n, dur, 1.0, 0.01 + 0.04 * severity * sep)
    rot_x = _smooth_noise(rng, n, dur, 2.0, sway) + rng.normal(0.0, 0.3, n)
    rot_y = heading + _smooth_noise(rng, n, dur, 2.0, sway) + rng.normal(0.0, 0.3, n)
    rot_z = _smooth_noise(rng, n, dur, 2.0, 0.5 * sway) + rng.normal(0.0, 0.3, n)

    # EDA ------------------------------------------------------------------
    m = dur * cfg.eda_hz
    t_eda = np.arange(m) / cfg.eda_hz
    tonic_base = rng.uniform(1.0, 3.0) + 2.5 * severity * sep
    drift = (0.5 + 2.5 * severity) * sep * severity if sick else rng.normal(0.0, 0.05)
    tonic = tonic_base + drift * t_eda / dur + _smooth_noise(rng, m, dur, 0.05, 0.05)
    rate = (cfg.sick_scr_per_min if sick else cfg.nonsick_scr_per_min) / 60.0
    n_bursts = rng.poisson(rate * dur)
    onsets = np.sort(rng.uniform(0.0, dur, n_bursts))
    amps = rng.uniform(0.05, 0.4, n_bursts) * (1.0 + severity)
    phasic = np.zeros(m)
    for onset, amp in zip(onsets, amps):
        tau = np.clip(t_eda - onset, 0.0, None)
        phasic += amp * (1.0 - np.exp(-tau / 0.75)) * np.exp(-tau / 2.0) / 0.5
    eda = np.clip(tonic + phasic + rng.normal(0.0, 0.005, m), 0.01, None)

    channels = {
        "pos_x": ChannelSeries("pos_x", cfg.kinematic_hz, pos_x),
        "pos_y": ChannelSeries("pos_y", cfg.kinematic_hz, pos_y),
        "pos_z": ChannelSeries("pos_z", cfg.kinematic_hz, pos_z),
        "rot_x": ChannelSeries("rot_x", cfg.kinematic_hz, rot_x),
        "rot_y": ChannelSeries("rot_y", cfg.kinematic_hz, rot_y),
        "rot_z": ChannelSeries("rot_z", cfg.kinematic_hz, rot_z),
        "speed": ChannelSeries("speed", cfg.kinematic_hz, speed),
        "rotation": ChannelSeries("rotation", cfg.kinematic_hz, rotation),
        "eda": ChannelSeries("eda", cfg.eda_hz, eda),
    }
    if cfg.include_optional:
        nb = dur * cfg.bvp_hz
        tb = np.arange(nb) / cfg.bvp_hz
        bvp = np.sin(2 * np.pi * rng.uniform(1.0, 1.4) * tb) * 40 + rng.normal(0, 5, nb)
        nt = dur * cfg.tem_hz
        tem = 34.0 + _smooth_noise(rng, nt, dur, 0.05, 0.3) + rng.normal(0, 0.02, nt)
        channels["bvp"] = ChannelSeries("bvp", cfg.bvp_hz, bvp)
        channels["tem"] = ChannelSeries("tem", cfg.tem_hz, tem)

    sid = session_id if session_id is not None else f"synth-{int(seed)}"
    return RawSession(
        session_id=sid,
        participant_id=participant_id if participant_id is not None else sid,
        duration_s=dur,
        channels=channels,
        ssq_pre=pre,
        ssq_post=post,
    )


def generate_cohort(
    n_sessions: int, config: GeneratorConfig | None = None, seed: int = 0
) -> list[RawSession]:
    """``n_sessions`` independent sessions with per-session seeds derived from ``seed``."""
    if n_sessions < 1:
        raise InvalidInputError("n_sessions must be >= 1")
    children = np.random.SeedSequence(int(seed)).generate_state(n_sessions, dtype=np.uint64)
    return [
        generate_synthetic_session(
            config, int(s), session_id=f"s{i:04d}", participant_id=f"p{i:04d}"
        )
        for i, s in enumerate(children)
    ]
