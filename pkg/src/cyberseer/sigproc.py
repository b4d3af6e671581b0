"""Signal transforms: block-mean downsampling, EDA tonic/phasic split, SCR
event detection, trailing-window statistics, first differences and min-max
normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError, StateError, UnsupportedRateError
from .telemetry import ChannelSeries, _as_rate

# decomposition / detection defaults
SCL_MEDIAN_WINDOW_S = 10.0
SCL_SMOOTH_WINDOW_S = 4.0
SCR_THRESHOLD_US = 0.01
SCR_OFFSET_FRACTION = 0.10


@dataclass(frozen=True)
class EdaDecomposition:
    scl: ChannelSeries
    scr: ChannelSeries


@dataclass(frozen=True)
class ScrEvent:
    onset_idx: int
    peak_idx: int
    offset_idx: int
    amplitude: float
    duration_s: float
    area: float


class TrailingStats(NamedTuple):
    min: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    std: np.ndarray


def _values(series) -> np.ndarray:
    if isinstance(series, ChannelSeries):
        return series.values
    return np.asarray(series, dtype=np.float64).reshape(-1)


def downsample_mean(series: ChannelSeries, target_hz) -> ChannelSeries:
    """Average consecutive blocks of ``rate / target_hz`` samples.

    The trailing partial block is dropped.
    """
    target = _as_rate(target_hz)
    if target <= 0:
        raise InvalidInputError("target rate must be positive")
    ratio = series.rate_hz / target
    if ratio.denominator != 1 or ratio < 1:
        raise UnsupportedRateError(
            f"{series.name}: {series.rate_hz} Hz is not an integer multiple of {target} Hz"
        )
    block = int(ratio)
    n_blocks = len(series) // block
    if n_blocks == 0:
        raise InvalidInputError(f"{series.name}: fewer samples than one block")
    kept = series.values[: n_blocks * block].reshape(n_blocks, block)
    return series.with_values(kept.mean(axis=1), rate_hz=target)


def first_difference(series):
    """``out[0] = 0`` and ``out[t] = x[t] - x[t-1]``; accepts arrays or ChannelSeries."""
    x = _values(series)
    if x.size == 0:
        raise InvalidInputError("first_difference of an empty series")
    out = np.empty_like(x)
    out[0] = 0.0
    np.subtract(x[1:], x[:-1], out=out[1:])
    if isinstance(series, ChannelSeries):
        return series.with_values(out)
    return out


def trailing_stats(series, window_s: int = 3) -> TrailingStats:
    """Min, max, mean and population std over ``[max(0, t-w+1), t]`` at each t.

    Expects 1 Hz input, so ``window_s`` is also the window length in samples.
    """
    x = _values(series)
    if x.size == 0:
        raise InvalidInputError("trailing_stats of an empty series")
    w = int(window_s)
    if w < 1:
        raise InvalidInputError("window_s must be >= 1")
    # pad the head with NaN so every position sees a full-width window
    padded = np.concatenate([np.full(w - 1, np.nan), x])
    win = sliding_window_view(padded, w)
    counts = np.minimum(np.arange(1, x.size + 1), w)
    lo = np.nanmin(win, axis=1) if w > 1 else x.copy()
    hi = np.nanmax(win, axis=1) if w > 1 else x.copy()
    mean = np.nansum(win, axis=1) / counts
    dev = np.where(np.isnan(win), 0.0, win - mean[:, None])
    std = np.sqrt(np.sum(dev * dev, axis=1) / counts)
    # guard against rounding pushing the mean outside [min, max]
    mean = np.clip(mean, lo, hi)
    return TrailingStats(lo, hi, mean, std)


def _centered_window(x: np.ndarray, half: int, reducer) -> np.ndarray:
    n = x.size
    if half == 0:
        return x.copy()
    out = np.empty(n)
    if n > 2 * half:
        out[half : n - half] = reducer(sliding_window_view(x, 2 * half + 1), axis=1)
        edges = list(range(half)) + list(range(n - half, n))
    else:
        edges = range(n)
    for i in edges:
        out[i] = reducer(x[max(0, i - half) : min(n, i + half + 1)])
    return out


def _bounded_mean(a: np.ndarray, axis=None) -> np.ndarray:
    # rounding may leave the mean of equal values a few ulps off; clip so constants stay exact
    return np.clip(np.mean(a, axis=axis), np.min(a, axis=axis), np.max(a, axis=axis))


def decompose_eda(
    eda: ChannelSeries,
    median_window_s: float = SCL_MEDIAN_WINDOW_S,
    smooth_window_s: float = SCL_SMOOTH_WINDOW_S,
) -> EdaDecomposition:
    """Split EDA into tonic (SCL) and phasic (SCR) parts.

    SCL is a centered moving median (edge-truncated) followed by a centered
    moving average; SCR is the residual, so ``scl + scr`` reproduces the input.
    """
    x = eda.values
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("EDA contains non-finite samples")
    rate = float(eda.rate_hz)
    med_half = int(round(median_window_s * rate / 2))
    avg_half = int(round(smooth_window_s * rate / 2))
    scl = _centered_window(x, med_half, np.median)
    scl = _centered_window(scl, avg_half, _bounded_mean)
    scr = x - scl
    return EdaDecomposition(
        scl=eda.with_values(scl, name="scl"),
        scr=eda.with_values(scr, name="scr"),
    )


def detect_scr_events(
    scr,
    threshold_uS: float = SCR_THRESHOLD_US,
    rate_hz=4,
    offset_fraction: float = SCR_OFFSET_FRACTION,
) -> list[ScrEvent]:
    """Detect phasic responses.

    A peak is a sample strictly above its predecessor and not below its
    successor (the final sample counts if it is rising). Its onset is the
    bottom of the strictly rising run that leads to it; the response is kept
    when ``scr[peak] - scr[onset] >= threshold_uS``. The offset is the first
    later sample at or below ``onset + offset_fraction * amplitude``, capped
    by the next kept onset and the end of the signal.
    """
    if isinstance(scr, ChannelSeries):
        rate_hz = scr.rate_hz
    x = _values(scr)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("SCR contains non-finite samples")
    if threshold_uS <= 0:
        raise InvalidInputError("threshold must be positive")
    rate = float(_as_rate(rate_hz))
    n = x.size
    if n < 2:
        return []

    rising = np.empty(n, dtype=bool)
    rising[0] = False
    rising[1:] = x[1:] > x[:-1]
    not_falling = np.ones(n, dtype=bool)
    not_falling[:-1] = x[:-1] >= x[1:]
    peaks = np.flatnonzero(rising & not_falling)

    candidates: list[tuple[int, int, float]] = []
    for p in peaks:
        j = int(p)
        while j > 0 and x[j - 1] < x[j]:
            j -= 1
        amp = float(x[p] - x[j])
        if amp >= threshold_uS:
            candidates.append((j, int(p), amp))

    events: list[ScrEvent] = []
    for k, (onset, peak, amp) in enumerate(candidates):
        limit = candidates[k + 1][0] if k + 1 < len(candidates) else n - 1
        level = x[onset] + offset_fraction * amp
        below = np.flatnonzero(x[peak + 1 : limit + 1] <= level)
        offset = peak + 1 + int(below[0]) if below.size else limit
        seg = np.clip(x[onset : offset + 1] - x[onset], 0.0, None)
        area = float(np.sum(seg[1:] + seg[:-1]) / (2.0 * rate))
        events.append(
            ScrEvent(
                onset_idx=onset,
                peak_idx=peak,
                offset_idx=offset,
                amplitude=amp,
                duration_s=(offset - onset) / rate,
                area=area,
            )
        )
    return events


@dataclass(frozen=True)
class NormalizerStats:
    """Per-feature minima and maxima learned from training rows."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64, copy=True)
        hi = np.array(self.max, dtype=np.float64, copy=True)
        if lo.shape != hi.shape or np.any(hi < lo):
            raise InvalidInputError("normalizer requires max >= min per feature")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def n_features(self) -> int:
        return self.min.size


def fit_normalizer(feature_rows) -> NormalizerStats:
    """Fit on a (rows, features) matrix."""
    m = np.asarray(feature_rows, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] < 1:
        raise InvalidInputError("fit_normalizer needs at least one row")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("fit_normalizer input must be finite")
    return NormalizerStats(m.min(axis=0), m.max(axis=0))


def apply_normalizer(stats: NormalizerStats | None, matrix) -> np.ndarray:
    """Scale to [0, 1] per feature (last axis), clamping; constant features map to 0.5."""
    if stats is None:
        raise StateError("normalizer applied before fit")
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape[-1] != stats.n_features:
        raise InvalidInputError(
            f"expected {stats.n_features} features, got {m.shape[-1]}"
        )
    span = stats.max - stats.min
    constant = span == 0
    safe = np.where(constant, 1.0, span)
    out = np.clip((m - stats.min) / safe, 0.0, 1.0)
    return np.where(constant, 0.5, out)


class MinMaxNormalizer:
    """Stateful wrapper: ``fit`` then ``transform``."""

    def __init__(self):
        self.stats: NormalizerStats | None = None

    @property
    def fitted(self) -> bool:
        return self.stats is not None

    def fit(self, rows) -> "MinMaxNormalizer":
        self.stats = fit_normalizer(rows)
        return self

    def transform(self, matrix) -> np.ndarray:
        return apply_normalizer(self.stats, matrix)
