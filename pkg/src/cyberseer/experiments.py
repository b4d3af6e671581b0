"""Cross-validation, span/exposure sweeps, random search and report files.

Every fold draws its seeds from ``(seed, cell, fold)`` where the cell is the
``(model, variable, value)`` triple, so results do not depend on execution
order or on how many worker processes run the folds.
"""

from __future__ import annotations

import io
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import models
from .errors import CyberseerError, FoldError, InvalidInputError
from .features import (
    ALLOWED_SPANS,
    DatasetNormalizer,
    FeatureConfig,
    ProcessedSession,
    SegmentDataset,
    build_dataset,
    fit_dataset_normalizer,
    n_segments,
    normalize_dataset,
    process_session,
)
from .models import HyperParams, TeacherRepresentation
from .nnet import ModelGraph, predict, train
from .telemetry import RawSession

log = logging.getLogger(__name__)

GROUPINGS = ("session", "segment")
REPORT_HEADER = ("model", "variable", "value", "fold", "accuracy", "f1", "n_samples", "grouping", "seed")
_MASK64 = 2**64 - 1


# --- metrics and folds -----------------------------------------------------------


def metrics(predictions, labels) -> tuple[float, float]:
    """Accuracy and F1 with sick (1) as the positive class."""
    p = np.asarray(predictions).reshape(-1).astype(np.int64)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if p.size != y.size:
        raise InvalidInputError("predictions and labels differ in length")
    if p.size == 0:
        raise InvalidInputError("metrics need at least one prediction")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    acc = float(np.mean(p == y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return acc, f1


@dataclass(frozen=True)
class FoldSpec:
    k: int = 5
    grouping: str = "session"
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise InvalidInputError("k must be >= 2")
        if self.grouping not in GROUPINGS:
            raise InvalidInputError(f"grouping must be one of {GROUPINGS}")


def kfold_split(n_items: int, spec: FoldSpec, groups: Sequence | None = None) -> list[np.ndarray]:
    """Partition ``range(n_items)`` into ``spec.k`` sorted index arrays.

    In session mode ``groups`` gives each item's session id and whole
    sessions are dealt out, so fold sizes differ by at most one session.
    """
    rng = np.random.default_rng([spec.seed & (2**63 - 1), spec.k])
    if spec.grouping == "segment":
        if n_items < spec.k:
            raise InvalidInputError(f"cannot split {n_items} items into {spec.k} folds")
        return [np.sort(f) for f in np.array_split(rng.permutation(n_items), spec.k)]
    if groups is None:
        raise InvalidInputError("session grouping needs the session id of every item")
    groups = np.asarray(groups)
    if groups.shape[0] != n_items:
        raise InvalidInputError("groups must have one entry per item")
    uniq, inverse = np.unique(groups, return_inverse=True)
    if uniq.size < spec.k:
        raise InvalidInputError(f"cannot split {uniq.size} sessions into {spec.k} folds")
    folds = []
    for chunk in np.array_split(rng.permutation(uniq.size), spec.k):
        folds.append(np.flatnonzero(np.isin(inverse, chunk)))
    return folds


def fold_seeds(seed: int, model: str, variable: str, value, fold: int) -> tuple[int, int, int, int]:
    """(student graph, student shuffle, teacher graph, teacher shuffle) seeds."""
    cell = zlib.crc32(f"{model}|{variable}|{value}".encode())
    ss = np.random.SeedSequence([int(seed) & _MASK64, cell, fold])
    return tuple(int(s) & (2**63 - 1) for s in ss.generate_state(4, dtype=np.uint64))


# --- one fold ------------------------------------------------------------------------


@dataclass
class FoldArtifacts:
    """Everything fitted on a fold's training rows before the model itself."""

    normalizer: DatasetNormalizer
    data: SegmentDataset  # normalized with ``normalizer``
    teacher: ModelGraph | None = None
    teacher_reps: np.ndarray | None = None  # aligned with the training rows


def prepare_fold(
    data: SegmentDataset,
    train_idx,
    arch: str,
    teacher_hp: HyperParams | None = None,
    epochs: int | None = None,
    batch_size: int = 64,
    seeds: tuple[int, int, int, int] = (0, 0, 0, 0),
) -> FoldArtifacts:
    """Fit the normalizer (and for ``enhanced`` the EDA teacher) on training rows only."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    norm = fit_dataset_normalizer(data, train_idx)
    normed = normalize_dataset(data, norm)
    art = FoldArtifacts(norm, normed)
    if arch == "enhanced":
        thp = teacher_hp or models.preset("eda")
        teacher = models.build_model("eda", thp, seed=seeds[2])
        cfg = models.train_config_for(thp, batch_size=batch_size, shuffle_seed=seeds[3])
        if epochs is not None:
            cfg = replace(cfg, epochs=epochs)
        train(teacher, normed.inputs(train_idx), normed.labels[train_idx], cfg)
        art.teacher = teacher
        art.teacher_reps = TeacherRepresentation(teacher).extract(normed, train_idx)
    return art


def run_fold(
    arch: str,
    data: SegmentDataset,
    train_idx,
    test_idx,
    hp: HyperParams | None = None,
    teacher_hp: HyperParams | None = None,
    epochs: int | None = None,
    batch_size: int = 64,
    seeds: tuple[int, int, int, int] = (0, 0, 0, 0),
) -> tuple[float, float]:
    """Train on ``train_idx`` and return (accuracy, F1) on ``test_idx``."""
    hp = hp or models.preset(arch)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    test_idx = np.asarray(test_idx, dtype=np.int64)
    art = prepare_fold(data, train_idx, arch, teacher_hp, epochs, batch_size, seeds)
    d = art.data
    cfg = models.train_config_for(hp, batch_size=batch_size, shuffle_seed=seeds[1])
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    if arch == "enhanced":
        width = art.teacher.width(models.REPRESENTATION_LAYER)
        g = models.build_enhanced_model(hp, width, seed=seeds[0])
        models.train_enhanced(g, art.teacher_reps, d, hp, cfg, train_idx)
        p = predict(g, {"kinematic": d.kinematic[test_idx]})
    else:
        g = models.build_model(arch, hp, seed=seeds[0])
        train(g, d.inputs(train_idx), d.labels[train_idx], cfg)
        p = predict(g, d.inputs(test_idx))
    return metrics((p > 0.5).astype(np.int64), d.labels[test_idx])


def _fold_task(args) -> tuple[float, float]:
    fold, kwargs = args
    try:
        return run_fold(**kwargs)
    except CyberseerError as exc:
        raise FoldError(fold, exc) from exc


# --- reports -------------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    """Per-fold scores of one (model, variable, value) cell."""

    model: str
    variable: str
    value: object
    accuracies: tuple[float, ...]
    f1s: tuple[float, ...]
    n_samples: int
    grouping: str
    seed: int

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1s))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class SweepReport:
    cells: list[CellResult] = field(default_factory=list)

    def rows(self) -> list[tuple]:
        out = []
        for c in self.cells:
            for i, (a, f) in enumerate(zip(c.accuracies, c.f1s)):
                out.append((c.model, c.variable, c.value, i, a, f, c.n_samples, c.grouping, c.seed))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(REPORT_HEADER) + "\n")
        for row in self.rows():
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def aggregate_csv(self, digits: int = 3) -> str:
        """``model`` rows by ``variable=value`` columns of ``mean±std`` accuracy."""
        columns: list[tuple[str, object]] = []
        table: dict[str, dict[tuple[str, object], CellResult]] = {}
        for c in self.cells:
            col = (c.variable, c.value)
            if col not in columns:
                columns.append(col)
            table.setdefault(c.model, {})[col] = c
        buf = io.StringIO()
        buf.write(",".join(["model"] + [f"{v}={x}" for v, x in columns]) + "\n")
        for model, cells in table.items():
            row = [model]
            for col in columns:
                c = cells.get(col)
                row.append("" if c is None else f"{c.mean_accuracy:.{digits}f}±{c.std_accuracy:.{digits}f}")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        detail = out / f"{stem}.csv"
        agg = out / f"{stem}_aggregate.csv"
        detail.write_text(self.to_csv(), encoding="utf-8")
        agg.write_text(self.aggregate_csv(), encoding="utf-8")
        return detail, agg

    def cell(self, model: str, value) -> CellResult:
        for c in self.cells:
            if c.model == model and c.value == value:
                return c
        raise KeyError((model, value))


# --- cross validation -------------------------------------------------------------


def run_cv(
    arch: str,
    data: SegmentDataset,
    fold_spec: FoldSpec = FoldSpec(),
    hp: HyperParams | None = None,
    *,
    teacher_hp: HyperParams | None = None,
    epochs: int | None = None,
    batch_size: int = 64,
    seed: int = 0,
    jobs: int = 1,
    variable: str = "T_s",
    value=None,
) -> CellResult:
    """k-fold CV of one architecture; normalizer and teacher are fold-local."""
    if arch not in models.ARCHITECTURES:
        raise InvalidInputError(f"unknown architecture {arch!r}")
    if len(data) == 0:
        raise InvalidInputError("empty dataset")
    value = data.span_s if value is None else value
    folds = kfold_split(len(data), fold_spec, data.session_ids)
    everything = np.arange(len(data))
    tasks = []
    for i, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(everything, test_idx)
        kwargs = dict(
            arch=arch,
            data=data,
            train_idx=train_idx,
            test_idx=test_idx,
            hp=hp,
            teacher_hp=teacher_hp,
            epochs=epochs,
            batch_size=batch_size,
            seeds=fold_seeds(seed, arch, variable, value, i),
        )
        tasks.append((i, kwargs))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            scores = list(pool.map(_fold_task, tasks))
    else:
        scores = [_fold_task(t) for t in tasks]
    for i, (a, _) in enumerate(scores):
        log.info("%s %s=%s fold %d accuracy %.4f", arch, variable, value, i, a)
    return CellResult(
        arch,
        variable,
        value,
        tuple(a for a, _ in scores),
        tuple(f for _, f in scores),
        len(data),
        fold_spec.grouping,
        int(seed),
    )


def subsample(n_items: int, size: int, seed: int, tag: str, value) -> np.ndarray:
    """Seeded uniform subsample without replacement, returned sorted."""
    if size > n_items:
        raise InvalidInputError(f"cannot draw {size} of {n_items} items")
    ss = np.random.SeedSequence([int(seed) & _MASK64, zlib.crc32(f"{tag}|{value}".encode())])
    return np.sort(np.random.default_rng(ss).choice(n_items, size, replace=False))


def _processed(sessions, cfg: FeatureConfig) -> list[ProcessedSession]:
    return [s if isinstance(s, ProcessedSession) else process_session(s, cfg) for s in sessions]


def time_span_sweep(
    sessions: Iterable[RawSession | ProcessedSession],
    spans: Sequence[int] = ALLOWED_SPANS,
    model_names: Sequence[str] = models.ARCHITECTURES,
    control: bool = False,
    fold_spec: FoldSpec = FoldSpec(),
    seed: int = 0,
    *,
    epochs: int | None = None,
    jobs: int = 1,
    feature_config: FeatureConfig | None = None,
    hyperparams: Mapping[str, HyperParams] | None = None,
) -> SweepReport:
    """Re-segment at every span and cross-validate each model.

    With ``control`` each span's segments are subsampled to the smallest
    span's count so sample size no longer varies with the span.
    """
    cfg = feature_config or FeatureConfig()
    processed = _processed(sessions, cfg)
    if not processed:
        raise InvalidInputError("no sessions")
    spans = [int(s) for s in spans]
    for s in spans:
        n_segments(processed[0].n_seconds, s)
        if processed[0].n_seconds % s:
            raise InvalidInputError(f"span {s} s does not divide the {processed[0].n_seconds} s session")
    datasets = {s: build_dataset(processed, s, cfg) for s in spans}
    if control:
        size = min(len(d) for d in datasets.values())
        datasets = {s: d.subset(subsample(len(d), size, seed, "control", s)) for s, d in datasets.items()}
    hyperparams = hyperparams or {}
    report = SweepReport()
    for arch in model_names:
        for s in spans:
            report.cells.append(
                run_cv(arch, datasets[s], fold_spec, hyperparams.get(arch),
                       epochs=epochs, seed=seed, jobs=jobs, variable="T_s", value=s)
            )
    return report


def truncate_exposure(data: SegmentDataset, n_removed: int) -> np.ndarray:
    """Rows left after dropping each session's first ``n_removed`` segments."""
    return np.flatnonzero(data.segment_index >= n_removed)


def exposure_sweep(
    sessions: Iterable[RawSession | ProcessedSession],
    span: int = 20,
    n_removed: Sequence[int] = (1, 2, 3, 4, 5),
    model_names: Sequence[str] = ("kinematic", "eda"),
    fold_spec: FoldSpec = FoldSpec(),
    seed: int = 0,
    *,
    epochs: int | None = None,
    jobs: int = 1,
    feature_config: FeatureConfig | None = None,
    hyperparams: Mapping[str, HyperParams] | None = None,
) -> SweepReport:
    """Drop the first n segments per session, equalize counts across n, then CV."""
    cfg = feature_config or FeatureConfig()
    processed = _processed(sessions, cfg)
    if not processed:
        raise InvalidInputError("no sessions")
    duration = processed[0].n_seconds
    per_session = n_segments(duration, span)
    for n in n_removed:
        if n < 0 or n >= per_session:
            raise InvalidInputError(
                f"removing {n} segments of {span} s leaves nothing of a {duration} s session"
            )
    full = build_dataset(processed, span, cfg)
    kept = {n: truncate_exposure(full, n) for n in n_removed}
    size = min(len(k) for k in kept.values())
    datasets = {n: full.subset(k[subsample(len(k), size, seed, "exposure", n)]) for n, k in kept.items()}
    hyperparams = hyperparams or {}
    report = SweepReport()
    for arch in model_names:
        for n in n_removed:
            report.cells.append(
                run_cv(arch, datasets[n], fold_spec, hyperparams.get(arch),
                       epochs=epochs, seed=seed, jobs=jobs, variable="n", value=n)
            )
    return report


# --- random search ---------------------------------------------------------------


def default_space(arch: str) -> dict[str, tuple]:
    """Search ranges centred on the preset values."""
    cls = models.PARAM_CLASSES[arch]
    space: dict[str, tuple] = {}
    for name in cls.__dataclass_fields__:
        if name.startswith("lstm_size"):
            space[name] = ("choice", (32, 64, 96, 128))
        elif name.startswith("dense_size"):
            space[name] = ("choice", (24, 32, 40, 48))
        elif name.startswith("rate"):
            space[name] = ("uniform", 0.1, 0.3)
        elif name == "lr":
            space[name] = ("loguniform", 1e-4, 5e-3)
        elif name.startswith("acti"):
            space[name] = ("choice", ("tanh", "relu", "sigmoid"))
        elif name == "beta":
            space[name] = ("loguniform", 0.01, 1.0)
        elif name == "loss":
            space[name] = ("choice", ("mse", "mae"))
    return space


def sample_params(space: Mapping[str, tuple], rng: np.random.Generator) -> dict:
    out = {}
    for name in sorted(space):
        dim = space[name]
        kind = dim[0]
        if kind == "choice":
            out[name] = dim[1][int(rng.integers(len(dim[1])))]
        elif kind == "uniform":
            out[name] = float(rng.uniform(dim[1], dim[2]))
        elif kind == "loguniform":
            out[name] = float(math.exp(rng.uniform(math.log(dim[1]), math.log(dim[2]))))
        else:
            raise InvalidInputError(f"unknown dimension kind {kind!r} for {name}")
    return out


@dataclass(frozen=True)
class Trial:
    params: HyperParams
    result: CellResult
    from_preset: bool = False


@dataclass(frozen=True)
class TuneResult:
    best: HyperParams
    best_score: float
    trials: tuple[Trial, ...]

    def log_rows(self) -> list[dict]:
        return [
            {"trial": i, "preset": t.from_preset, "mean_accuracy": t.result.mean_accuracy,
             "std_accuracy": t.result.std_accuracy, **t.params.to_dict()}
            for i, t in enumerate(self.trials)
        ]


def tune_random_search(
    data: SegmentDataset,
    arch: str,
    budget: int,
    seed: int = 0,
    space: Mapping[str, tuple] | None = None,
    fold_spec: FoldSpec = FoldSpec(),
    *,
    include_preset: bool = False,
    epochs: int | None = None,
    jobs: int = 1,
) -> TuneResult:
    """Seeded random search; each trial is scored by :func:`run_cv` with the
    same fold seeds, so the preset trial equals a plain CV run of the preset."""
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    space = default_space(arch) if space is None else dict(space)
    fields_ = models.PARAM_CLASSES[arch].__dataclass_fields__
    space = {k: v for k, v in space.items() if k in fields_}
    if not space:
        raise InvalidInputError("search space is empty")
    base = models.preset(arch)
    candidates: list[tuple[HyperParams, bool]] = []
    if include_preset:
        candidates.append((base, True))
    for t in range(budget):
        rng = np.random.default_rng([int(seed) & (2**63 - 1), t])
        candidates.append((replace(base, **sample_params(space, rng)), False))
    trials = []
    for hp, is_preset in candidates:
        res = run_cv(arch, data, fold_spec, hp, epochs=epochs, seed=seed, jobs=jobs)
        trials.append(Trial(hp, res, is_preset))
        log.info("trial %d mean accuracy %.4f", len(trials) - 1, res.mean_accuracy)
    best = max(range(len(trials)), key=lambda i: (trials[i].result.mean_accuracy, -i))
    return TuneResult(trials[best].params, trials[best].result.mean_accuracy, tuple(trials))
