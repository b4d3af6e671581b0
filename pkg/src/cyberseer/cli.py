"""``cyberseer`` command line: generate, validate, featurize, train, eval,
sweep, tune and stats.

Settings come from an optional JSON ``--config`` file; flags given on the
command line win. Failures print one JSON line ``{"error": kind, ...}`` to
stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import experiments, features, models, stats, telemetry
from .errors import CyberseerError, InvalidInputError
from .nnet import load_checkpoint, predict, save_checkpoint, train
from .sigproc import NormalizerStats

log = logging.getLogger("cyberseer")

DEFAULTS = {
    "data_root": "data",
    "ts": 30,
    "k": 5,
    "grouping": "session",
    "preset": "kinematic",
    "seed": 0,
    "jobs": 1,
    "control": "none",
    "budget": 10,
    "sessions": 40,
    "spans": "10,15,20,30,40",
    "models": ",".join(models.ARCHITECTURES),
}


class UsageError(CyberseerError):
    kind = "usage"


class ValidationFailed(CyberseerError):
    kind = "validation_failed"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated integers, got {text!r}") from None


def _seed(value) -> int:
    s = int(value)
    if not 0 <= s < 2**64:
        raise InvalidInputError("seeds must be unsigned 64-bit integers")
    return s


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cyberseer", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *names):
        sp.add_argument("--config", help="JSON file of default settings")
        opts = {
            "data_root": dict(help="directory of session folders"),
            "ts": dict(type=int, help="segment time span in seconds"),
            "k": dict(type=int, help="number of CV folds"),
            "grouping": dict(choices=experiments.GROUPINGS, help="fold grouping"),
            "preset": dict(choices=models.ARCHITECTURES, help="model architecture preset"),
            "seed": dict(type=int, help="master seed"),
            "jobs": dict(type=int, help="parallel fold workers"),
            "epochs": dict(type=int, help="training epochs (default 100)"),
            "out": dict(help="output path"),
            "store": dict(help="feature store written by featurize"),
        }
        for name in names:
            sp.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **opts[name])

    g = sub.add_parser("generate", help="write synthetic sessions")
    common(g, "data_root", "seed")
    g.add_argument("--sessions", type=int, default=None, help="number of sessions")

    v = sub.add_parser("validate", help="check session integrity")
    common(v, "data_root")
    v.add_argument("paths", nargs="*", help="manifest files or session directories")

    f = sub.add_parser("featurize", help="build a feature store")
    common(f, "data_root", "ts", "out")
    f.add_argument("--csv", default=None, help="also export a flat CSV here")

    t = sub.add_parser("train", help="train one model and save a checkpoint")
    common(t, "data_root", "ts", "preset", "seed", "epochs", "out", "store")

    e = sub.add_parser("eval", help="score a checkpoint on a feature store")
    common(e, "data_root", "ts", "store")
    e.add_argument("--checkpoint", required=True)

    s = sub.add_parser("sweep", help="time-span or exposure-time sweep")
    common(s, "data_root", "k", "grouping", "seed", "jobs", "epochs", "out")
    s.add_argument("--spans", default=None, help="comma-separated spans")
    s.add_argument("--control", choices=("none", "downsample"), default=None)
    s.add_argument("--exposure-n", dest="exposure_n", default=None,
                   help="comma-separated segment counts to drop; switches to the exposure sweep")
    s.add_argument("--models", default=None, help="comma-separated architectures")
    s.add_argument("--ts", type=int, default=None, help="span for the exposure sweep (default 20)")

    u = sub.add_parser("tune", help="seeded random search over hyperparameters")
    common(u, "data_root", "ts", "k", "grouping", "preset", "seed", "jobs", "epochs", "out", "store")
    u.add_argument("--budget", type=int, default=None)
    u.add_argument("--include-preset", action="store_true")

    st = sub.add_parser("stats", help="t-test, Pearson or chi-square on a CSV")
    st.add_argument("test", choices=("ttest", "pearson", "chi2"))
    st.add_argument("--config", help="JSON file of default settings")
    st.add_argument("--file", required=True)
    st.add_argument("--group-col", dest="group_col", default=None, help="ttest: two-level group column")
    st.add_argument("--value-col", dest="value_col", default=None, help="ttest: value column")
    st.add_argument("--x-col", dest="x_col", default=None)
    st.add_argument("--y-col", dest="y_col", default=None)
    return p


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from DEFAULTS."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    for key, value in vars(args).items():
        if value is None:
            value = cfg.get(key, cfg.get(key.replace("_", "-"), DEFAULTS.get(key)))
            setattr(args, key, value)
    args.settings = cfg
    if getattr(args, "seed", None) is not None:
        args.seed = _seed(args.seed)
    if getattr(args, "ts", None) is not None and args.ts not in features.ALLOWED_SPANS:
        raise InvalidInputError(f"--ts must be one of {features.ALLOWED_SPANS}")
    return args


# --- data helpers --------------------------------------------------------------------


def _manifests(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise InvalidInputError(f"data root {root} does not exist")
    found = sorted(root.glob("*/manifest.json"))
    if not found:
        raise InvalidInputError(f"no sessions under {root}")
    return found


def _sessions(root) -> list[telemetry.RawSession]:
    """Load every session under ``root``, dropping those that fail validation."""
    kept, rejected = telemetry.discard_invalid(telemetry.load_session(m) for m in _manifests(root))
    for rep in rejected:
        log.warning("discarding %s: %d violations", rep.session_id, len(rep.violations))
    if not kept:
        raise InvalidInputError("every session failed validation")
    return kept


def _dataset(args) -> features.SegmentDataset:
    if getattr(args, "store", None):
        return features.load_feature_store(args.store)
    sessions = _sessions(args.data_root)
    return features.build_dataset(sessions, args.ts, _feature_config(args))


def _feature_config(args) -> features.FeatureConfig:
    return features.FeatureConfig(**args.settings.get("features", {}))


def _render_stats(s: NormalizerStats | None):
    if s is None:
        return None
    return {"min": [format(v, ".17g") for v in s.min], "max": [format(v, ".17g") for v in s.max]}


def _parse_stats(d) -> NormalizerStats | None:
    if d is None:
        return None
    return NormalizerStats([float(v) for v in d["min"]], [float(v) for v in d["max"]])


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# --- commands ----------------------------------------------------------------------


def cmd_generate(args) -> int:
    gen = telemetry.GeneratorConfig(**args.settings.get("generator", {}))
    root = Path(args.data_root)
    sessions = telemetry.generate_cohort(args.sessions, gen, seed=args.seed)
    for s in sessions:
        telemetry.save_session(s, root / s.session_id)
    _emit({"sessions": len(sessions), "data_root": str(root)})
    return 0


def cmd_validate(args) -> int:
    paths = [Path(p) for p in args.paths] or _manifests(args.data_root)
    failed = 0
    for path in paths:
        rep = telemetry.validate_session(telemetry.load_session(path))
        failed += not rep.passed
        _emit({
            "session_id": rep.session_id,
            "passed": rep.passed,
            "violations": [asdict(v) for v in rep.violations],
        })
    if failed:
        raise ValidationFailed(f"{failed} of {len(paths)} sessions failed validation")
    return 0


def cmd_featurize(args) -> int:
    data = _dataset(args)
    out = Path(args.out or Path(args.data_root) / f"features_T{args.ts}.csf")
    features.save_feature_store(data, out)
    if args.csv:
        features.export_csv(data, args.csv)
    _emit({"store": str(out), "segments": len(data), "sessions": data.n_sessions, "T_s": data.span_s})
    return 0


def cmd_train(args) -> int:
    data = _dataset(args)
    arch = args.preset
    hp = models.PARAM_CLASSES[arch].from_dict(
        {**models.preset(arch).to_dict(), **args.settings.get("hyperparams", {})}
    )
    seeds = experiments.fold_seeds(args.seed, arch, "T_s", data.span_s, 0)
    idx = np.arange(len(data))
    art = experiments.prepare_fold(data, idx, arch, epochs=args.epochs, seeds=seeds)
    cfg = models.train_config_for(hp, shuffle_seed=seeds[1])
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if arch == "enhanced":
        g = models.build_enhanced_model(hp, art.teacher.width(models.REPRESENTATION_LAYER), seed=seeds[0])
        hist = models.train_enhanced(g, art.teacher_reps, art.data, hp, cfg, idx)
    else:
        g = models.build_model(arch, hp, seed=seeds[0])
        hist = train(g, art.data.inputs(), art.data.labels, cfg)
    g.metadata["normalizer"] = {
        "kinematic": _render_stats(art.normalizer.kinematic),
        "eda_ts": _render_stats(art.normalizer.eda_ts),
        "eda_num": _render_stats(art.normalizer.eda_num),
    }
    g.metadata["T_s"] = data.span_s
    out = Path(args.out or f"{arch}_T{data.span_s}.ckpt.json")
    save_checkpoint(g, out)
    _emit({"checkpoint": str(out), "final_loss": hist.loss[-1], "train_accuracy": hist.accuracy[-1]})
    return 0


def cmd_eval(args) -> int:
    g = load_checkpoint(args.checkpoint)
    data = _dataset(args)
    stored = g.metadata.get("normalizer")
    if stored is None:
        raise InvalidInputError("checkpoint carries no normalizer")
    norm = features.DatasetNormalizer(
        _parse_stats(stored["kinematic"]), _parse_stats(stored["eda_ts"]), _parse_stats(stored["eda_num"])
    )
    normed = features.normalize_dataset(data, norm)
    p = predict(g, normed.inputs())
    acc, f1 = experiments.metrics((p > 0.5).astype(np.int64), normed.labels)
    _emit({"accuracy": acc, "f1": f1, "n_samples": len(data)})
    return 0


def cmd_sweep(args) -> int:
    sessions = _sessions(args.data_root)
    spec = experiments.FoldSpec(args.k, args.grouping, args.seed)
    names = [m for m in str(args.models).split(",") if m]
    common = dict(fold_spec=spec, seed=args.seed, epochs=args.epochs, jobs=args.jobs,
                  feature_config=_feature_config(args))
    if args.exposure_n:
        if args.models == DEFAULTS["models"]:
            names = ["kinematic", "eda"]
        report = experiments.exposure_sweep(
            sessions, args.ts or 20, _int_list(args.exposure_n), names, **common
        )
        stem = "exposure"
    else:
        report = experiments.time_span_sweep(
            sessions, _int_list(args.spans), names, args.control == "downsample", **common
        )
        stem = "span_downsampled" if args.control == "downsample" else "span"
    detail, agg = report.write(args.out or "reports", stem)
    _emit({"report": str(detail), "aggregate": str(agg), "cells": len(report.cells)})
    return 0


def cmd_tune(args) -> int:
    data = _dataset(args)
    spec = experiments.FoldSpec(args.k, args.grouping, args.seed)
    res = experiments.tune_random_search(
        data, args.preset, args.budget, args.seed, fold_spec=spec,
        include_preset=args.include_preset, epochs=args.epochs, jobs=args.jobs,
    )
    doc = {"best": res.best.to_dict(), "best_score": res.best_score, "trials": res.log_rows()}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    _emit({"best": res.best.to_dict(), "best_score": res.best_score})
    return 0


def _read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from None


def _column(rows, name) -> np.ndarray:
    try:
        return np.array([float(r[name]) for r in rows])
    except KeyError:
        raise InvalidInputError(f"no column {name!r}") from None
    except ValueError as exc:
        raise InvalidInputError(f"column {name!r} is not numeric: {exc}") from None


def _numeric_columns(header, rows, exclude=()) -> list[str]:
    out = []
    for name in header:
        if name in exclude:
            continue
        try:
            [float(r[name]) for r in rows]
        except (TypeError, ValueError):
            continue
        out.append(name)
    return out


def cmd_stats(args) -> int:
    header, rows = _read_csv(args.file)
    if args.test == "ttest":
        if not args.group_col:
            raise InvalidInputError("ttest needs --group-col")
        value_col = args.value_col or next(iter(_numeric_columns(header, rows, {args.group_col})), None)
        if value_col is None:
            raise InvalidInputError("no numeric value column")
        groups = sorted({r[args.group_col] for r in rows})
        if len(groups) != 2:
            raise InvalidInputError(f"--group-col must have exactly 2 levels, found {len(groups)}")
        values = _column(rows, value_col)
        labels = np.array([r[args.group_col] for r in rows])
        res = stats.t_test_independent(values[labels == groups[0]], values[labels == groups[1]])
    elif args.test == "pearson":
        cols = _numeric_columns(header, rows)
        x = args.x_col or (cols[0] if cols else None)
        y = args.y_col or (cols[1] if len(cols) > 1 else None)
        if x is None or y is None:
            raise InvalidInputError("pearson needs two numeric columns")
        res = stats.pearson(_column(rows, x), _column(rows, y))
    else:
        cols = _numeric_columns(header, rows)
        res = stats.chi_square_independence([[float(r[c]) for c in cols] for r in rows])
    print("statistic,df,p_value")
    print(res.as_row())
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "validate": cmd_validate,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "tune": cmd_tune,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    level = os.environ.get("CYBERSEER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _resolve(build_parser().parse_args(argv))
        return COMMANDS[args.command](args)
    except CyberseerError as exc:
        err = {"error": exc.kind, "message": str(exc)}
        for attr in ("fold", "path", "row", "channel", "layer"):
            if getattr(exc, attr, None) is not None:
                err[attr] = str(getattr(exc, attr))
        print(json.dumps(err), file=sys.stderr)
        return 2
    except (OSError, TypeError, ValueError) as exc:
        print(json.dumps({"error": "invalid_input", "message": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
