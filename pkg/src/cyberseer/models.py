"""The four classifier architectures and the teacher-student training path.

Graph inputs are named ``kinematic`` (16 x T), ``eda_ts`` (15 x T) and
``eda_num`` (38). Every graph ends in the ``output`` dense(1, sigmoid) head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from typing import ClassVar, Mapping

import numpy as np

from .errors import InvalidInputError, StateError
from .features import N_EDA_TS, N_KINEMATIC, N_NUMERIC, SegmentDataset
from .nnet import CompositeLossSpec, History, ModelGraph, TrainConfig, activations, train
from .nnet.graph import ACTIVATIONS

ARCHITECTURES = ("eda", "kinematic", "fusion", "enhanced")
REPRESENTATION_LAYER = "representation"
EMBEDDING_LAYER = "embedding"


@dataclass(frozen=True)
class HyperParams:
    arch: ClassVar[str] = ""
    lr: float = 1e-3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("acti") and v not in ACTIVATIONS[:3]:
                raise InvalidInputError(f"{f.name}: activation must be tanh, relu or sigmoid")
            if f.name.startswith("rate") and not 0.0 <= v < 1.0:
                raise InvalidInputError(f"{f.name}: dropout rate must be in [0, 1)")
            if (f.name.startswith("dense_size") or f.name.startswith("lstm_size")) and v < 1:
                raise InvalidInputError(f"{f.name}: width must be >= 1")
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown {cls.arch} hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def reduced(self, max_lstm: int = 8, max_dense: int = 6) -> "HyperParams":
        """Same architecture with widths capped (for gradient checks)."""
        changes = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("lstm_size"):
                changes[f.name] = min(v, max_lstm)
            elif f.name.startswith("dense_size"):
                changes[f.name] = min(v, max_dense)
        return replace(self, **changes)


@dataclass(frozen=True)
class EdaParams(HyperParams):
    arch: ClassVar[str] = "eda"
    acti: str = "tanh"
    dense_size_1: int = 24
    dense_size_2: int = 48
    rate: float = 0.19
    lstm_size: int = 96


@dataclass(frozen=True)
class KinematicParams(HyperParams):
    arch: ClassVar[str] = "kinematic"
    acti: str = "relu"
    dense_size: int = 48
    rate: float = 0.1
    lstm_size: int = 128


@dataclass(frozen=True)
class FusionParams(HyperParams):
    arch: ClassVar[str] = "fusion"
    acti_1: str = "sigmoid"
    acti_2: str = "relu"
    dense_size_1: int = 40
    dense_size_2: int = 40
    rate: float = 0.1
    lstm_size_1: int = 32
    lstm_size_2: int = 128


@dataclass(frozen=True)
class EnhancedParams(HyperParams):
    arch: ClassVar[str] = "enhanced"
    acti_1: str = "relu"
    acti_2: str = "tanh"
    acti_3: str = "relu"
    dense_size_1: int = 48
    dense_size_2: int = 40
    # not tuned in the reference table; matches the fusion post-concat width
    dense_size_3: int = 40
    rate_1: float = 0.1
    rate_2: float = 0.15
    rate_3: float = 0.24
    lstm_size: int = 96
    beta: float = 0.11850082837080077
    loss: str = "mse"
    teacher_projection: bool = False

    def __post_init__(self):
        super().__post_init__()
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise InvalidInputError("beta must be non-negative")
        if self.loss not in ("mse", "mae"):
            raise InvalidInputError("loss must be 'mse' or 'mae'")


PARAM_CLASSES: dict[str, type[HyperParams]] = {
    "eda": EdaParams,
    "kinematic": KinematicParams,
    "fusion": FusionParams,
    "enhanced": EnhancedParams,
}


def load_presets(path=None) -> dict[str, HyperParams]:
    """Hyperparameter presets keyed by architecture (shipped ``presets.json`` by default)."""
    if path is None:
        text = resources.files("cyberseer").joinpath("presets.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    raw = json.loads(text)
    return {arch: PARAM_CLASSES[arch].from_dict(values) for arch, values in raw.items()}


def preset(arch: str) -> HyperParams:
    if arch not in PARAM_CLASSES:
        raise InvalidInputError(f"unknown architecture {arch!r}")
    return load_presets()[arch]


# --- builders ----------------------------------------------------------------------


def _check(hp, cls):
    if not isinstance(hp, cls):
        raise InvalidInputError(f"expected {cls.__name__}, got {type(hp).__name__}")


def build_eda_model(hp: EdaParams, seed: int = 0) -> ModelGraph:
    _check(hp, EdaParams)
    g = ModelGraph(seed, metadata={"arch": "eda", "hyperparams": hp.to_dict()})
    g.add_input("eda_ts", N_EDA_TS)
    g.add_input("eda_num", N_NUMERIC, sequence=False)
    g.add_lstm("lstm", "eda_ts", hp.lstm_size)
    g.add_dense("num_dense", "eda_num", hp.dense_size_1, hp.acti)
    g.add_concat(REPRESENTATION_LAYER, ["lstm", "num_dense"])
    g.add_dropout("dropout", REPRESENTATION_LAYER, hp.rate)
    g.add_dense("dense", "dropout", hp.dense_size_2, hp.acti)
    g.add_dense("output", "dense", 1, "sigmoid")
    g.set_output("output")
    g.metadata["representation_width"] = g.width(REPRESENTATION_LAYER)
    return g


def build_kinematic_model(hp: KinematicParams, seed: int = 0) -> ModelGraph:
    _check(hp, KinematicParams)
    g = ModelGraph(seed, metadata={"arch": "kinematic", "hyperparams": hp.to_dict()})
    g.add_input("kinematic", N_KINEMATIC)
    g.add_lstm("lstm", "kinematic", hp.lstm_size)
    g.add_dropout("dropout", "lstm", hp.rate)
    g.add_dense("dense", "dropout", hp.dense_size, hp.acti)
    g.add_dense("output", "dense", 1, "sigmoid")
    g.set_output("output")
    return g


def build_fusion_model(hp: FusionParams, seed: int = 0) -> ModelGraph:
    _check(hp, FusionParams)
    g = ModelGraph(seed, metadata={"arch": "fusion", "hyperparams": hp.to_dict()})
    g.add_input("eda_ts", N_EDA_TS)
    g.add_input("kinematic", N_KINEMATIC)
    g.add_input("eda_num", N_NUMERIC, sequence=False)
    g.add_lstm("eda_lstm", "eda_ts", hp.lstm_size_1)
    g.add_lstm("kin_lstm", "kinematic", hp.lstm_size_2)
    g.add_dense("num_dense", "eda_num", hp.dense_size_1, hp.acti_1)
    g.add_concat("concat", ["eda_lstm", "kin_lstm", "num_dense"])
    g.add_dropout("dropout", "concat", hp.rate)
    g.add_dense("dense", "dropout", hp.dense_size_2, hp.acti_2)
    g.add_dense("output", "dense", 1, "sigmoid")
    g.set_output("output")
    return g


def build_enhanced_model(hp: EnhancedParams, teacher_width: int, seed: int = 0) -> ModelGraph:
    """Kinematic-only student whose ``embedding`` layer regresses the teacher.

    The embedding width equals ``teacher_width`` unless ``hp.teacher_projection``
    is set, in which case it is ``hp.dense_size_1`` and the teacher vectors
    are projected down (see :class:`TeacherProjection`).
    """
    _check(hp, EnhancedParams)
    if teacher_width is None or int(teacher_width) <= 0:
        raise InvalidInputError("teacher_width must be positive")
    emb = hp.dense_size_1 if hp.teacher_projection else int(teacher_width)
    g = ModelGraph(
        seed,
        metadata={
            "arch": "enhanced",
            "hyperparams": hp.to_dict(),
            "teacher_width": int(teacher_width),
            "embedding_width": emb,
        },
    )
    g.add_input("kinematic", N_KINEMATIC)
    g.add_lstm("lstm", "kinematic", hp.lstm_size)
    g.add_dropout("emb_dropout", "lstm", hp.rate_1)
    g.add_dense(EMBEDDING_LAYER, "emb_dropout", emb, hp.acti_1)
    g.add_dropout("kin_dropout", "lstm", hp.rate_2)
    g.add_dense("kin_dense", "kin_dropout", hp.dense_size_2, hp.acti_2)
    g.add_concat("concat", [EMBEDDING_LAYER, "kin_dense"])
    g.add_dropout("dropout", "concat", hp.rate_3)
    g.add_dense("dense", "dropout", hp.dense_size_3, hp.acti_3)
    g.add_dense("output", "dense", 1, "sigmoid")
    g.set_output("output")
    return g


def build_model(arch: str, hp: HyperParams | None = None, seed: int = 0, teacher_width: int | None = None) -> ModelGraph:
    hp = hp or preset(arch)
    if arch == "eda":
        return build_eda_model(hp, seed)
    if arch == "kinematic":
        return build_kinematic_model(hp, seed)
    if arch == "fusion":
        return build_fusion_model(hp, seed)
    if arch == "enhanced":
        if teacher_width is None:
            teacher_width = representation_width(preset("eda"))
        return build_enhanced_model(hp, teacher_width, seed)
    raise InvalidInputError(f"unknown architecture {arch!r}")


def representation_width(hp: EdaParams) -> int:
    return hp.lstm_size + hp.dense_size_1


def lstm_param_count(units: int, inputs: int) -> int:
    return 4 * units * (units + inputs + 1)


def dense_param_count(units: int, inputs: int) -> int:
    return units * (inputs + 1)


def branch_structure(graph: ModelGraph, drop_inputs=()) -> list[tuple]:
    """Layer kinds/widths after deleting the branches fed by ``drop_inputs``.

    Concats left with a single operand collapse away, so stripping the EDA
    branches from the fusion model exposes its kinematic skeleton.
    """
    removed = set(drop_inputs)
    out = []
    for name, spec in graph.layers.items():
        if name in removed:
            continue
        srcs = [s for s in spec.inputs if s not in removed]
        if spec.inputs and not srcs:
            removed.add(name)
            continue
        if spec.kind == "concat" and len(srcs) == 1:
            continue
        out.append((spec.kind, spec.units, spec.activation if spec.kind == "dense" else None))
    return out


# --- teacher and student ---------------------------------------------------------


class TeacherRepresentation:
    """Inference-mode ``representation`` vectors of a trained EDA model,
    cached by ``(session_id, segment_index)``."""

    def __init__(self, teacher: ModelGraph):
        if not teacher.trained:
            raise StateError("teacher model has not been trained")
        if REPRESENTATION_LAYER not in teacher.layers:
            raise InvalidInputError("teacher graph has no representation layer")
        self.teacher = teacher
        self.width = teacher.width(REPRESENTATION_LAYER)
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def __contains__(self, key) -> bool:
        return key in self._cache

    def __len__(self) -> int:
        return len(self._cache)

    def extract(self, data: SegmentDataset, idx=None) -> np.ndarray:
        """Vectors for the selected rows, computing only rows not yet cached."""
        rows = np.arange(len(data)) if idx is None else np.asarray(idx, dtype=np.int64)
        keys = [(str(data.session_ids[i]), int(data.segment_index[i])) for i in rows]
        todo = [r for r, k in zip(rows, keys) if k not in self._cache]
        if todo:
            reps = activations(self.teacher, data.inputs(todo), REPRESENTATION_LAYER)
            for r, vec in zip(todo, reps):
                vec = vec.copy()
                vec.setflags(write=False)
                self._cache[(str(data.session_ids[r]), int(data.segment_index[r]))] = vec
        if not keys:
            return np.empty((0, self.width))
        return np.stack([self._cache[k] for k in keys])

    def lookup(self, keys) -> np.ndarray:
        try:
            return np.stack([self._cache[(str(s), int(k))] for s, k in keys])
        except KeyError as exc:
            raise StateError(f"no teacher vector for segment {exc.args[0]}") from None


def extract_teacher_representation(teacher: ModelGraph, data: SegmentDataset, idx=None) -> np.ndarray:
    return TeacherRepresentation(teacher).extract(data, idx)


class TeacherProjection:
    """Fixed Gaussian projection from the teacher width down to ``out_width``."""

    def __init__(self, in_width: int, out_width: int, seed: int = 0):
        rng = np.random.default_rng([int(seed) & (2**63 - 1), in_width, out_width])
        self.matrix = rng.normal(0.0, 1.0 / np.sqrt(in_width), size=(in_width, out_width))

    def __call__(self, reps: np.ndarray) -> np.ndarray:
        return reps @ self.matrix


def student_loss_spec(hp: EnhancedParams, beta: float | None = None) -> CompositeLossSpec:
    return CompositeLossSpec(
        beta=hp.beta if beta is None else beta, reg_kind=hp.loss, embedding=EMBEDDING_LAYER
    )


def student_targets(
    student: ModelGraph, teacher_reps: np.ndarray, hp: EnhancedParams, seed: int = 0
) -> np.ndarray:
    reps = np.asarray(teacher_reps, dtype=np.float64)
    if hp.teacher_projection:
        return TeacherProjection(reps.shape[1], student.width(EMBEDDING_LAYER), seed)(reps)
    if reps.shape[1] != student.width(EMBEDDING_LAYER):
        raise InvalidInputError("teacher width does not match the student embedding")
    return reps


def train_enhanced(
    student: ModelGraph,
    teacher_reps,
    data: SegmentDataset,
    hp: EnhancedParams,
    config: TrainConfig,
    idx=None,
) -> History:
    """Train the student with ``BCE + beta * regression(embedding, teacher)``.

    ``teacher_reps`` is either a :class:`TeacherRepresentation` (looked up by
    segment key) or an array aligned with the selected rows.
    """
    rows = np.arange(len(data)) if idx is None else np.asarray(idx, dtype=np.int64)
    if isinstance(teacher_reps, TeacherRepresentation):
        keys = [(data.session_ids[i], data.segment_index[i]) for i in rows]
        reps = teacher_reps.lookup(keys)
    else:
        reps = np.asarray(teacher_reps, dtype=np.float64)
        if reps.ndim != 2 or reps.shape[0] != rows.size:
            raise StateError("teacher vectors must cover every training segment")
    target = student_targets(student, reps, hp, seed=student.seed)
    cfg = replace(config, loss=replace(config.loss, beta=config.loss.beta, embedding=EMBEDDING_LAYER))
    return train(student, {"kinematic": data.kinematic[rows]}, data.labels[rows], cfg, target=target)


def train_config_for(hp: HyperParams, **overrides) -> TrainConfig:
    """TrainConfig with the preset learning rate (and composite loss for the student)."""
    kwargs = {"learning_rate": hp.lr}
    if isinstance(hp, EnhancedParams):
        kwargs["loss"] = student_loss_spec(hp)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
