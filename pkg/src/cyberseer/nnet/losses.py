"""Binary cross-entropy plus an optional embedding-regression term."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..errors import InvalidInputError, ShapeError

P_CLAMP = 1e-7
REG_KINDS = ("mse", "mae")


@dataclass(frozen=True)
class CompositeLossSpec:
    """``L = L_pre + beta * L_reg``.

    ``embedding`` names the layer whose output is regressed onto the
    per-sample ``target`` rows (a teacher representation).
    """

    beta: float = 0.0
    reg_kind: str = "mse"
    embedding: str = "embedding"
    target: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise InvalidInputError("beta must be finite and non-negative")
        if self.reg_kind not in REG_KINDS:
            raise InvalidInputError(f"reg_kind must be one of {REG_KINDS}")

    @property
    def uses_regression(self) -> bool:
        return self.beta > 0


class LossTerms(NamedTuple):
    total: float
    pre: float
    reg: float


def bce(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample binary cross-entropy with ``p`` clamped to ``[1e-7, 1 - 1e-7]``."""
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))


def bce_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = (p > P_CLAMP) & (p < 1.0 - P_CLAMP)
    pc = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
    return np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)


def regression(e: np.ndarray, t: np.ndarray, kind: str) -> np.ndarray:
    """Per-sample mean squared or mean absolute error across the embedding width."""
    d = e - t
    if kind == "mse":
        return np.mean(d * d, axis=-1)
    return np.mean(np.abs(d), axis=-1)


def regression_grad(e: np.ndarray, t: np.ndarray, kind: str) -> np.ndarray:
    d = e - t
    width = d.shape[-1]
    if kind == "mse":
        return 2.0 * d / width
    return np.sign(d) / width


def _check_pair(e, t):
    if e is None or t is None:
        raise ShapeError("regression term needs both embedding and target")
    if np.shape(e) != np.shape(t):
        raise ShapeError(f"embedding width {np.shape(e)} != target width {np.shape(t)}")


def loss(
    spec: CompositeLossSpec,
    p,
    y,
    e=None,
    t=None,
) -> LossTerms:
    """Mean composite loss over a batch (scalars are treated as a batch of one)."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64)).reshape(-1)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64)).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError("prediction and label counts differ")
    pre = float(np.mean(bce(p, y)))
    reg = 0.0
    if e is not None and t is not None:
        e2 = np.atleast_2d(np.asarray(e, dtype=np.float64))
        t2 = np.atleast_2d(np.asarray(t, dtype=np.float64))
        _check_pair(e2, t2)
        reg = float(np.mean(regression(e2, t2, spec.reg_kind)))
    elif spec.uses_regression:
        raise ShapeError("beta > 0 requires embedding and target")
    return LossTerms(pre + spec.beta * reg, pre, reg)
