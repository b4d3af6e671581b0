"""Mini-batch training, inference and finite-difference gradient checking."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import InvalidInputError, ShapeError, StateError
from .graph import ModelGraph
from .losses import CompositeLossSpec, LossTerms, bce, bce_grad, regression, regression_grad
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta_1: float = 0.9
    beta_2: float = 0.999
    epsilon: float = 1e-8
    loss: CompositeLossSpec = field(default_factory=CompositeLossSpec)
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    l_pre: list[float] = field(default_factory=list)
    l_reg: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[float]]:
        return {"loss": self.loss, "l_pre": self.l_pre, "l_reg": self.l_reg, "accuracy": self.accuracy}


def _n_items(inputs: Mapping[str, np.ndarray]) -> int:
    sizes = {np.shape(v)[0] for v in inputs.values()}
    if len(sizes) != 1:
        raise ShapeError("inputs disagree on the number of samples")
    return sizes.pop()


def _take(inputs: Mapping[str, np.ndarray], idx) -> dict[str, np.ndarray]:
    return {k: v[idx] for k, v in inputs.items()}


def _graph_inputs(graph: ModelGraph, inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    missing = [k for k in graph.input_names if k not in inputs]
    if missing:
        raise ShapeError(f"missing inputs: {', '.join(missing)}")
    return {k: inputs[k] for k in graph.input_names}


def batch_loss_and_grads(
    graph: ModelGraph,
    inputs: Mapping[str, np.ndarray],
    labels: np.ndarray,
    spec: CompositeLossSpec,
    target: np.ndarray | None = None,
    training: bool = False,
    dropout_key: tuple[int, int] = (0, 0),
    need_grads: bool = True,
):
    """Forward, composite loss and (optionally) parameter gradients for one batch."""
    if graph.output is None:
        raise StateError("graph has no output head")
    acts, caches = graph.forward(inputs, training=training, dropout_key=dropout_key)
    p = acts[graph.output][:, 0]
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ShapeError("label count does not match batch size")
    B = y.size
    pre_each = bce(p, y)
    pre = float(np.mean(pre_each))
    reg = 0.0
    e = None
    if target is not None and spec.embedding in acts:
        e = acts[spec.embedding]
        if e.shape != target.shape:
            raise ShapeError(f"embedding {e.shape} vs target {target.shape}")
        reg = float(np.mean(regression(e, target, spec.reg_kind)))
    elif spec.uses_regression:
        raise ShapeError("beta > 0 requires a target for the embedding layer")
    terms = LossTerms(pre + spec.beta * reg, pre, reg)
    if not need_grads:
        return terms, p, None
    seeds = {graph.output: (bce_grad(p, y) / B)[:, None]}
    if spec.uses_regression:
        g = spec.beta * regression_grad(e, target, spec.reg_kind) / B
        seeds[spec.embedding] = seeds[spec.embedding] + g if spec.embedding in seeds else g
    grads = graph.backward(acts, caches, seeds)
    return terms, p, grads


def train(
    graph: ModelGraph,
    inputs: Mapping[str, np.ndarray],
    labels,
    config: TrainConfig,
    target: np.ndarray | None = None,
) -> History:
    """Train ``graph`` in place with Adam; deterministic given the graph seed
    (dropout) and ``config.shuffle_seed`` (batch order)."""
    inputs = _graph_inputs(graph, inputs)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = _n_items(inputs) if inputs else 0
    if n == 0 or labels.size == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if labels.size != n:
        raise ShapeError("labels and inputs differ in length")
    spec = config.loss
    if target is None:
        target = spec.target
    if target is not None:
        target = np.asarray(target, dtype=np.float64)
        if target.shape[0] != n:
            raise ShapeError("target rows must align with samples")

    opt = Adam(graph.params, config.learning_rate, config.beta_1, config.beta_2, config.epsilon)
    hist = History()
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.shuffle_seed & (2**63 - 1), epoch])
        order = rng.permutation(n)
        tot = pre = reg = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            terms, p, grads = batch_loss_and_grads(
                graph,
                _take(inputs, idx),
                labels[idx],
                spec,
                None if target is None else target[idx],
                training=True,
                dropout_key=(epoch, b),
            )
            opt.step(grads)
            k = idx.size
            tot += terms.total * k
            pre += terms.pre * k
            reg += terms.reg * k
            correct += int(np.sum((p > 0.5) == (labels[idx] > 0.5)))
        hist.loss.append(tot / n)
        hist.l_pre.append(pre / n)
        hist.l_reg.append(reg / n)
        hist.accuracy.append(correct / n)
        log.debug("epoch %d loss %.5f acc %.3f", epoch, hist.loss[-1], hist.accuracy[-1])
    graph.trained = True
    return hist


def activations(
    graph: ModelGraph, inputs: Mapping[str, np.ndarray], layer: str, batch_size: int = 512
) -> np.ndarray:
    """Inference-mode output of ``layer`` for every sample."""
    needed = graph.ancestors(layer)
    inputs = {k: v for k, v in inputs.items() if k in needed}
    n = _n_items(inputs)
    chunks = []
    for start in range(0, n, batch_size):
        acts, _ = graph.forward(
            {k: v[start : start + batch_size] for k, v in inputs.items()},
            training=False,
            until=needed,
        )
        chunks.append(acts[layer])
    return np.concatenate(chunks, axis=0)


def predict(graph: ModelGraph, inputs: Mapping[str, np.ndarray], batch_size: int = 512) -> np.ndarray:
    """Sigmoid probabilities, dropout off."""
    if graph.output is None:
        raise StateError("graph has no output head")
    return activations(graph, inputs, graph.output, batch_size)[:, 0]


def predict_classes(graph: ModelGraph, inputs: Mapping[str, np.ndarray]) -> np.ndarray:
    return (predict(graph, inputs) > 0.5).astype(np.int64)


def evaluate_loss(
    graph: ModelGraph,
    inputs: Mapping[str, np.ndarray],
    labels,
    spec: CompositeLossSpec,
    target: np.ndarray | None = None,
) -> LossTerms:
    terms, _, _ = batch_loss_and_grads(
        graph, _graph_inputs(graph, inputs), labels, spec, target, need_grads=False
    )
    return terms


def gradient_check(
    graph: ModelGraph,
    inputs: Mapping[str, np.ndarray],
    labels,
    spec: CompositeLossSpec | None = None,
    target: np.ndarray | None = None,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Dropout is off. Relative error is ``|ga - gn| / max(|ga|, |gn|, 1e-8)``.
    """
    spec = spec or CompositeLossSpec()
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    _, _, grads = batch_loss_and_grads(graph, inputs, labels, spec, target, training=False)
    worst = 0.0
    for name, p in graph.params.items():
        flat = p.reshape(-1)
        ga = grads[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = batch_loss_and_grads(graph, inputs, labels, spec, target, need_grads=False)[0].total
            flat[j] = orig - epsilon
            down = batch_loss_and_grads(graph, inputs, labels, spec, target, need_grads=False)[0].total
            flat[j] = orig
            gn = (up - down) / (2.0 * epsilon)
            err = abs(ga[j] - gn) / max(abs(ga[j]), abs(gn), 1e-8)
            worst = max(worst, err)
    return worst
