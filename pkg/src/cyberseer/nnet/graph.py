"""Layer graph with batched forward and reverse-mode backward passes.

Tensors are float64 numpy arrays. Sequence inputs are ``(batch, features,
time)``; vector activations are ``(batch, width)``. An LSTM consumes a
sequence and emits its final hidden state.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from ..errors import InvalidInputError, NumericalError, ShapeError

ACTIVATIONS = ("tanh", "relu", "sigmoid", "linear")
LAYER_KINDS = ("input", "lstm", "dense", "dropout", "concat")


def sigmoid(z: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    # tanh form: overflow-free for any finite z
    out = np.multiply(z, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class LayerSpec:
    name: str
    kind: str
    inputs: tuple[str, ...] = ()
    units: int = 0
    activation: str = "linear"
    rate: float = 0.0
    sequence: bool = False  # only for inputs: (features, time) vs (features,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        d = dict(d)
        d["inputs"] = tuple(d.get("inputs", ()))
        return cls(**d)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelGraph:
    """An ordered DAG of layers with a parameter store.

    Layers are added in topological order (a layer may only read layers
    already present). Parameters are named ``"<layer>.<W|U|b>"``.
    """

    def __init__(self, seed: int = 0, metadata: dict | None = None):
        self.seed = int(seed)
        self.layers: dict[str, LayerSpec] = {}
        self.params: dict[str, np.ndarray] = {}
        self.metadata: dict = dict(metadata or {})
        self.output: str | None = None
        self.trained = False

    # --- construction -------------------------------------------------------

    def _layer_rng(self, name: str) -> np.random.Generator:
        index = len(self.layers)
        return np.random.default_rng(np.random.SeedSequence([self.seed & (2**63 - 1), index]))

    def _add(self, spec: LayerSpec, init: bool = True) -> str:
        if spec.name in self.layers:
            raise InvalidInputError(f"duplicate layer name {spec.name!r}")
        if spec.kind not in LAYER_KINDS:
            raise InvalidInputError(f"unknown layer kind {spec.kind!r}")
        for src in spec.inputs:
            if src not in self.layers:
                raise InvalidInputError(f"{spec.name}: unknown input {src!r}")
        if spec.activation not in ACTIVATIONS:
            raise InvalidInputError(f"{spec.name}: unknown activation {spec.activation!r}")
        if spec.kind in ("lstm", "dense") and spec.units < 1:
            raise InvalidInputError(f"{spec.name}: units must be >= 1")
        if spec.kind == "dropout" and not 0.0 <= spec.rate < 1.0:
            raise InvalidInputError(f"{spec.name}: dropout rate must be in [0, 1)")
        if spec.kind == "lstm":
            (src,) = spec.inputs
            if not self.is_sequence(src):
                raise ShapeError(f"{spec.name}: LSTM input {src!r} is not a sequence")
        elif spec.kind in ("dense", "dropout", "concat"):
            for src in spec.inputs:
                if self.is_sequence(src):
                    raise ShapeError(f"{spec.name}: {src!r} is a sequence")
        if init:
            rng = self._layer_rng(spec.name)
            if spec.kind == "lstm":
                f_in, u = self.width(spec.inputs[0]), spec.units
                self.params[f"{spec.name}.W"] = glorot_uniform(rng, f_in, 4 * u, (f_in, 4 * u))
                self.params[f"{spec.name}.U"] = glorot_uniform(rng, u, 4 * u, (u, 4 * u))
                b = np.zeros(4 * u)
                b[u : 2 * u] = 1.0  # forget gate
                self.params[f"{spec.name}.b"] = b
            elif spec.kind == "dense":
                f_in, u = self.width(spec.inputs[0]), spec.units
                self.params[f"{spec.name}.W"] = glorot_uniform(rng, f_in, u, (f_in, u))
                self.params[f"{spec.name}.b"] = np.zeros(u)
        self.layers[spec.name] = spec
        return spec.name

    def add_input(self, name: str, features: int, sequence: bool = True) -> str:
        return self._add(LayerSpec(name, "input", units=int(features), sequence=sequence))

    def add_lstm(self, name: str, src: str, units: int) -> str:
        return self._add(LayerSpec(name, "lstm", (src,), units=int(units)))

    def add_dense(self, name: str, src: str, units: int, activation: str = "linear") -> str:
        return self._add(LayerSpec(name, "dense", (src,), units=int(units), activation=activation))

    def add_dropout(self, name: str, src: str, rate: float) -> str:
        return self._add(LayerSpec(name, "dropout", (src,), rate=float(rate)))

    def add_concat(self, name: str, srcs) -> str:
        srcs = tuple(srcs)
        if len(srcs) < 2:
            raise InvalidInputError(f"{name}: concat needs at least two inputs")
        return self._add(LayerSpec(name, "concat", srcs))

    def set_output(self, name: str) -> None:
        spec = self.layers[name]
        if spec.kind != "dense" or spec.units != 1 or spec.activation != "sigmoid":
            raise InvalidInputError("output head must be a dense(1, sigmoid) layer")
        self.output = name

    # --- introspection ---------------------------------------------------------

    def is_sequence(self, name: str) -> bool:
        spec = self.layers[name]
        return spec.kind == "input" and spec.sequence

    def width(self, name: str) -> int:
        spec = self.layers[name]
        if spec.kind in ("input", "lstm", "dense"):
            return spec.units
        if spec.kind == "dropout":
            return self.width(spec.inputs[0])
        return sum(self.width(s) for s in spec.inputs)

    @property
    def input_names(self) -> list[str]:
        return [n for n, s in self.layers.items() if s.kind == "input"]

    def ancestors(self, name: str) -> set[str]:
        seen: set[str] = set()
        stack = [name]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(self.layers[cur].inputs)
        return seen

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def describe(self) -> dict:
        return {
            "seed": self.seed,
            "layers": [s.to_dict() for s in self.layers.values()],
            "output": self.output,
            "metadata": self.metadata,
            "trained": self.trained,
        }

    @classmethod
    def from_description(cls, desc: Mapping, params: Mapping[str, np.ndarray]) -> "ModelGraph":
        g = cls(seed=desc["seed"], metadata=desc.get("metadata", {}))
        for d in desc["layers"]:
            g._add(LayerSpec.from_dict(d), init=False)
        expected = g._expected_shapes()
        if set(expected) != set(params):
            raise ShapeError("parameter names do not match the layer description")
        for name, shape in expected.items():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape}, expected {shape}")
            g.params[name] = arr.copy()
        if desc.get("output"):
            g.set_output(desc["output"])
        g.trained = bool(desc.get("trained", False))
        return g

    def _expected_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, spec in self.layers.items():
            if spec.kind == "lstm":
                f_in, u = self.width(spec.inputs[0]), spec.units
                shapes[f"{name}.W"] = (f_in, 4 * u)
                shapes[f"{name}.U"] = (u, 4 * u)
                shapes[f"{name}.b"] = (4 * u,)
            elif spec.kind == "dense":
                shapes[f"{name}.W"] = (self.width(spec.inputs[0]), spec.units)
                shapes[f"{name}.b"] = (spec.units,)
        return shapes

    def copy(self) -> "ModelGraph":
        g = ModelGraph.from_description(self.describe(), self.params)
        return g

    def zero_params(self) -> None:
        for p in self.params.values():
            p[...] = 0.0

    # --- forward -------------------------------------------------------------------

    def _dropout_mask(self, spec: LayerSpec, shape, key) -> np.ndarray:
        epoch, batch = key
        layer_idx = list(self.layers).index(spec.name)
        bitgen = np.random.Philox(
            key=self.seed & (2**64 - 1),
            counter=np.array([epoch, batch, layer_idx, 0], dtype=np.uint64),
        )
        keep = np.random.Generator(bitgen).random(shape) >= spec.rate
        return keep / (1.0 - spec.rate)

    def forward(
        self,
        inputs: Mapping[str, np.ndarray],
        training: bool = False,
        dropout_key: tuple[int, int] = (0, 0),
        until: set[str] | None = None,
    ) -> tuple[dict[str, np.ndarray], dict[str, tuple]]:
        """Run every layer (or only those in ``until``); returns activations and caches."""
        acts: dict[str, np.ndarray] = {}
        caches: dict[str, tuple] = {}
        batch = None
        for name, spec in self.layers.items():
            if until is not None and name not in until:
                continue
            if spec.kind == "input":
                if name not in inputs:
                    raise ShapeError(f"missing input {name!r}")
                x = np.asarray(inputs[name], dtype=np.float64)
                want = 3 if spec.sequence else 2
                if x.ndim != want or x.shape[1] != spec.units:
                    raise ShapeError(
                        f"input {name!r}: got shape {x.shape}, expected "
                        f"(batch, {spec.units}{', time' if spec.sequence else ''})"
                    )
                if spec.sequence and x.shape[2] < 1:
                    raise ShapeError(f"input {name!r}: empty sequence")
                if batch is None:
                    batch = x.shape[0]
                elif x.shape[0] != batch:
                    raise ShapeError("inputs disagree on batch size")
                acts[name] = x
            elif spec.kind == "lstm":
                acts[name], caches[name] = self._lstm_forward(spec, acts[spec.inputs[0]])
            elif spec.kind == "dense":
                x = acts[spec.inputs[0]]
                z = x @ self.params[f"{name}.W"] + self.params[f"{name}.b"]
                a = _activate(spec.activation, z)
                acts[name], caches[name] = a, (x, z, a)
            elif spec.kind == "dropout":
                x = acts[spec.inputs[0]]
                if training and spec.rate > 0.0:
                    mask = self._dropout_mask(spec, x.shape, dropout_key)
                    acts[name], caches[name] = x * mask, (mask,)
                else:
                    acts[name], caches[name] = x, (None,)
            elif spec.kind == "concat":
                parts = [acts[s] for s in spec.inputs]
                acts[name] = np.concatenate(parts, axis=1)
                caches[name] = tuple(p.shape[1] for p in parts)
            if spec.kind != "input" and not np.all(np.isfinite(acts[name])):
                raise NumericalError(f"non-finite activation in layer {name!r}", layer=name)
        return acts, caches

    def _lstm_forward(self, spec: LayerSpec, x: np.ndarray):
        W = self.params[f"{spec.name}.W"]
        U = self.params[f"{spec.name}.U"]
        b = self.params[f"{spec.name}.b"]
        u = spec.units
        B, _, T = x.shape
        xs = np.ascontiguousarray(x.transpose(2, 0, 1))  # (T, B, F)
        xw = xs @ W + b  # (T, B, 4u)
        h = np.zeros((B, u))
        c = np.zeros((B, u))
        gates = np.empty((T, B, 4 * u))
        cs = np.empty((T + 1, B, u))
        hs = np.empty((T + 1, B, u))
        tcs = np.empty((T, B, u))
        cs[0], hs[0] = c, h
        for t in range(T):
            z = xw[t] + h @ U
            g = gates[t]
            sigmoid(z[:, : 2 * u], out=g[:, : 2 * u])
            np.tanh(z[:, 2 * u : 3 * u], out=g[:, 2 * u : 3 * u])
            sigmoid(z[:, 3 * u :], out=g[:, 3 * u :])
            c = g[:, u : 2 * u] * c + g[:, :u] * g[:, 2 * u : 3 * u]
            tc = np.tanh(c)
            h = g[:, 3 * u :] * tc
            cs[t + 1], hs[t + 1], tcs[t] = c, h, tc
        return h, (xs, gates, cs, hs, tcs)

    # --- backward ------------------------------------------------------------------

    def backward(
        self,
        acts: Mapping[str, np.ndarray],
        caches: Mapping[str, tuple],
        seed_grads: Mapping[str, np.ndarray],
    ) -> dict[str, np.ndarray]:
        """Propagate ``d loss / d activation`` seeds back to every parameter."""
        grads_act: dict[str, np.ndarray] = {}
        for name, g in seed_grads.items():
            grads_act[name] = np.array(g, dtype=np.float64, copy=True)
        grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in self.params.items()}

        def push(src: str, g: np.ndarray) -> None:
            if self.layers[src].kind == "input":
                return
            if src in grads_act:
                grads_act[src] += g
            else:
                grads_act[src] = g

        for name in reversed(list(self.layers)):
            spec = self.layers[name]
            if spec.kind == "input" or name not in grads_act or name not in acts:
                continue
            dy = grads_act.pop(name)
            if spec.kind == "dense":
                x, z, a = caches[name]
                dz = dy * _activation_grad(spec.activation, z, a)
                grads[f"{name}.W"] += x.T @ dz
                grads[f"{name}.b"] += dz.sum(axis=0)
                push(spec.inputs[0], dz @ self.params[f"{name}.W"].T)
            elif spec.kind == "dropout":
                (mask,) = caches[name]
                push(spec.inputs[0], dy if mask is None else dy * mask)
            elif spec.kind == "concat":
                start = 0
                for src, w in zip(spec.inputs, caches[name]):
                    push(src, dy[:, start : start + w])
                    start += w
            elif spec.kind == "lstm":
                dx = self._lstm_backward(spec, caches[name], dy, grads)
                if dx is not None:
                    push(spec.inputs[0], dx)
            for key in (f"{name}.W", f"{name}.U", f"{name}.b"):
                if key in grads and not np.all(np.isfinite(grads[key])):
                    raise NumericalError(f"non-finite gradient in layer {name!r}", layer=name)
        return grads

    def _lstm_backward(self, spec, cache, dh_last, grads):
        xs, gates, cs, hs, tcs = cache
        U = self.params[f"{spec.name}.U"]
        u = spec.units
        T = gates.shape[0]
        dz_all = np.empty_like(gates)
        dh = dh_last
        dc = np.zeros_like(dh_last)
        for t in range(T - 1, -1, -1):
            g = gates[t]
            i, f, gg, o = g[:, :u], g[:, u : 2 * u], g[:, 2 * u : 3 * u], g[:, 3 * u :]
            tc = tcs[t]
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = dz_all[t]
            dz[:, :u] = dc * gg * i * (1.0 - i)
            dz[:, u : 2 * u] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * u : 3 * u] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * u :] = dh * tc * o * (1.0 - o)
            dc = dc * f
            dh = dz @ U.T
        # parameter gradients summed over time in single contractions
        B = dh_last.shape[0]
        flat_dz = dz_all.reshape(T * B, 4 * u)
        grads[f"{spec.name}.W"] += xs.reshape(T * B, -1).T @ flat_dz
        grads[f"{spec.name}.U"] += hs[:-1].reshape(T * B, u).T @ flat_dz
        grads[f"{spec.name}.b"] += flat_dz.sum(axis=0)
        return None  # inputs to LSTMs are always graph inputs here
