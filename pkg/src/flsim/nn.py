"""Minimal multilayer perceptron with manual backpropagation.

Parameters and gradients share one representation, :class:`LayeredVector`:
a flat float64 array plus a :class:`Layout` naming each parameter group.
Every dense layer contributes two groups, ``dense{i}.weights`` with shape
``(fan_in, fan_out)`` and ``dense{i}.biases`` with shape ``(fan_out,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, NumericalError

DTYPE = np.float64


@dataclass(frozen=True)
class ParameterGroup:
    name: str
    shape: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if int(np.prod(self.shape)) != self.values.size:
            raise ConfigError(
                f"group {self.name!r}: shape {self.shape} does not match "
                f"{self.values.size} values"
            )

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.shape)


@dataclass(frozen=True)
class Layout:
    """Ordered group names and shapes; identical for every vector of a run."""

    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.names) != len(self.shapes):
            raise ConfigError("layout names and shapes differ in length")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"duplicate group names in {self.names}")
        for shape in self.shapes:
            if any(int(s) <= 0 for s in shape):
                raise ConfigError(f"non-positive dimension in shape {shape}")

    @cached_property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(s)) for s in self.shapes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for size in self.sizes:
            out.append(out[-1] + size)
        return tuple(out)

    @cached_property
    def slices(self) -> tuple[slice, ...]:
        o = self.offsets
        return tuple(slice(o[i], o[i + 1]) for i in range(len(self.names)))

    @property
    def dim(self) -> int:
        return self.offsets[-1]

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True, eq=False)
class LayeredVector:
    """A gradient or parameter set: flat values partitioned by a layout."""

    layout: Layout
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=DTYPE)
        if values.ndim != 1 or values.size != self.layout.dim:
            raise ConfigError(
                f"expected {self.layout.dim} values, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_groups(cls, groups: Sequence[ParameterGroup]) -> LayeredVector:
        layout = Layout(
            tuple(g.name for g in groups), tuple(tuple(g.shape) for g in groups)
        )
        values = np.concatenate([np.ravel(g.values) for g in groups]).astype(DTYPE)
        return cls(layout, values)

    @classmethod
    def zeros(cls, layout: Layout) -> LayeredVector:
        return cls(layout, np.zeros(layout.dim, dtype=DTYPE))

    @property
    def groups(self) -> list[ParameterGroup]:
        return [
            ParameterGroup(name, shape, self.values[sl])
            for name, shape, sl in zip(
                self.layout.names, self.layout.shapes, self.layout.slices
            )
        ]

    def group(self, l: int | str) -> np.ndarray:
        """Flat view of one group, selected by index or name."""
        if isinstance(l, str):
            l = self.layout.index(l)
        return self.values[self.layout.slices[l]]

    def array(self, l: int | str) -> np.ndarray:
        if isinstance(l, str):
            l = self.layout.index(l)
        return self.group(l).reshape(self.layout.shapes[l])

    @property
    def dim(self) -> int:
        return self.layout.dim

    def copy(self) -> LayeredVector:
        return LayeredVector(self.layout, self.values.copy())

    def __eq__(self, other):
        if not isinstance(other, LayeredVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        _check_same(self, other)
        return LayeredVector(self.layout, self.values - other.values)

    def __neg__(self):
        return LayeredVector(self.layout, -self.values)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def _check_same(a: LayeredVector, b: LayeredVector) -> None:
    if a.layout != b.layout:
        raise ConfigError(f"structure mismatch: {a.layout.names} vs {b.layout.names}")


def add(a: LayeredVector, b: LayeredVector) -> LayeredVector:
    _check_same(a, b)
    return LayeredVector(a.layout, a.values + b.values)


def scale(a: LayeredVector, c: float) -> LayeredVector:
    return LayeredVector(a.layout, a.values * c)


def l2_norm(a: LayeredVector) -> float:
    return float(np.sqrt(np.dot(a.values, a.values)))


def group_l2_norm(a: LayeredVector, l: int | str) -> float:
    g = a.group(l)
    return float(np.sqrt(np.dot(g, g)))


def mean(vectors: Sequence[LayeredVector]) -> LayeredVector:
    if not vectors:
        raise ConfigError("mean of an empty list")
    layout = vectors[0].layout
    for v in vectors[1:]:
        _check_same(vectors[0], v)
    return LayeredVector(layout, np.mean(stack(vectors), axis=0))


def stack(vectors: Sequence[LayeredVector]) -> np.ndarray:
    """Rows of an ``(n, d)`` matrix, one per vector."""
    return np.stack([v.values for v in vectors])


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ConfigError("model needs input, at least one hidden, and output width")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive: {widths}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    def layout(self) -> Layout:
        names, shapes = [], []
        for i, (fan_in, fan_out) in enumerate(
            zip(self.layer_widths[:-1], self.layer_widths[1:]), start=1
        ):
            names += [f"dense{i}.weights", f"dense{i}.biases"]
            shapes += [(fan_in, fan_out), (fan_out,)]
        return Layout(tuple(names), tuple(shapes))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> LayeredVector:
    """Glorot-uniform weights, zero biases."""
    layout = spec.layout()
    values = np.zeros(layout.dim, dtype=DTYPE)
    for l in range(0, len(layout), 2):
        fan_in, fan_out = layout.shapes[l]
        s = math.sqrt(6.0 / (fan_in + fan_out))
        values[layout.slices[l]] = rng.uniform(-s, s, size=fan_in * fan_out)
    return LayeredVector(layout, values)


def _check_params(spec: ModelSpec, params: LayeredVector) -> None:
    if params.layout != spec.layout():
        raise ConfigError(
            f"parameter layout {params.layout.shapes} does not match model "
            f"{spec.layer_widths}"
        )


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(kind, z, a):
    if kind == "relu":
        return (z > 0).astype(DTYPE)
    return 1.0 - a * a


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_cache(spec, params, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != spec.layer_widths[0]:
        raise ConfigError(
            f"batch has shape {x.shape}, model expects {spec.layer_widths[0]} features"
        )
    _check_params(spec, params)
    acts, pre = [x], []
    a = x
    for i in range(spec.num_layers):
        w = params.array(2 * i)
        b = params.group(2 * i + 1)
        z = a @ w + b
        pre.append(z)
        if i < spec.num_layers - 1:
            a = _activate(spec.activation, z)
            acts.append(a)
    return acts, pre


def forward(spec: ModelSpec, params: LayeredVector, batch_features) -> np.ndarray:
    """Class probabilities, one row per sample."""
    _, pre = _forward_cache(spec, params, batch_features)
    return _softmax(pre[-1])


def _check_labels(spec, labels, rows):
    labels = np.asarray(labels)
    if labels.shape != (rows,):
        raise ConfigError(f"expected {rows} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= spec.num_classes):
        raise ConfigError("label outside [0, num_classes)")
    return labels.astype(np.intp)


def loss(spec: ModelSpec, params: LayeredVector, batch) -> float:
    """Mean softmax cross-entropy of the batch."""
    features, labels = batch
    _, pre = _forward_cache(spec, params, features)
    labels = _check_labels(spec, labels, pre[-1].shape[0])
    logp = _log_softmax(pre[-1])
    return float(-logp[np.arange(labels.size), labels].mean())


def loss_and_gradient(
    spec: ModelSpec, params: LayeredVector, batch
) -> tuple[float, LayeredVector]:
    features, labels = batch
    acts, pre = _forward_cache(spec, params, features)
    labels = _check_labels(spec, labels, pre[-1].shape[0])
    rows = labels.size
    logp = _log_softmax(pre[-1])
    value = float(-logp[np.arange(rows), labels].mean())

    grad = np.empty(params.dim, dtype=DTYPE)
    slices = params.layout.slices
    delta = np.exp(logp)
    delta[np.arange(rows), labels] -= 1.0
    delta /= rows
    for i in reversed(range(spec.num_layers)):
        grad[slices[2 * i]] = (acts[i].T @ delta).ravel()
        grad[slices[2 * i + 1]] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.array(2 * i).T) * _activate_grad(
                spec.activation, pre[i - 1], acts[i]
            )
    if not (math.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericalError("non-finite loss or gradient")
    return value, LayeredVector(params.layout, grad)


def finite_difference_gradient(
    spec: ModelSpec, params: LayeredVector, batch, step: float = 1e-5
) -> LayeredVector:
    """Central-difference estimate of the loss gradient (test oracle)."""
    if not step > 0:
        raise ConfigError("finite-difference step must be positive")
    base = params.values
    out = np.empty_like(base)
    for k in range(base.size):
        up = base.copy()
        up[k] += step
        down = base.copy()
        down[k] -= step
        f_up = loss(spec, LayeredVector(params.layout, up), batch)
        f_down = loss(spec, LayeredVector(params.layout, down), batch)
        out[k] = (f_up - f_down) / (2.0 * step)
    return LayeredVector(params.layout, out)


def evaluate(spec: ModelSpec, params: LayeredVector, features, labels) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("evaluation set is empty")
    _, pre = _forward_cache(spec, params, features)
    return float(np.mean(np.argmax(pre[-1], axis=1) == labels))


# ----------------------------------------------------------------------- optimizers


@dataclass(frozen=True)
class OptimizerState:
    kind: str = "sgd"
    learning_rate: float = 0.05
    rho: float = 0.95
    epsilon: float = 1e-6
    accumulators: tuple[LayeredVector, LayeredVector] | None = None

    def __post_init__(self):
        if self.kind not in ("sgd", "adadelta"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if not 0 < self.rho < 1:
            raise ConfigError("rho must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if (self.accumulators is not None) != (self.kind == "adadelta"):
            raise ConfigError("accumulators are present iff kind == 'adadelta'")

    @classmethod
    def create(cls, kind, layout: Layout, learning_rate, rho=0.95, epsilon=1e-6):
        acc = None
        if kind == "adadelta":
            acc = (LayeredVector.zeros(layout), LayeredVector.zeros(layout))
        return cls(kind, learning_rate, rho, epsilon, acc)


def optimizer_step(
    state: OptimizerState, params: LayeredVector, grad: LayeredVector
) -> tuple[LayeredVector, OptimizerState]:
    _check_same(params, grad)
    g = grad.values
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite aggregated gradient")
    if state.kind == "sgd":
        return LayeredVector(params.layout, params.values - state.learning_rate * g), state

    sq_grad, sq_update = state.accumulators
    _check_same(params, sq_grad)
    rho, eps = state.rho, state.epsilon
    eg = rho * sq_grad.values + (1.0 - rho) * g * g
    update = np.sqrt(sq_update.values + eps) / np.sqrt(eg + eps) * g
    edx = rho * sq_update.values + (1.0 - rho) * update * update
    new_params = LayeredVector(params.layout, params.values - state.learning_rate * update)
    new_state = OptimizerState(
        state.kind,
        state.learning_rate,
        rho,
        eps,
        (LayeredVector(params.layout, eg), LayeredVector(params.layout, edx)),
    )
    return new_params, new_state
