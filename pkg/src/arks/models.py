"""Parametric models and loss families.

A model is a flat float64 parameter vector plus a ModelSpec describing its
architecture; losses are recorded on tapes so gradients are available with
respect to both the parameters and the input features.  Targets are never
part of the perturbed variable: inner maximizations and attacks move x
only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError, ShapeMismatch
from .tape import Tape

FAMILIES = ("linear", "logistic", "mlp")
ACTIVATIONS = ("elu", "relu")
LOSS_KINDS = ("least-squares", "cross-entropy")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    input_dim: int
    output_dim: int = 1
    hidden: tuple[int, ...] = ()
    activation: str = "elu"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if self.family == "logistic" and self.output_dim < 2:
            raise ConfigError("logistic models need output_dim >= 2 classes")
        if self.family == "mlp":
            if not self.hidden:
                raise ConfigError("mlp models need a non-empty hidden width list")
            if any(h < 1 for h in self.hidden):
                raise ConfigError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) per layer, first to last."""
        widths = [self.input_dim, *self.hidden, self.output_dim] \
            if self.family == "mlp" else [self.input_dim, self.output_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]


@dataclass(frozen=True)
class LossKind:
    kind: str = "least-squares"
    eps_pos: float = 1e-3

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.eps_pos < 0:
            raise ConfigError("eps_pos must be nonnegative")


@dataclass
class Sample:
    x: np.ndarray
    y: float | int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).ravel()


@dataclass
class Fn:
    """Differentiable scalar function of one vector; value/grad callables.

    ``value_batch`` optionally evaluates an (n, d) stack of points at once;
    grid-search oracles use it when present.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    vag: Callable | None = None
    value_batch: Callable | None = None

    def value_and_grad(self, u):
        if self.vag is not None:
            v, g = self.vag(u)
            return float(v), np.asarray(g, dtype=np.float64)
        return float(self.value(u)), np.asarray(self.grad(u), dtype=np.float64)


def param_count(spec: ModelSpec) -> int:
    return sum(o * i + o for o, i in spec.layer_dims)


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Seeded flat parameter vector; weights scaled by 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    parts = []
    for out, inp in spec.layer_dims:
        parts.append(rng.normal(size=(out, inp)).ravel() / np.sqrt(inp))
        parts.append(np.zeros(out))
    return np.concatenate(parts)


def split_params(spec: ModelSpec, params: np.ndarray) -> dict[str, np.ndarray]:
    """Views of the flat vector as per-layer weight/bias arrays."""
    params = np.asarray(params, dtype=np.float64)
    if params.size != param_count(spec):
        raise ShapeMismatch(
            f"parameter vector has length {params.size}, spec needs {param_count(spec)}"
        )
    out, pos = {}, 0
    for li, (o, i) in enumerate(spec.layer_dims):
        out[f"w{li}"] = params[pos:pos + o * i].reshape(o, i)
        pos += o * i
        out[f"b{li}"] = params[pos:pos + o]
        pos += o
    return out


def forward_logits(spec: ModelSpec, params, x) -> np.ndarray:
    """Plain numpy forward pass (model outputs before any loss)."""
    layers = split_params(spec, params)
    h = np.asarray(x, dtype=np.float64).ravel()
    n_layers = len(spec.layer_dims)
    for li in range(n_layers):
        h = layers[f"w{li}"] @ h + layers[f"b{li}"]
        if li < n_layers - 1:
            h = np.where(h > 0, h, np.expm1(h)) if spec.activation == "elu" \
                else np.maximum(h, 0.0)
    return h


class ModelLoss:
    """Bundles a ModelSpec with a LossKind and caches loss tapes.

    Tapes are keyed by class label for cross-entropy (the label is baked
    into the softmax-cross-entropy node); least-squares uses one tape with
    the target bound as a leaf.
    """

    def __init__(self, spec: ModelSpec, kind: LossKind):
        self.spec = spec
        self.kind = kind
        self._tapes: dict[int, Tape] = {}
        self._param_names = [n for li in range(len(spec.layer_dims)) for n in (f"w{li}", f"b{li}")]
        self._split_memo: tuple | None = None
        self._session: object | None = None

    def _build_tape(self, label: int) -> Tape:
        spec = self.spec
        t = Tape()
        weights = []
        for li, (o, i) in enumerate(spec.layer_dims):
            weights.append((t.leaf(f"w{li}", (o, i)), t.leaf(f"b{li}", (o,))))
        x = t.leaf("x", (spec.input_dim,))
        h = x
        for li, (w, b) in enumerate(weights):
            h = t.add(t.matmul(w, h), b)
            if li < len(weights) - 1:
                h = t.elu(h) if spec.activation == "elu" else t.relu(h)
        if self.kind.kind == "cross-entropy":
            raw = t.softmax_xent(h, label)
        else:
            raw = t.sqnorm(t.sub(h, t.leaf("y", (spec.output_dim,))))
        out = t.add(raw, t.const(self.kind.eps_pos)) if self.kind.eps_pos else raw
        return t.seal(out)

    def _tape_and_bindings(self, params, sample: Sample):
        if sample.x.size != self.spec.input_dim:
            raise ShapeMismatch(
                f"sample has {sample.x.size} features, model expects {self.spec.input_dim}"
            )
        if self.kind.kind == "cross-entropy":
            label = int(sample.y)
            if not 0 <= label < self.spec.output_dim:
                raise ConfigError(
                    f"class index {label} out of range for {self.spec.output_dim} classes"
                )
            key, extra = label, {}
        else:
            key = -1
            y = np.atleast_1d(np.asarray(sample.y, dtype=np.float64))
            if y.size != self.spec.output_dim:
                raise ShapeMismatch(
                    f"target has size {y.size}, model outputs {self.spec.output_dim}"
                )
            extra = {"y": y}
        tape = self._tapes.get(key)
        if tape is None:
            tape = self._tapes[key] = self._build_tape(max(key, 0))
        if self._split_memo is not None and self._split_memo[0] is params:
            bindings = dict(self._split_memo[1])
        else:
            layer_views = split_params(self.spec, params)
            self._split_memo = (params, layer_views)
            bindings = dict(layer_views)
        bindings["x"] = sample.x
        bindings.update(extra)
        return tape, bindings

    def loss(self, params, sample: Sample) -> float:
        tape, bindings = self._tape_and_bindings(params, sample)
        self._session = None
        value = tape.forward(bindings)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss for sample x={sample.x}, y={sample.y}")
        return value

    def loss_and_grad_params(self, params, sample: Sample):
        tape, bindings = self._tape_and_bindings(params, sample)
        self._session = None
        value, grads = tape.value_and_grad(bindings, self._param_names)
        return value, np.concatenate([grads[n].ravel() for n in self._param_names])

    def grad_params(self, params, sample: Sample) -> np.ndarray:
        return self.loss_and_grad_params(params, sample)[1]

    def loss_and_grad_x(self, params, sample: Sample):
        tape, bindings = self._tape_and_bindings(params, sample)
        self._session = None
        value, grads = tape.value_and_grad(bindings, ("x",))
        return value, grads["x"]

    def grad_x(self, params, sample: Sample) -> np.ndarray:
        return self.loss_and_grad_x(params, sample)[1]

    _WRT_X = frozenset(("x",))

    def x_fn(self, params, sample: Sample) -> Fn:
        """The loss as a differentiable function of the input features.

        Evaluations share the cached tape: the sample's bindings are
        restored lazily whenever another call has used the tape in
        between, so interleaving several x_fn handles stays correct.
        """
        tape, bindings = self._tape_and_bindings(params, sample)
        token = object()
        gx = tape.grad_buffer("x")

        def ensure_bound():
            if self._session is not token:
                tape.bind(bindings)
                self._session = token

        def vag(u):
            ensure_bound()
            tape.rebind("x", u)
            v = tape.value_and_grad_bound(self._WRT_X)
            return v, gx.copy()

        def val(u):
            ensure_bound()
            tape.rebind("x", u)
            return tape.value_bound()

        return Fn(val, lambda u: vag(u)[1], vag)

    def predict(self, params, x) -> np.ndarray:
        return forward_logits(self.spec, params, x)


def loss(spec: ModelSpec, kind: LossKind, params, sample: Sample) -> float:
    return ModelLoss(spec, kind).loss(params, sample)


def loss_grads(spec: ModelSpec, kind: LossKind, params, sample: Sample):
    """(value, grad wrt params, grad wrt x)."""
    ml = ModelLoss(spec, kind)
    value, gp = ml.loss_and_grad_params(params, sample)
    return value, gp, ml.grad_x(params, sample)


# -- robust least squares toy problem ---------------------------------


@dataclass(frozen=True)
class RlsProblem:
    """min_theta ||(A0 + xi*A1) theta - b||^2 with scalar uncertain xi."""

    A0: np.ndarray
    A1: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A0", np.asarray(self.A0, dtype=np.float64))
        object.__setattr__(self, "A1", np.asarray(self.A1, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64).ravel())
        if self.A0.shape != self.A1.shape:
            raise ShapeMismatch(f"A0 {self.A0.shape} and A1 {self.A1.shape} must match")
        if self.A0.shape[0] != self.b.size:
            raise ShapeMismatch(f"b has size {self.b.size}, A0 has {self.A0.shape[0]} rows")

    @property
    def dim(self) -> int:
        return self.A0.shape[1]


def rls_loss(theta, xi: float, A0, A1, b) -> float:
    theta = np.asarray(theta, dtype=np.float64).ravel()
    A = np.asarray(A0, dtype=np.float64) + float(xi) * np.asarray(A1, dtype=np.float64)
    r = A @ theta - np.asarray(b, dtype=np.float64).ravel()
    return float(r @ r)


def rls_loss_grads(theta, xi: float, A0, A1, b):
    """(value, grad wrt theta, grad wrt xi)."""
    theta = np.asarray(theta, dtype=np.float64).ravel()
    A0 = np.asarray(A0, dtype=np.float64)
    A1 = np.asarray(A1, dtype=np.float64)
    A = A0 + float(xi) * A1
    r = A @ theta - np.asarray(b, dtype=np.float64).ravel()
    return float(r @ r), 2.0 * (A.T @ r), float(2.0 * ((A1 @ theta) @ r))
