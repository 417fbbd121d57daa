"""A small fully connected classifier with hand-written backpropagation.

Activations are stored neuron-major: a layer output is a ``(width, n)``
matrix whose columns are the examples of the batch, so that a hidden layer
output can be passed straight to :mod:`otrep.representation`.

All arithmetic is float64. Training is deterministic given the seed.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from otrep import distill, representation
from otrep.errors import InputError
from otrep.ot import SolverSettings

CHECKPOINT_VERSION = 1
NONLINEARITIES = ("relu", "identity")
REPRESENTATION_TERMS = representation.REGULARIZER_KINDS
PARAMETER_TERMS = ("l2", "l2_sp")
TERM_KINDS = REPRESENTATION_TERMS + PARAMETER_TERMS + ("kd",)


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise InputError("layer dimensions must be >= 1")
        if self.nonlinearity not in NONLINEARITIES:
            raise InputError(f"unknown nonlinearity {self.nonlinearity!r}")


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class ModelState:
    """Parameters, momentum buffers and the frozen starting point of an MLP.

    ``starting_point[l]`` is a read-only ``(W0, b0)`` pair, or ``None`` for a
    layer that was not transferred (e.g. a freshly initialized head). It is
    fixed at construction and only replaced wholesale by :meth:`with_new_head`
    or :meth:`freeze_starting_point`.
    """

    def __init__(self, specs, weights, biases, seed=None, starting_point="copy"):
        self.specs = list(specs)
        if not self.specs:
            raise InputError("a model needs at least one layer")
        for prev, nxt in zip(self.specs, self.specs[1:]):
            if prev.output_dim != nxt.input_dim:
                raise InputError("layer dimensions do not chain")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for spec, W, b in zip(self.specs, self.weights, self.biases):
            if W.shape != (spec.output_dim, spec.input_dim) or b.shape != (spec.output_dim,):
                raise InputError("parameter shapes do not match layer specs")
        self.velocity_w = [np.zeros_like(W) for W in self.weights]
        self.velocity_b = [np.zeros_like(b) for b in self.biases]
        self.seed = seed
        if starting_point == "copy":
            starting_point = list(zip(self.weights, self.biases))
        self._starting_point = tuple(
            None if sp is None else (_frozen(sp[0]), _frozen(sp[1])) for sp in starting_point
        )

    @property
    def starting_point(self):
        return self._starting_point

    @property
    def depth(self):
        return len(self.specs)

    @property
    def widths(self):
        return [s.output_dim for s in self.specs]

    def copy(self):
        return copy.deepcopy(self)

    def freeze_starting_point(self):
        """Take the current parameters as the reference for L2-SP."""
        self._starting_point = tuple(
            (_frozen(W), _frozen(b)) for W, b in zip(self.weights, self.biases)
        )
        return self

    def with_new_head(self, num_classes, rng):
        """Copy of this model with a freshly initialized last layer.

        Hidden layers keep their parameters and use them as starting point;
        the new head has no starting point. Momentum is reset.
        """
        last = self.specs[-1]
        specs = self.specs[:-1] + [LayerSpec(last.input_dim, num_classes, last.nonlinearity)]
        W, b = _init_layer(specs[-1], rng)
        sp = [(w.copy(), bb.copy()) for w, bb in zip(self.weights[:-1], self.biases[:-1])]
        return ModelState(
            specs,
            [w.copy() for w in self.weights[:-1]] + [W],
            [bb.copy() for bb in self.biases[:-1]] + [b],
            seed=self.seed,
            starting_point=sp + [None],
        )

    def parameters_checksum(self):
        return _checksum(self.weights + self.biases)

    def starting_point_checksum(self):
        arrays = [a for sp in self._starting_point if sp is not None for a in sp]
        return _checksum(arrays)


def _checksum(arrays):
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@dataclass
class Gradients:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, model):
        return cls([np.zeros_like(W) for W in model.weights], [np.zeros_like(b) for b in model.biases])

    def __iadd__(self, other):
        for a, b in zip(self.weights + self.biases, other.weights + other.biases):
            a += b
        return self

    def flat(self):
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    preactivations: list
    activations: list

    @property
    def logits(self):
        return self.activations[-1]


@dataclass
class RegTerm:
    """One weighted term of the training objective.

    ``kind`` is a representation regularizer (``ot_plan``, ``identity``,
    ``uniform``), a parameter regularizer (``l2``, ``l2_sp``) or ``kd``.
    Representation terms compare student layer ``layer`` with teacher layer
    ``teacher_layer`` (defaults to the same index).
    """

    kind: str
    alpha: float
    layer: int = -2
    teacher_layer: int | None = None
    tau: float = 4.0
    settings: SolverSettings | None = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise InputError(f"unknown regularizer kind {self.kind!r}")
        if self.alpha < 0:
            raise InputError("alpha must be nonnegative")

    @property
    def needs_teacher(self):
        return self.kind in REPRESENTATION_TERMS or self.kind == "kd"


@dataclass
class Objective:
    value: float
    grads: Gradients
    cross_entropy: float
    term_values: list = field(default_factory=list)
    plans: dict = field(default_factory=dict)
    costs: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.value
        yield self.grads


# --------------------------------------------------------------------------
# construction


def mlp_specs(input_dim, hidden, num_classes):
    dims = [input_dim, *hidden]
    specs = [LayerSpec(a, b, "relu") for a, b in zip(dims, dims[1:])]
    specs.append(LayerSpec(dims[-1], num_classes, "identity"))
    return specs


def _init_layer(spec, rng):
    bound = np.sqrt(6.0 / spec.input_dim)
    W = rng.uniform(-bound, bound, size=(spec.output_dim, spec.input_dim))
    return W, np.zeros(spec.output_dim)


def init_model(specs, seed) -> ModelState:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = [_init_layer(s, rng) for s in specs]
    return ModelState(specs, [p[0] for p in params], [p[1] for p in params], seed=seed)


# --------------------------------------------------------------------------
# forward / backward


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(model: ModelState, X) -> ForwardTrace:
    """Run a ``(input_dim, n)`` batch through the network."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.specs[0].input_dim:
        raise InputError(
            f"expected inputs of shape ({model.specs[0].input_dim}, n), got {X.shape}"
        )
    pre, acts = [], []
    h = X
    for spec, W, b in zip(model.specs, model.weights, model.biases):
        z = W @ h + b[:, None]
        h = _act(z, spec.nonlinearity)
        pre.append(z)
        acts.append(h)
    return ForwardTrace(X, pre, acts)


def softmax_columns(Z):
    Z = Z - Z.max(axis=0, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=0, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    K, n = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= K:
        raise InputError("labels must be integers in [0, K) with one per example")
    Z = logits - logits.max(axis=0, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=0, keepdims=True))
    idx = np.arange(n)
    loss = -logp[labels, idx].mean()
    grad = np.exp(logp)
    grad[labels, idx] -= 1.0
    return float(loss), grad / n


def l2_value_and_grad(model):
    grads = Gradients.zeros_like(model)
    value = 0.0
    for i, W in enumerate(model.weights):
        value += 0.5 * float(np.sum(W * W))
        grads.weights[i] = W.copy()
    return value, grads


def l2_sp_value_and_grad(model):
    """``0.5 * sum ||W - W0||^2`` over transferred layers, plain ``0.5 ||W||^2``
    on layers without a starting point. Biases are not penalized."""
    grads = Gradients.zeros_like(model)
    value = 0.0
    for i, (W, sp) in enumerate(zip(model.weights, model.starting_point)):
        diff = W if sp is None else W - sp[0]
        value += 0.5 * float(np.sum(diff * diff))
        grads.weights[i] = diff.copy()
    return value, grads


def _layer_index(model, idx):
    if not -model.depth <= idx < model.depth:
        raise InputError(f"layer index {idx} out of range for depth {model.depth}")
    return idx % model.depth


def loss_and_grad(model, X, labels, reg_terms=(), teacher_trace=None) -> Objective:
    """Mean cross-entropy plus ``sum alpha * Omega`` and its exact gradient.

    Representation and KD terms read the teacher's activations on the same
    batch from ``teacher_trace``. Their gradients are injected at the
    penalized layer outputs and backpropagated. For ``ot_plan`` the transport
    plan is recomputed here and treated as a constant.
    """
    trace = forward(model, X)
    ce, g_logits = cross_entropy(trace.logits, labels)
    objective = ce
    injected = {}
    term_values = []
    plans, costs = {}, {}
    param_grads = Gradients.zeros_like(model)

    for term in reg_terms:
        if term.needs_teacher:
            if teacher_trace is None:
                raise InputError(f"{term.kind} term needs teacher activations")
            if teacher_trace.inputs.shape[1] != trace.inputs.shape[1]:
                raise InputError("teacher and student were run on different batches")

        if term.kind in REPRESENTATION_TERMS:
            li = _layer_index(model, term.layer)
            t_layer = term.layer if term.teacher_layer is None else term.teacher_layer
            if not -len(teacher_trace.activations) <= t_layer < len(teacher_trace.activations):
                raise InputError(f"teacher layer index {t_layer} out of range")
            res = representation.regularizer(
                term.kind, trace.activations[li], teacher_trace.activations[t_layer], term.settings
            )
            value = res.value
            if term.alpha != 0:
                injected[li] = injected.get(li, 0.0) + term.alpha * res.grad_wrt_student
            if term.kind == "ot_plan":
                plans[li] = res.plan_used
                costs[li] = res.cost
        elif term.kind == "kd":
            value, g = distill.kd_loss_and_grad(teacher_trace.logits, trace.logits, term.tau)
            g_logits = g_logits + term.alpha * g
        else:
            fn = l2_sp_value_and_grad if term.kind == "l2_sp" else l2_value_and_grad
            value, g = fn(model)
            if term.alpha != 0:
                for a, b in zip(param_grads.weights, g.weights):
                    a += term.alpha * b
        term_values.append(value)
        objective += term.alpha * value

    grads = _backward(model, trace, g_logits, injected)
    grads += param_grads
    return Objective(float(objective), grads, ce, term_values, plans, costs)


def _backward(model, trace, g_logits, injected):
    L = model.depth
    grads = Gradients.zeros_like(model)
    g = g_logits + injected.get(L - 1, 0.0)
    for l in range(L - 1, -1, -1):
        if model.specs[l].nonlinearity == "relu":
            g = g * (trace.preactivations[l] > 0)
        h_prev = trace.activations[l - 1] if l > 0 else trace.inputs
        grads.weights[l] = g @ h_prev.T
        grads.biases[l] = g.sum(axis=1)
        if l > 0:
            g = model.weights[l].T @ g + injected.get(l - 1, 0.0)
    return grads


def sgd_step(model, grads, learning_rate, momentum=0.9, weight_decay=0.0):
    """In-place SGD with heavy-ball momentum; returns ``model``.

    ``v <- momentum * v + grad + weight_decay * w`` then ``w <- w - lr * v``.
    """
    if learning_rate < 0:
        raise InputError("learning rate must be nonnegative")
    for params, vels, gs in (
        (model.weights, model.velocity_w, grads.weights),
        (model.biases, model.velocity_b, grads.biases),
    ):
        for p, v, g in zip(params, vels, gs):
            v *= momentum
            v += g
            if weight_decay:
                v += weight_decay * p
            p -= learning_rate * v
    return model


def predict(model, X):
    return np.argmax(forward(model, X).logits, axis=0)


def accuracy(model, X, y):
    return float(np.mean(predict(model, X) == np.asarray(y)))


def permute_hidden(model, layer, perm):
    """Reorder the neurons of hidden layer ``layer``, rewiring the next layer
    so that the network computes the same function."""
    layer = _layer_index(model, layer)
    if layer == model.depth - 1:
        raise InputError("cannot permute the output layer")
    perm = np.asarray(perm)
    out = model.copy()
    out.weights[layer] = out.weights[layer][perm]
    out.biases[layer] = out.biases[layer][perm]
    out.velocity_w[layer] = out.velocity_w[layer][perm]
    out.velocity_b[layer] = out.velocity_b[layer][perm]
    out.weights[layer + 1] = out.weights[layer + 1][:, perm]
    out.velocity_w[layer + 1] = out.velocity_w[layer + 1][:, perm]
    return out


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, path):
    """Write an ``.npz`` checkpoint; loading it gives back identical bits."""
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "specs": np.array(json.dumps([[s.input_dim, s.output_dim, s.nonlinearity] for s in model.specs])),
        "seed": np.array(-1 if model.seed is None else model.seed),
    }
    for i in range(model.depth):
        arrays[f"W{i}"] = model.weights[i]
        arrays[f"b{i}"] = model.biases[i]
        arrays[f"vW{i}"] = model.velocity_w[i]
        arrays[f"vb{i}"] = model.velocity_b[i]
        sp = model.starting_point[i]
        if sp is not None:
            arrays[f"W0_{i}"] = sp[0]
            arrays[f"b0_{i}"] = sp[1]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise InputError(f"unsupported checkpoint version {version}")
        specs = [LayerSpec(int(a), int(b), str(c)) for a, b, c in json.loads(str(data["specs"]))]
        seed = int(data["seed"])
        n = len(specs)
        sp = [
            (data[f"W0_{i}"], data[f"b0_{i}"]) if f"W0_{i}" in data.files else None
            for i in range(n)
        ]
        model = ModelState(
            specs,
            [data[f"W{i}"] for i in range(n)],
            [data[f"b{i}"] for i in range(n)],
            seed=None if seed < 0 else seed,
            starting_point=sp,
        )
        model.velocity_w = [np.array(data[f"vW{i}"]) for i in range(n)]
        model.velocity_b = [np.array(data[f"vb{i}"]) for i in range(n)]
    return model
