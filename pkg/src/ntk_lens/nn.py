"""Dense multilayer perceptrons with hand-written forward and backward passes.

Two parametrizations are supported:

* ``standard``: ``h_l = a_{l-1} W_l^T + b_l``, ``a_l = act(h_l)``, logits from a
  biased linear readout. Used by all training experiments.
* ``ntk_bias_free``: ``X_l = act(X_{l-1} W_l^T) / sqrt(w_l)`` with ``w_l`` the
  width of layer ``l`` and logits ``X_L w^T``. No biases. This is the form for
  which the conjugate-kernel decomposition of the NTK holds.

Batches are row-major: ``batch[i]`` is sample ``i``. Parameters live in one
flat vector; ``ParameterSet.layout`` maps names to slices of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

ACTIVATIONS = ("relu", "identity")
PARAMETRIZATIONS = ("standard", "ntk_bias_free")
INITS = ("lecun_normal", "xavier_uniform")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    parametrization: str = "standard"
    init: str = "lecun_normal"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.hidden_widths) < 1 or min(self.hidden_widths) < 1:
            raise ValueError("need at least one hidden layer, all widths >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"parametrization must be one of {PARAMETRIZATIONS}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def has_bias(self) -> bool:
        return self.parametrization == "standard"

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_out, fan_in) for each weight matrix, readout last."""
        widths = [self.input_dim, *self.hidden_widths, self.output_dim]
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def with_width(self, width: int) -> "NetworkSpec":
        return replace(self, hidden_widths=(width,) * len(self.hidden_widths))


@dataclass(frozen=True)
class Slot:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class ParameterSet:
    values: np.ndarray
    layout: tuple[Slot, ...]

    def __post_init__(self):
        total = sum(s.size for s in self.layout)
        if self.values.shape != (total,):
            raise ValueError(f"parameter vector has shape {self.values.shape}, layout needs ({total},)")

    def __len__(self) -> int:
        return self.values.size

    def view(self, name: str) -> np.ndarray:
        for s in self.layout:
            if s.name == name:
                return self.values[s.offset : s.offset + s.size].reshape(s.shape)
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> "ParameterSet":
        return ParameterSet(np.asarray(values, dtype=np.float64), self.layout)

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.values.copy(), self.layout)


def build_layout(spec: NetworkSpec) -> tuple[Slot, ...]:
    slots = []
    offset = 0
    n_layers = len(spec.layer_dims)
    for idx, (fan_out, fan_in) in enumerate(spec.layer_dims, start=1):
        last = idx == n_layers
        wname = "readout" if last else f"W{idx}"
        slots.append(Slot(wname, (fan_out, fan_in), offset))
        offset += fan_out * fan_in
        if spec.has_bias:
            slots.append(Slot("b_out" if last else f"b{idx}", (fan_out,), offset))
            offset += fan_out
    return tuple(slots)


def parameter_count(spec: NetworkSpec) -> int:
    return sum(s.size for s in build_layout(spec))


def init_params(spec: NetworkSpec) -> ParameterSet:
    """Draw initial parameters; biases start at zero."""
    layout = build_layout(spec)
    rng = np.random.default_rng(spec.seed)
    values = np.zeros(sum(s.size for s in layout))
    for s in layout:
        if len(s.shape) != 2:
            continue
        fan_out, fan_in = s.shape
        if spec.init == "lecun_normal":
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=s.shape)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=s.shape)
        values[s.offset : s.offset + s.size] = w.ravel()
    return ParameterSet(values, layout)


def _act(spec: NetworkSpec, h: np.ndarray) -> np.ndarray:
    return np.maximum(h, 0.0) if spec.activation == "relu" else h


def _act_grad(spec: NetworkSpec, h: np.ndarray) -> np.ndarray:
    # relu'(0) := 0
    return (h > 0.0).astype(np.float64) if spec.activation == "relu" else np.ones_like(h)


@dataclass
class ForwardCache:
    """Per-layer pre-activations ``pre[l]`` and layer inputs ``acts[l]`` (``acts[0]`` is the batch)."""

    pre: list[np.ndarray] = field(default_factory=list)
    acts: list[np.ndarray] = field(default_factory=list)


def _weights(spec: NetworkSpec, params: ParameterSet) -> list[tuple[np.ndarray, np.ndarray | None]]:
    n_layers = len(spec.layer_dims)
    out = []
    for idx in range(1, n_layers + 1):
        last = idx == n_layers
        w = params.view("readout" if last else f"W{idx}")
        b = params.view("b_out" if last else f"b{idx}") if spec.has_bias else None
        out.append((w, b))
    return out


def _check_batch(spec: NetworkSpec, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"batch must have shape (d, {spec.input_dim}), got {x.shape}")
    return x


def forward(spec: NetworkSpec, params: ParameterSet, batch) -> tuple[np.ndarray, ForwardCache]:
    """Logits of shape (d, output_dim) and the cache needed for backward passes."""
    x = _check_batch(spec, batch)
    cache = ForwardCache(acts=[x])
    layers = _weights(spec, params)
    a = x
    for w, b in layers[:-1]:
        h = a @ w.T
        if b is not None:
            h = h + b
        cache.pre.append(h)
        a = _act(spec, h)
        if not spec.has_bias:
            a = a / np.sqrt(w.shape[0])
        cache.acts.append(a)
    w, b = layers[-1]
    logits = a @ w.T
    if b is not None:
        logits = logits + b
    return logits, cache


@dataclass
class LayerFactor:
    """Per-sample gradient of one layer in outer-product form.

    For Jacobian row ``r`` (sample ``r // n``, output ``r % n``) the gradient
    with respect to the layer's weight matrix is ``outer(delta[r], inputs[r // n])``,
    and with respect to its bias (if any) it is ``delta[r]``.
    """

    delta: np.ndarray
    inputs: np.ndarray
    has_bias: bool


def jacobian_factors(spec: NetworkSpec, params: ParameterSet, batch) -> list[LayerFactor]:
    """Reverse-mode per-sample, per-output gradients, one backward pass per output unit.

    Returned in parameter-layout order.
    """
    x = _check_batch(spec, batch)
    _, cache = forward(spec, params, x)
    layers = _weights(spec, params)
    d, n = x.shape[0], spec.output_dim
    depth = len(layers)
    deltas = [np.empty((d * n, w.shape[0])) for w, _ in layers]
    gates = [_act_grad(spec, h) for h in cache.pre]
    for k in range(n):
        rows = slice(k, d * n, n)
        g = np.zeros((d, n))
        g[:, k] = 1.0
        deltas[-1][rows] = g
        for li in range(depth - 2, -1, -1):
            w_next = layers[li + 1][0]
            back = g @ w_next
            if not spec.has_bias:
                back = back / np.sqrt(layers[li][0].shape[0])
            g = back * gates[li]
            deltas[li][rows] = g
    return [LayerFactor(deltas[li], cache.acts[li], spec.has_bias) for li in range(depth)]


def per_sample_jacobian(spec: NetworkSpec, params: ParameterSet, batch) -> np.ndarray:
    """Jacobian of shape (d*n, P); row ``i*n + k`` is the gradient of output ``k`` at sample ``i``."""
    factors = jacobian_factors(spec, params, batch)
    n = spec.output_dim
    blocks = []
    for f in factors:
        inputs = np.repeat(f.inputs, n, axis=0)
        blocks.append(np.einsum("ro,ri->roi", f.delta, inputs).reshape(f.delta.shape[0], -1))
        if f.has_bias:
            blocks.append(f.delta)
    return np.concatenate(blocks, axis=1)


def backward(spec: NetworkSpec, params: ParameterSet, cache: ForwardCache, grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss with respect to the flat parameter vector, given dLoss/dlogits."""
    layers = _weights(spec, params)
    grads = []
    g = np.asarray(grad_logits, dtype=np.float64)
    for li in range(len(layers) - 1, -1, -1):
        w, b = layers[li]
        a_in = cache.acts[li]
        layer_grads = [(g.T @ a_in).ravel()]
        if b is not None:
            layer_grads.append(g.sum(axis=0))
        grads.append(layer_grads)
        if li == 0:
            break
        back = g @ w
        if not spec.has_bias:
            back = back / np.sqrt(layers[li - 1][0].shape[0])
        g = back * _act_grad(spec, cache.pre[li - 1])
    flat = [part for layer in reversed(grads) for part in layer]
    return np.concatenate(flat)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over samples and its gradient (softmax - y) / d."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.shape != labels.shape:
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} differ")
    d = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    loss = float(-(labels * log_probs).sum() / d)
    grad = (np.exp(log_probs) - labels) / d
    return loss, grad


def loss_and_grad(spec: NetworkSpec, params: ParameterSet, inputs, labels) -> tuple[float, np.ndarray]:
    logits, cache = forward(spec, params, inputs)
    loss, g = softmax_cross_entropy(logits, labels)
    return loss, backward(spec, params, cache, g)


def evaluate_loss(spec: NetworkSpec, params: ParameterSet, inputs, labels) -> float:
    logits, _ = forward(spec, params, inputs)
    return softmax_cross_entropy(logits, labels)[0]


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grads: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return AdamState(m, v, t), new_params


@dataclass(frozen=True)
class MomentumState:
    velocity: np.ndarray

    @classmethod
    def zeros(cls, size: int) -> "MomentumState":
        return cls(np.zeros(size))


def sgd_momentum_step(
    state: MomentumState, params: np.ndarray, grads: np.ndarray, lr: float, momentum: float = 0.9
) -> tuple[MomentumState, np.ndarray]:
    """Heavy-ball update: v <- momentum*v + g, theta <- theta - lr*v."""
    v = momentum * state.velocity + grads
    return MomentumState(v), params - lr * v


class Optimizer:
    """Stateful wrapper used by the training loop."""

    def __init__(self, name: str, size: int, lr: float, momentum: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if name not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {name!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.name = name
        self.lr = lr
        self.momentum = momentum
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.zeros(size) if name == "adam" else MomentumState.zeros(size)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.name == "adam":
            self.state, out = adam_step(self.state, params, grads, self.lr, self.momentum, self.beta2, self.eps)
        else:
            self.state, out = sgd_momentum_step(self.state, params, grads, self.lr, self.momentum)
        return out

