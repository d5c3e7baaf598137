"""Small dense-network engine used for the actor and critic.

Parameters live in one flat float64 vector; per-layer weight matrices and bias
vectors are views into it, so optimizer and target-network updates are single
vectorised operations. Batches are rows: ``z = a @ W.T + b`` with ``W`` of
shape ``(n_out, n_in)``.
"""
import enum
import io
import os
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import ConfigurationError, NumericError, ParseError

ACTOR_LAYERS = (40, 400, 200, 100, 200, 400, 1)
CRITIC_LAYERS = (41, 400, 200, 100, 200, 400, 1)


class Activation(enum.Enum):
    TANH = "tanh"
    IDENTITY = "identity"


def count_params(layer_sizes):
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def _layer_views(vector, layer_sizes):
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(vector[pos:pos + n_in * n_out].reshape(n_out, n_in))
        pos += n_in * n_out
        biases.append(vector[pos:pos + n_out])
        pos += n_out
    return weights, biases


def _check_sizes(layer_sizes):
    sizes = tuple(int(n) for n in layer_sizes)
    if len(sizes) < 2 or any(n <= 0 for n in sizes):
        raise ConfigurationError(f"layer sizes must be >= 2 positive integers, got {layer_sizes!r}")
    return sizes


@dataclass
class NetworkParams:
    """Weights and biases of a fully connected network.

    Hidden layers use leaky ReLU with slope ``leaky_slope``; the last layer
    applies ``output_activation``.
    """

    layer_sizes: tuple
    vector: np.ndarray
    leaky_slope: float = 0.01
    output_activation: Activation = Activation.TANH
    weights: list = field(init=False, repr=False, compare=False)
    biases: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.layer_sizes = _check_sizes(self.layer_sizes)
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        expected = count_params(self.layer_sizes)
        if self.vector.shape != (expected,):
            raise ConfigurationError(
                f"parameter vector has shape {self.vector.shape}, expected ({expected},)")
        self.output_activation = Activation(self.output_activation)
        self.weights, self.biases = _layer_views(self.vector, self.layer_sizes)

    @property
    def n_params(self):
        return self.vector.size

    def copy(self):
        return NetworkParams(self.layer_sizes, self.vector.copy(), self.leaky_slope,
                             self.output_activation)

    def with_vector(self, vector):
        return NetworkParams(self.layer_sizes, vector, self.leaky_slope, self.output_activation)

    def check_congruent(self, other):
        if tuple(other.layer_sizes) != self.layer_sizes:
            raise ConfigurationError(
                f"layer sizes differ: {self.layer_sizes} vs {tuple(other.layer_sizes)}")


@dataclass
class Gradients:
    """Gradient values laid out exactly like the owning network's parameters."""

    layer_sizes: tuple
    vector: np.ndarray
    weights: list = field(init=False, repr=False, compare=False)
    biases: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.layer_sizes = tuple(self.layer_sizes)
        if self.vector.shape != (count_params(self.layer_sizes),):
            raise ConfigurationError("gradient vector does not match layer sizes")
        self.weights, self.biases = _layer_views(self.vector, self.layer_sizes)

    @classmethod
    def zeros_like(cls, net):
        return cls(net.layer_sizes, np.zeros(net.n_params))


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, net, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(net.n_params), np.zeros(net.n_params), 0,
                   learning_rate, beta1, beta2, epsilon)


def init_params(layer_sizes, rng, leaky_slope=0.01, output_activation=Activation.TANH,
                final_scale=3e-3):
    """Uniform init: hidden layers in +-1/sqrt(fan_in), last layer in +-final_scale."""
    sizes = _check_sizes(layer_sizes)
    chunks = []
    n_layers = len(sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(n_in)
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_out))
    return NetworkParams(sizes, np.concatenate(chunks), leaky_slope, output_activation)


def zeros_params(layer_sizes, leaky_slope=0.01, output_activation=Activation.TANH):
    sizes = _check_sizes(layer_sizes)
    return NetworkParams(sizes, np.zeros(count_params(sizes)), leaky_slope, output_activation)


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ConfigurationError(
            f"input has shape {np.shape(x)}, network expects {net.layer_sizes[0]} features")
    return x, squeeze


def forward_cache(net, x):
    """Forward pass that also returns the per-layer values needed by :func:`backward`.

    The cache holds ``(inputs, pre_activations)`` where ``inputs[i]`` feeds layer ``i``.
    """
    a, squeeze = _as_batch(net, x)
    inputs, pre = [], []
    last = len(net.weights) - 1
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        if i < last:
            a = np.where(z > 0, z, net.leaky_slope * z)
        elif net.output_activation is Activation.TANH:
            a = np.tanh(z)
        else:
            a = z
    out = a[0] if squeeze else a
    return out, (inputs, pre, a, squeeze)


def forward(net, x):
    """Network output for one input vector or a batch of row vectors."""
    return forward_cache(net, x)[0]


def backward(net, x, output_grad, cache=None, out=None, param_grads=True):
    """Reverse-mode gradients of ``sum(output * output_grad)``.

    Returns ``(Gradients, input_grad)``; for a batch the parameter gradients
    are summed over rows and ``input_grad`` keeps one row per sample. Pass the
    cache from :func:`forward_cache` to skip recomputing the forward pass, and
    a :class:`Gradients` as ``out`` to reuse its storage. With
    ``param_grads=False`` only the input gradient is computed and the first
    element of the result is ``None``.
    """
    if cache is None:
        _, cache = forward_cache(net, x)
    inputs, pre, y, squeeze = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != y.shape:
        raise ConfigurationError(f"output_grad has shape {g.shape}, expected {y.shape}")

    if net.output_activation is Activation.TANH:
        dz = g * (1.0 - y * y)
    else:
        dz = g
    grads = None
    if param_grads:
        grads = out if out is not None else Gradients(net.layer_sizes, np.empty(net.n_params))
    for i in range(len(net.weights) - 1, -1, -1):
        if grads is not None:
            np.matmul(dz.T, inputs[i], out=grads.weights[i])
            np.sum(dz, axis=0, out=grads.biases[i])
        da = dz @ net.weights[i]
        if i > 0:
            dz = np.where(pre[i - 1] > 0, da, net.leaky_slope * da)
    return grads, (da[0] if squeeze else da)


@numba.njit(cache=True)
def _adam_kernel(p, g, m, v, out_p, out_m, out_v, lr, beta1, beta2, eps, corr1, corr2):
    # elementwise, so the outputs may alias the inputs.
    # lr * (m / c1) / (sqrt(v / c2) + eps) rearranged to keep divisions out of the loop
    step = lr * np.sqrt(corr2) / corr1
    eps_hat = eps * np.sqrt(corr2)
    for i in range(p.size):
        mi = beta1 * m[i] + (1.0 - beta1) * g[i]
        vi = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        out_m[i] = mi
        out_v[i] = vi
        out_p[i] = p[i] - step * mi / (np.sqrt(vi) + eps_hat)


@numba.njit(cache=True)
def _all_finite(x):
    for i in range(x.size):
        if not np.isfinite(x[i]):
            return False
    return True


def _check_grads(params, grads):
    g = grads.vector
    if g.shape != params.vector.shape:
        raise ConfigurationError("gradient and parameter shapes differ")
    if not _all_finite(g):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NumericError(
            f"{bad.size} non-finite gradient entries (first at flat index {bad[0]}); update aborted")
    return g


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched."""
    g = _check_grads(params, grads)
    t = state.step_count + 1
    p, m, v = (np.empty_like(g) for _ in range(3))
    _adam_kernel(params.vector, g, state.first_moment, state.second_moment, p, m, v,
                 state.learning_rate, state.beta1, state.beta2, state.epsilon,
                 1.0 - state.beta1 ** t, 1.0 - state.beta2 ** t)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return params.with_vector(p), new_state


def adam_step_inplace(params, grads, state):
    """Same update as :func:`adam_step`, written into ``params`` and ``state``."""
    g = _check_grads(params, grads)
    state.step_count += 1
    t = state.step_count
    _adam_kernel(params.vector, g, state.first_moment, state.second_moment,
                 params.vector, state.first_moment, state.second_moment,
                 state.learning_rate, state.beta1, state.beta2, state.epsilon,
                 1.0 - state.beta1 ** t, 1.0 - state.beta2 ** t)


@numba.njit(cache=True)
def _blend_kernel(target, source, tau, out):
    for i in range(target.size):
        out[i] = tau * source[i] + (1.0 - tau) * target[i]


def blend(target, source, tau, out=None):
    """``tau * source + (1 - tau) * target`` over flat parameter vectors."""
    if target.shape != source.shape:
        raise ConfigurationError(f"cannot blend shapes {target.shape} and {source.shape}")
    if out is None:
        out = np.empty_like(target)
    _blend_kernel(target, source, float(tau), out)
    return out


# -- checkpoint text format ------------------------------------------------

def _fmt(values):
    return " ".join(["%.17g" % v for v in values.tolist()])


def write_params(net, stream):
    stream.write("layers: " + " ".join(str(n) for n in net.layer_sizes) + "\n")
    for W, b in zip(net.weights, net.biases):
        stream.write(_fmt(W.ravel()) + " " + _fmt(b) + "\n")


def save_params(net, target):
    """Write ``net`` to a path or a text stream."""
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            write_params(net, fh)
    else:
        write_params(net, target)


class _LineReader:
    """Reads lines from a text stream while tracking the byte offset."""

    def __init__(self, stream, offset=0):
        self.stream = stream
        self.offset = offset

    def next_line(self, what):
        start = self.offset
        line = self.stream.readline()
        if not line:
            raise ParseError(f"unexpected end of stream while reading {what}", start)
        self.offset += len(line.encode())
        if not line.endswith("\n"):
            raise ParseError(f"truncated line while reading {what}", start)
        return start, line[:-1]


def _parse_floats(text, count, start, what):
    tokens = text.split()
    try:
        values = np.fromiter(map(float, tokens), dtype=np.float64, count=len(tokens))
    except ValueError:
        pos = 0
        for tok in tokens:
            pos = text.index(tok, pos)
            try:
                float(tok)
            except ValueError:
                raise ParseError(f"bad number {tok!r} in {what}",
                                 start + len(text[:pos].encode())) from None
            pos += len(tok)
        raise
    if values.size != count:
        raise ParseError(f"{what}: expected {count} numbers, found {values.size}", start)
    return values


def read_params(reader, expected_sizes=None, leaky_slope=0.01,
                output_activation=Activation.TANH):
    start, header = reader.next_line("header")
    if not header.startswith("layers:"):
        raise ParseError(f"expected 'layers:' header, found {header[:30]!r}", start)
    try:
        sizes = _check_sizes(header[len("layers:"):].split())
    except (ValueError, ConfigurationError):
        raise ParseError("malformed layer sizes in header", start) from None
    if expected_sizes is not None and tuple(expected_sizes) != sizes:
        raise ConfigurationError(
            f"checkpoint layers {sizes} do not match expected {tuple(expected_sizes)}")
    chunks = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        line_start, line = reader.next_line(f"layer {i}")
        chunks.append(_parse_floats(line, n_in * n_out + n_out, line_start, f"layer {i}"))
    return NetworkParams(sizes, np.concatenate(chunks), leaky_slope, output_activation)


def load_params(source, expected_sizes=None, leaky_slope=0.01,
                output_activation=Activation.TANH):
    """Read a network written by :func:`save_params` from a path or text stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            return read_params(_LineReader(fh), expected_sizes, leaky_slope, output_activation)
    if isinstance(source, bytes):
        source = io.StringIO(source.decode())
    return read_params(_LineReader(source), expected_sizes, leaky_slope, output_activation)
