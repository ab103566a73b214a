"""Minimal fully-connected network with hand-rolled backpropagation.

Hidden layers use tanh, the output layer is identity (link functions such as
the logistic live in the loss, not the network).  Training is full-batch Adam,
so a run is fully determined by the initialization stream and step count.
"""

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .numkit import adam_minimize
from .rng import RngStream


@dataclass
class MlpParams:
    """Weights and biases, one entry per layer transition.

    ``weights[l]`` has shape (fan_in, fan_out); ``biases[l]`` shape (fan_out,).
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def layer_sizes(self) -> Tuple[int, ...]:
        sizes = [self.weights[0].shape[0]]
        sizes += [w.shape[1] for w in self.weights]
        return tuple(sizes)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(layer_sizes: Sequence[int], rng: RngStream) -> MlpParams:
    """Uniform Glorot initialization: W ~ U[-a, a], a = sqrt(6/(fan_in+fan_out)).

    Biases start at zero.  ``layer_sizes`` runs input -> hidden... -> output.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
    gen = rng.generator()
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(gen.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def pack_params(params: MlpParams) -> np.ndarray:
    """Flatten weights and biases into one vector (layer order, W then b)."""
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def unpack_params(theta: np.ndarray, layer_sizes: Sequence[int]) -> MlpParams:
    """Inverse of :func:`pack_params` for the given architecture."""
    sizes = list(layer_sizes)
    weights, biases = [], []
    k = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(theta[k : k + fan_in * fan_out].reshape(fan_in, fan_out))
        k += fan_in * fan_out
        biases.append(theta[k : k + fan_out])
        k += fan_out
    if k != theta.size:
        raise ValueError(f"theta has {theta.size} entries, architecture needs {k}")
    return MlpParams(weights, biases)


def _forward_cached(params: MlpParams, X: np.ndarray):
    """Forward pass keeping post-activation values for backprop."""
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if l < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Network output for a single input vector (shape (out_dim,))."""
    x = np.asarray(x, dtype=float).ravel()
    out, _ = _forward_cached(params, x[None, :])
    return out[0]


def mlp_forward_batch(params: MlpParams, X) -> np.ndarray:
    """Outputs for a batch; returns (n,) when out_dim == 1, else (n, out_dim)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    out, _ = _forward_cached(params, X)
    return out[:, 0] if out.shape[1] == 1 else out


def _backprop(params: MlpParams, acts, delta_out: np.ndarray) -> np.ndarray:
    """Gradient (packed) of sum_i delta_out[i] . output_i w.r.t. parameters."""
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = delta_out
    for l in range(len(params.weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * (1.0 - acts[l] ** 2)
    return pack_params(MlpParams(grads_w, grads_b))


def _sigmoid(t):
    out = np.empty_like(t)
    posm = t >= 0
    out[posm] = 1.0 / (1.0 + np.exp(-t[posm]))
    e = np.exp(t[~posm])
    out[~posm] = e / (1.0 + e)
    return out


def mlp_loss_and_gradient(params: MlpParams, X, y, loss: str):
    """Mean loss over the batch and its packed parameter gradient.

    ``loss`` is "squared" (mean (o - y)^2) or "logistic" (binary cross-entropy
    with a sigmoid applied to the raw output; labels in {0, 1}).  Output
    dimension must be 1.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"{n} rows but {y.shape[0]} targets")
    out, acts = _forward_cached(params, X)
    if out.shape[1] != 1:
        raise ValueError("loss gradients require an output dimension of 1")
    o = out[:, 0]
    if loss == "squared":
        value = float(np.mean((o - y) ** 2))
        delta = (2.0 / n) * (o - y)
    elif loss == "logistic":
        p = _sigmoid(o)
        # stable cross-entropy: log(1+exp(-|o|)) + max(o,0) - o*y
        value = float(np.mean(np.log1p(np.exp(-np.abs(o))) + np.maximum(o, 0.0) - o * y))
        delta = (p - y) / n
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, _backprop(params, acts, delta[:, None])


def mlp_output_gradient(params: MlpParams, X, weights_out) -> np.ndarray:
    """Packed gradient of sum_i weights_out[i] * output_i (out_dim 1)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.asarray(weights_out, dtype=float).ravel()
    out, acts = _forward_cached(params, X)
    if out.shape[1] != 1:
        raise ValueError("output gradient requires an output dimension of 1")
    return _backprop(params, acts, w[:, None])


def train_mlp(
    X,
    y,
    hidden: Sequence[int],
    loss: str,
    steps: int,
    lr: float,
    rng: RngStream,
    callback: Callable[[int, float], None] = None,
) -> MlpParams:
    """Fit an MLP by full-batch Adam; deterministic given ``rng``.

    :param X: (n, d) inputs; :param y: (n,) targets (labels for "logistic").
    :param hidden: hidden layer widths, e.g. (32, 32).
    :param loss: "squared" or "logistic".
    :param steps: number of Adam updates.
    :param lr: Adam step size.
    :param rng: stream for the initialization draw.
    :param callback: optional hook called as callback(step, loss_value).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sizes = [X.shape[1]] + list(hidden) + [1]
    params0 = init_mlp(sizes, rng)
    state = {"step": 0}

    def grad(theta):
        p = unpack_params(theta, sizes)
        value, g = mlp_loss_and_gradient(p, X, y, loss)
        state["step"] += 1
        if callback is not None:
            callback(state["step"], value)
        return g

    theta = adam_minimize(grad, pack_params(params0), steps=steps, lr=lr)
    return unpack_params(theta, sizes)
