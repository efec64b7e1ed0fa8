"""Minimal differentiable blocks: per-step MLPs, Adam, pointwise embedding.

Reverse mode is hand-rolled for the one fixed composite this library needs;
each forward call returns the cache its backward companion consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int
    hidden: tuple = (64, 64)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1 or any(w < 1 for w in self.hidden):
            raise ValueError(f"invalid layer widths: {self.widths}")

    @property
    def widths(self) -> tuple:
        return (self.in_dim,) + tuple(self.hidden) + (self.out_dim,)


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list            # weights[l]: (widths[l], widths[l+1])
    biases: list             # biases[l]: (widths[l+1],)

    def parameters(self) -> list:
        """Flat parameter list, weights interleaved with biases."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(spec: MlpSpec, seed: int, zero_output: bool = True) -> MlpParams:
    """He-uniform fan-in initialisation; the output layer starts at zero.

    A zero last layer makes every approximator's initial output vanish,
    which keeps degenerate (zero-volatility) runs exact from iteration one.
    Pass ``zero_output=False`` to randomise the full stack.
    """
    rng = np.random.default_rng(seed)
    widths = spec.widths
    weights, biases = [], []
    for l in range(len(widths) - 1):
        fan_in = widths[l]
        if zero_output and l == len(widths) - 2:
            weights.append(np.zeros((widths[l], widths[l + 1])))
        else:
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(widths[l], widths[l + 1])))
        biases.append(np.zeros(widths[l + 1]))
    return MlpParams(spec, weights, biases)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else z


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0.0).astype(float) if kind == "relu" else np.ones_like(z)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Affine/activation chain; returns ``(output, cache)``.

    ``x`` may carry arbitrary leading batch axes over the input width.
    """
    spec = params.spec
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != expected {spec.in_dim}")
    h = x
    pre = []
    post = [x]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if l == last else _act(z, spec.activation)
        post.append(h)
    return h, (pre, post)


def mlp_backward(params: MlpParams, cache, cotangent: np.ndarray):
    """Exact reverse pass; returns ``(grads, input_grad)``.

    ``grads`` aligns with :meth:`MlpParams.parameters`.  Gradients are summed
    over all leading batch axes of the cotangent.
    """
    spec = params.spec
    pre, post = cache
    if cotangent.shape != pre[-1].shape:
        raise ValueError(
            f"cotangent shape {cotangent.shape} does not match output {pre[-1].shape}")
    grads: list = [None] * (2 * len(params.weights))
    g = cotangent
    for l in range(len(params.weights) - 1, -1, -1):
        if l != len(params.weights) - 1:
            g = g * _act_grad(pre[l], spec.activation)
        flat_in = post[l].reshape(-1, post[l].shape[-1])
        flat_g = g.reshape(-1, g.shape[-1])
        grads[2 * l] = flat_in.T @ flat_g
        grads[2 * l + 1] = flat_g.sum(axis=0)
        g = g @ params.weights[l].T
    return grads, g


def stacked_forward(params_list: list, x: np.ndarray):
    """Evaluate several same-shaped MLPs at once, one batch each.

    ``x`` has shape ``(N, B, in)`` with ``x[n]`` feeding ``params_list[n]``.
    A batched-matmul fast path over the per-net loop; returns
    ``(outputs (N, B, out), cache)``.
    """
    spec = params_list[0].spec
    weights = [np.stack([p.weights[l] for p in params_list])
               for l in range(len(params_list[0].weights))]
    biases = [np.stack([p.biases[l] for p in params_list])
              for l in range(len(params_list[0].biases))]
    h = x
    pre, post = [], [x]
    last = len(weights) - 1
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b[:, None, :]
        pre.append(z)
        h = z if l == last else _act(z, spec.activation)
        post.append(h)
    return h, (weights, pre, post)


def stacked_backward(params_list: list, cache, cotangent: np.ndarray):
    """Reverse pass of :func:`stacked_forward`.

    Returns ``(per_net_grads, input_grads)`` where ``per_net_grads[n]``
    aligns with ``params_list[n].parameters()``.
    """
    spec = params_list[0].spec
    weights, pre, post = cache
    n_layers = len(weights)
    g = cotangent
    stacked_dw, stacked_db = [None] * n_layers, [None] * n_layers
    for l in range(n_layers - 1, -1, -1):
        if l != n_layers - 1:
            g = g * _act_grad(pre[l], spec.activation)
        stacked_dw[l] = np.einsum("nbi,nbo->nio", post[l], g)
        stacked_db[l] = g.sum(axis=1)
        g = g @ weights[l].transpose(0, 2, 1)
    per_net = []
    for n in range(len(params_list)):
        grads = []
        for l in range(n_layers):
            grads.extend((stacked_dw[l][n], stacked_db[l][n]))
        per_net.append(grads)
    return per_net, g


@dataclass
class AdamState:
    """First/second moment accumulators for one flat parameter list."""

    lr: float
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list, lr: float = 1e-3) -> AdamState:
    return AdamState(lr=lr,
                     m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list, grads: list):
    """Standard bias-corrected Adam update, applied in place; returns both."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state, params


@dataclass
class EmbeddingParams:
    """Pointwise affine map applied to every node of a value stream."""

    weight: np.ndarray   # (d, d_out)
    bias: np.ndarray     # (d_out,)

    def parameters(self) -> list:
        return [self.weight, self.bias]


def init_embedding(in_dim: int, out_dim: int, seed: int) -> EmbeddingParams:
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / in_dim)
    return EmbeddingParams(rng.uniform(-bound, bound, size=(in_dim, out_dim)),
                           np.zeros(out_dim))


def embed_stream(params: EmbeddingParams, stream: np.ndarray):
    """Map a ``(..., n+1, d)`` stream nodewise to ``(..., n+1, d_out)``."""
    if stream.shape[-1] != params.weight.shape[0]:
        raise ValueError(
            f"stream has {stream.shape[-1]} channels, embedding expects "
            f"{params.weight.shape[0]}")
    return stream @ params.weight + params.bias, stream


def embed_backward(params: EmbeddingParams, cache, cotangent: np.ndarray):
    """Reverse of :func:`embed_stream`; returns ``([dW, db], input_grad)``."""
    stream = cache
    flat_in = stream.reshape(-1, stream.shape[-1])
    flat_g = cotangent.reshape(-1, cotangent.shape[-1])
    return [flat_in.T @ flat_g, flat_g.sum(axis=0)], cotangent @ params.weight.T
