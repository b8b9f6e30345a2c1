"""A small feed-forward network substrate with hand-written gradients.

Only what the rating and counter models need: dense layers with tanh, exp or
identity activations, Adam, a linearly decaying learning rate and a flat
``.npz`` serialization.  Parameters of a network live in one contiguous
vector (``net.params``) and the per-layer weight/bias arrays are views into
it, so the optimizer updates everything with a handful of vector ops.
"""

from __future__ import annotations

import io
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numba import njit

from .errors import DimensionError, NonFiniteError, SchemaError

ACTIVATIONS = ("tanh", "exp", "identity")
BACKENDS = ("compiled", "numpy")
EXP_CLAMP = 30.0
FORMAT_HEADER = "pvpbalance-model"
FORMAT_VERSION = 1


class DenseNet:
    """Fully connected network; ``sizes=[d_in, h1, ..., d_out]``."""

    def __init__(
        self,
        sizes: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator | None = None,
        dtype: Any = np.float64,
    ) -> None:
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise DimensionError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activations = tuple(activations)
        self.dtype = np.dtype(dtype)
        n_params = sum(i * o + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))
        self.params = np.zeros(n_params, dtype=self.dtype)
        self.grads = np.zeros(n_params, dtype=self.dtype)
        self.weights = self._views(self.params, weights=True)
        self.biases = self._views(self.params, weights=False)
        self.weight_grads = self._views(self.grads, weights=True)
        self.bias_grads = self._views(self.grads, weights=False)
        if rng is not None:
            self.init_params(rng)

    def _views(self, flat: np.ndarray, weights: bool) -> list[np.ndarray]:
        out, offset = [], 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[offset:offset + i * o].reshape(i, o)
            offset += i * o
            b = flat[offset:offset + o]
            offset += o
            out.append(w if weights else b)
        return out

    def init_params(self, rng: np.random.Generator) -> None:
        # Glorot-uniform weights, zero biases
        for w, b in zip(self.weights, self.biases):
            fan_in, fan_out = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
            b[...] = 0.0

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        h = np.asarray(x, dtype=self.dtype)
        if h.ndim == 1:
            h = h[None, :]
        if h.shape[1] != self.input_dim:
            raise DimensionError(f"expected input dimension {self.input_dim}, got {h.shape[1]}")
        cache = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w
            z += b
            if act == "tanh":
                out = np.tanh(z)
            elif act == "exp":
                out = np.exp(np.clip(z, -EXP_CLAMP, EXP_CLAMP))
            else:
                out = z
            cache.append((h, z, out))
            h = out
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list, grad_out: np.ndarray, accumulate: bool = True) -> np.ndarray:
        """Accumulate parameter gradients into ``self.grads``; return d(loss)/d(input).

        With ``accumulate=False`` only the input gradient is computed.
        """
        g = np.asarray(grad_out, dtype=self.dtype)
        for layer in range(len(cache) - 1, -1, -1):
            h_in, z, out = cache[layer]
            act = self.activations[layer]
            if act == "tanh":
                g = g * (1.0 - out * out)
            elif act == "exp":
                g = g * out * (np.abs(z) <= EXP_CLAMP)
            if accumulate:
                self.weight_grads[layer] += h_in.T @ g
                self.bias_grads[layer] += g.sum(axis=0)
            g = g @ self.weights[layer].T
        return g

    def zero_grad(self) -> None:
        self.grads[...] = 0.0

    def copy(self) -> DenseNet:
        net = DenseNet(self.sizes, self.activations, dtype=self.dtype)
        net.params[...] = self.params
        return net

    def astype(self, dtype: Any) -> DenseNet:
        net = DenseNet(self.sizes, self.activations, dtype=dtype)
        net.params[...] = self.params
        return net


def straight_through(grad_zq: np.ndarray) -> np.ndarray:
    """Gradient copy across the quantizer: d/dz_e receives d/dz_q unchanged."""
    return grad_zq


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, **kwargs: float) -> AdamState:
        return cls(np.zeros_like(params), np.zeros_like(params), **kwargs)


def adam_coefficients(beta1: float, beta2: float, eps: float, lr: float, step: int, dtype) -> np.ndarray:
    """``[b1, 1 - b1, b2, 1 - b2, eps, bias-corrected step size, 1 / (1 - b2**step)]``."""
    return np.array([beta1, 1 - beta1, beta2, 1 - beta2, eps,
                     lr / (1 - beta1**step), 1 / (1 - beta2**step)], dtype=dtype)


@njit(cache=True, error_model="numpy")
def adam_kernel(p, g, m, v, coeffs):
    """Fused Adam update on flat arrays; False (and nothing changed) on a non-finite gradient."""
    finite = True
    for i in range(g.size):
        finite &= np.isfinite(g[i])
    if not finite:
        return False
    b1, c1, b2, c2, eps, step_size, inv_corr2 = coeffs
    for i in range(g.size):
        gi = g[i]
        mi = b1 * m[i] + c1 * gi
        vi = b2 * v[i] + c2 * gi * gi
        m[i], v[i] = mi, vi
        p[i] -= step_size * mi / (np.sqrt(vi * inv_corr2) + eps)
        g[i] = 0
    return True


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """In-place Adam update with bias correction; zeroes ``grads`` afterwards.

    Arrays must be C-contiguous; multi-dimensional ones are updated through flat views.
    """
    arrays = (params, grads, state.m, state.v)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionError("parameter, gradient and moment shapes must match")
    if not all(a.flags.c_contiguous for a in arrays):
        raise DimensionError("Adam needs C-contiguous arrays to update in place")
    step = state.step + 1
    coeffs = adam_coefficients(state.beta1, state.beta2, state.eps, lr, step, params.dtype)
    if not adam_kernel(*(a.reshape(-1) for a in arrays), coeffs):
        raise NonFiniteError("non-finite gradient encountered")
    state.step = step
    return params


@dataclass(frozen=True)
class LinearDecay:
    """Learning rate decaying linearly from ``initial`` to 0 over ``epochs``."""

    initial: float = 2.5e-4
    epochs: float = 100

    def rate(self, epoch: float) -> float:
        return max(0.0, self.initial * (1.0 - epoch / self.epochs))


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 2.5e-4
    dtype: str = "float32"
    backend: str = "compiled"  # or "numpy", the step-by-step reference route
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")

    @property
    def schedule(self) -> LinearDecay:
        return LinearDecay(self.lr, self.epochs)


def compact(values: np.ndarray, bound: int) -> tuple[np.ndarray, np.ndarray]:
    """``np.unique(values, return_inverse=True)`` for integers in ``[0, bound)``, without sorting."""
    present = np.zeros(bound, dtype=bool)
    present[values] = True
    uniq = np.flatnonzero(present)
    position = np.cumsum(present) - 1
    return uniq, position[values]


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield ``(indices, swap_coins)`` for one epoch: shuffled order, fresh coins."""
    order = rng.permutation(n)
    coins = rng.random(n) < 0.5
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield idx, coins[start:start + batch_size]


def save_nets(path: str | Path | io.IOBase, nets: Mapping[str, DenseNet], meta: Mapping | None = None,
              arrays: Mapping[str, np.ndarray] | None = None) -> None:
    payload: dict[str, np.ndarray] = {
        "header": np.array(f"{FORMAT_HEADER} v{FORMAT_VERSION}"),
        "meta": np.array(json.dumps(dict(meta or {}), sort_keys=True)),
        "nets": np.array(json.dumps(sorted(nets))),
    }
    for name, net in nets.items():
        payload[f"{name}.sizes"] = np.array(net.sizes, dtype=np.int64)
        payload[f"{name}.activations"] = np.array(json.dumps(list(net.activations)))
        payload[f"{name}.params"] = net.params
    for name, arr in (arrays or {}).items():
        payload[f"array.{name}"] = np.asarray(arr)
    np.savez(path, **payload)


def load_nets(path: str | Path | io.IOBase) -> tuple[dict[str, DenseNet], dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        header = str(z["header"])
        if header != f"{FORMAT_HEADER} v{FORMAT_VERSION}":
            raise SchemaError(f"unsupported model file header {header!r}")
        meta = json.loads(str(z["meta"]))
        nets = {}
        for name in json.loads(str(z["nets"])):
            params = z[f"{name}.params"]
            net = DenseNet(
                z[f"{name}.sizes"].tolist(),
                json.loads(str(z[f"{name}.activations"])),
                dtype=params.dtype,
            )
            net.params[...] = params
            nets[name] = net
        arrays = {k[len("array."):]: z[k] for k in z.files if k.startswith("array.")}
    return nets, meta, arrays
