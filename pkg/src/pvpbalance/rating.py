"""Composition strength models trained from match outcomes.

``RatingModel`` is the Bradley-Terry rater: a network maps a composition to a
positive strength R(c) = exp(lambda(c)) and the win value of c1 over c2 is
R(c1) / (R(c1) + R(c2)).  Two variants exist: ``bt`` (lambda linear in the
features, i.e. a comp's log-strength is the sum of its elements') and ``nrt``
(two tanh hidden layers).  Both sides of a match go through the same network.

``WinValueModel`` and ``PairWinModel`` are the direct regressors used as
baselines: one scores a single comp, the other an ordered pair.

All models are fit by mean squared error on the win value with per-epoch
swap augmentation, Adam and a linearly decaying learning rate.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .data import Dataset, swap_arrays
from .errors import NonFiniteError
from .nn import AdamState, DenseNet, TrainConfig, adam_step, compact, load_nets, save_nets

RATING_VARIANTS = ("bt", "nrt")
HIDDEN = 128

# independent RNG streams per model family for a given seed
_STREAMS = {"bt": 11, "nrt": 12, "winvalue": 13, "pairwin": 14, "counter": 15}


def model_rng(seed: int, family: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), _STREAMS[family]])


def win_from_margin(margin: np.ndarray | float) -> np.ndarray | float:
    """Map a centred margin ``m`` to the win value ``0.5 + m``.

    Negative margins are evaluated as ``1 - (0.5 - m)`` so that for any
    exactly antisymmetric margin the two orientations of a pair add to
    exactly 1 in floating point.
    """
    m = np.asarray(margin, dtype=np.float64)
    out = np.where(m >= 0, 0.5 + m, 1.0 - (0.5 - m))
    return float(out) if out.ndim == 0 else out


def bt_margin(r1: np.ndarray | float, r2: np.ndarray | float) -> np.ndarray:
    """``R1 / (R1 + R2) - 0.5`` in an exactly antisymmetric form."""
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    return (r1 - r2) / (2.0 * (r1 + r2))


def bt_win(r1: np.ndarray | float, r2: np.ndarray | float) -> np.ndarray | float:
    """Bradley-Terry win value ``R1 / (R1 + R2)``; complements exactly under swapping."""
    return win_from_margin(bt_margin(r1, r2))


def _as_2d(comps: np.ndarray) -> np.ndarray:
    x = np.asarray(comps, dtype=float)
    return x[None, :] if x.ndim == 1 else x


@dataclass
class RatingModel:
    variant: str
    net: DenseNet

    def ratings(self, comps: np.ndarray) -> np.ndarray:
        """Strength R(c) > 0 for each row of ``comps``."""
        return self.net(_as_2d(comps))[:, 0].astype(np.float64)

    def __call__(self, comps: np.ndarray) -> np.ndarray:
        return self.ratings(comps)

    def save(self, path: str | Path) -> None:
        save_nets(path, {"rating": self.net}, {"kind": "rating", "variant": self.variant})

    @classmethod
    def load(cls, path: str | Path) -> RatingModel:
        nets, meta, _ = load_nets(path)
        if meta.get("kind") != "rating":
            raise ValueError(f"{path} does not hold a rating model")
        return cls(meta["variant"], nets["rating"])


def bt_predict(model: RatingModel, c1: np.ndarray, c2: np.ndarray) -> np.ndarray | float:
    """Bradley-Terry win value of ``c1`` over ``c2`` (rows broadcast)."""
    p = bt_win(model.ratings(c1), model.ratings(c2))
    return float(p[0]) if np.ndim(c1) == 1 and np.ndim(c2) == 1 else p


def make_rating_net(variant: str, dim: int, rng: np.random.Generator | None, dtype=np.float64) -> DenseNet:
    if variant == "nrt":
        return DenseNet([dim, HIDDEN, HIDDEN, 1], ["tanh", "tanh", "exp"], rng, dtype)
    if variant == "bt":
        return DenseNet([dim, 1], ["exp"], rng, dtype)
    raise ValueError(f"unknown rating variant {variant!r}; choose from {RATING_VARIANTS}")


def shuffled_epochs(data: Dataset, config: TrainConfig, rng: np.random.Generator):
    """Yield ``(epoch, a, b, w)``: one shuffled, swap-augmented pass over ``data`` per epoch."""
    n = len(data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        coins = rng.random(n) < 0.5
        yield (epoch, *swap_arrays(data.a[order], data.b[order], data.outcome[order], coins))


def fit_loop(
    data: Dataset,
    config: TrainConfig,
    rng: np.random.Generator,
    step: Callable[[np.ndarray, np.ndarray, np.ndarray, float], None],
) -> None:
    """Call ``step(a, b, w, lr)`` on every minibatch of every epoch."""
    bs = config.batch_size
    n_batches = -(-len(data) // bs)
    schedule = config.schedule
    for epoch, a, b, w in shuffled_epochs(data, config, rng):
        for i in range(n_batches):
            sl = slice(i * bs, (i + 1) * bs)
            step(a[sl], b[sl], w[sl], schedule.rate(epoch + i / n_batches))


def compiled_loop(data: Dataset, config: TrainConfig, rng: np.random.Generator,
                  run_epoch: Callable[[int, np.ndarray, np.ndarray, np.ndarray], int]) -> None:
    """Hand each epoch to a compiled kernel; same data order as :func:`fit_loop`."""
    for epoch, a, b, w in shuffled_epochs(data, config, rng):
        if run_epoch(epoch, a, b, w) != kernels.OK:
            raise NonFiniteError(f"non-finite gradient encountered in epoch {epoch}")


def _kernel_net_args(net: DenseNet, state: AdamState) -> tuple:
    return (net.params, net.grads, *kernels.adam_args(state))


def _sync_step(state: AdamState, counter: np.ndarray) -> None:
    state.step = int(counter[0])


def siamese_rating_grads(
    net: DenseNet, comps: np.ndarray, a: np.ndarray, b: np.ndarray, w: np.ndarray
) -> float:
    """Accumulate gradients of the batch MSE between ``w`` and R(a)/(R(a)+R(b)).

    The network runs once over the distinct comps of the batch; per-match
    output gradients are summed back onto those rows.
    """
    n = len(a)
    u, inv = compact(np.concatenate([a, b]), len(comps))
    r_u, cache = net.forward(comps[u])
    r = r_u[inv, 0].astype(np.float64)
    ra, rb = r[:n], r[n:]
    s = ra + rb
    err = ra / s - w
    dp = 2.0 * err / n
    s2 = s * s
    g = np.concatenate([dp * rb / s2, -dp * ra / s2])
    g_u = np.bincount(inv, weights=g, minlength=len(u))
    net.backward(cache, g_u[:, None])
    return float(np.mean(err * err))


def train_rating(
    variant: str,
    train: Dataset,
    seed: int = 0,
    epochs: int = 100,
    config: TrainConfig | None = None,
) -> RatingModel:
    config = config or TrainConfig(epochs=epochs)
    rng = model_rng(seed, variant)
    net = make_rating_net(variant, train.schema.dimension, rng, np.dtype(config.dtype))
    state = AdamState.for_params(net.params)
    comps = train.comps.astype(net.dtype)

    if config.backend == "numpy":
        def step(a, b, w, lr):
            siamese_rating_grads(net, comps, a, b, w)
            adam_step(net.params, net.grads, state, lr)

        fit_loop(train, config, rng, step)
    else:
        _run_compiled(net, state, train, config, rng, kernels.siamese_epoch, comps)
    return RatingModel(variant, net)


def _run_compiled(net: DenseNet, state: AdamState, train: Dataset, config: TrainConfig,
                  rng: np.random.Generator, kernel: Callable, comps: np.ndarray, *extra) -> None:
    params, grads, m, v, t = _kernel_net_args(net, state)
    layers, hyper = kernels.layer_table(net), kernels.hyper(state)

    def run_epoch(epoch, a, b, w):
        return kernel(params, grads, m, v, t, hyper, layers, comps, a, b, w, *extra,
                      config.batch_size, config.lr, epoch, config.epochs)

    compiled_loop(train, config, rng, run_epoch)
    _sync_step(state, t)


def _squash(y: np.ndarray) -> np.ndarray:
    # tanh head mapped to [0, 1]
    return 0.5 * (1.0 + y)


@dataclass
class WinValueModel:
    net: DenseNet

    def predict(self, comps: np.ndarray) -> np.ndarray:
        return _squash(self.net(_as_2d(comps))[:, 0].astype(np.float64))


@dataclass
class PairWinModel:
    net: DenseNet

    def predict(self, c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
        x = np.concatenate(np.broadcast_arrays(_as_2d(c1), _as_2d(c2)), axis=1)
        return _squash(self.net(x)[:, 0].astype(np.float64))


def _regressor_net(dim: int, rng: np.random.Generator, dtype) -> DenseNet:
    return DenseNet([dim, HIDDEN, HIDDEN, 1], ["tanh", "tanh", "tanh"], rng, dtype)


def _regress_grads(net: DenseNet, x_u: np.ndarray, inv: np.ndarray, w: np.ndarray) -> None:
    y_u, cache = net.forward(x_u)
    pred = _squash(y_u[inv, 0].astype(np.float64))
    g = (pred - w) / len(w)  # d/dy of mean (pred - w)^2 through the 0.5 * (1 + y) map
    g_u = np.bincount(inv, weights=g, minlength=len(x_u))
    net.backward(cache, g_u[:, None])


def train_winvalue(train: Dataset, seed: int = 0, epochs: int = 100,
                   config: TrainConfig | None = None) -> WinValueModel:
    config = config or TrainConfig(epochs=epochs)
    rng = model_rng(seed, "winvalue")
    net = _regressor_net(train.schema.dimension, rng, np.dtype(config.dtype))
    state = AdamState.for_params(net.params)
    comps = train.comps.astype(net.dtype)

    if config.backend == "numpy":
        def step(a, b, w, lr):
            u, inv = compact(a, len(comps))
            _regress_grads(net, comps[u], inv, w)
            adam_step(net.params, net.grads, state, lr)

        fit_loop(train, config, rng, step)
    else:
        _run_compiled(net, state, train, config, rng, kernels.regress_epoch, comps, False)
    return WinValueModel(net)


def train_pairwin(train: Dataset, seed: int = 0, epochs: int = 100,
                  config: TrainConfig | None = None) -> PairWinModel:
    config = config or TrainConfig(epochs=epochs)
    rng = model_rng(seed, "pairwin")
    net = _regressor_net(2 * train.schema.dimension, rng, np.dtype(config.dtype))
    state = AdamState.for_params(net.params)
    comps = train.comps.astype(net.dtype)
    n_comps = train.n_comps

    if config.backend == "numpy":
        def step(a, b, w, lr):
            u, inv = np.unique(a * n_comps + b, return_inverse=True)
            x_u = np.concatenate([comps[u // n_comps], comps[u % n_comps]], axis=1)
            _regress_grads(net, x_u, inv.reshape(-1), w)
            adam_step(net.params, net.grads, state, lr)

        fit_loop(train, config, rng, step)
    else:
        _run_compiled(net, state, train, config, rng, kernels.regress_epoch, comps, True)
    return PairWinModel(net)
