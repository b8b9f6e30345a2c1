"""Neural counter table: discrete comp categories and their pairwise residuals.

A counter model corrects a frozen Bradley-Terry rater for intransitive
(counter) relations.  Each composition is encoded to a latent ``z_e`` and
snapped to its nearest codebook vector ``z_q = e_k``; the index ``k`` is the
composition's counter category.  A shared decoder reads both orderings of the
quantized pair and the residual win value is half the difference of the two
readings, so it is antisymmetric by construction.  Because predictions only
depend on the pair of categories, the whole model materializes into an
``M x M`` table.

Training targets the residual ``W - R(a) / (R(a) + R(b))`` and wires the
gradients as follows:

* decoder: residual MSE only;
* encoder: the residual gradient arriving at ``z_q`` copied straight through
  to ``z_e``, plus ``beta_n`` times the pull of ``z_e`` toward ``z_q``;
* codebook: the pull of each selected ``e_k`` toward its ``z_e``, plus
  ``beta_m`` times the pull of the codebook mean toward ``z_e`` (the VQ mean
  loss, which drags unselected entries toward the data so they get chosen).
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DimensionError
from .nn import AdamState, DenseNet, TrainConfig, adam_step, compact, load_nets, save_nets, straight_through
from . import kernels
from .rating import (
    HIDDEN,
    RatingModel,
    _as_2d,
    bt_margin,
    bt_win,
    compiled_loop,
    fit_loop,
    model_rng,
    win_from_margin,
)

EMBED_DIM = 8
DECODER_HIDDEN = 64
CODEBOOK_INIT = 0.1
BETA_N = 0.01
BETA_M = 0.25


def quantize(codebook: np.ndarray, z_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codebook entry by squared Euclidean distance; ties go to the lowest index."""
    cb = np.asarray(codebook)
    z = np.asarray(z_e)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != cb.shape[1]:
        raise DimensionError(f"latent dimension {z.shape[1]} != codebook dimension {cb.shape[1]}")
    diff = z[:, None, :] - cb[None, :, :]
    k = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    if single:
        return int(k[0]), cb[k[0]]
    return k, cb[k]


@dataclass
class CounterModel:
    encoder: DenseNet
    codebook: np.ndarray
    decoder: DenseNet
    beta_n: float = BETA_N
    beta_m: float = BETA_M

    @property
    def size(self) -> int:
        return len(self.codebook)

    def encode(self, comps: np.ndarray) -> np.ndarray:
        return self.encoder(_as_2d(comps))

    def categorize(self, comps: np.ndarray) -> np.ndarray:
        return quantize(self.codebook, self.encode(comps))[0]

    def materialize(self) -> MaterializedCounterTable:
        return materialize(self)

    def save(self, path: str | Path) -> None:
        save_nets(
            path,
            {"encoder": self.encoder, "decoder": self.decoder},
            {"kind": "counter", "beta_n": self.beta_n, "beta_m": self.beta_m},
            {"codebook": self.codebook},
        )

    @classmethod
    def load(cls, path: str | Path) -> CounterModel:
        nets, meta, arrays = load_nets(path)
        if meta.get("kind") != "counter":
            raise ValueError(f"{path} does not hold a counter model")
        return cls(nets["encoder"], arrays["codebook"], nets["decoder"], meta["beta_n"], meta["beta_m"])


def make_counter_model(dim: int, size: int, rng: np.random.Generator, dtype=np.float64,
                       beta_n: float = BETA_N, beta_m: float = BETA_M) -> CounterModel:
    encoder = DenseNet([dim, HIDDEN, HIDDEN, EMBED_DIM], ["tanh", "tanh", "identity"], rng, dtype)
    codebook = rng.uniform(-CODEBOOK_INIT, CODEBOOK_INIT, size=(size, EMBED_DIM)).astype(dtype)
    # linear head: its bias cancels in the halved difference, while a tanh head
    # drifts into saturation where both orderings read the same value
    decoder = DenseNet([2 * EMBED_DIM, DECODER_HIDDEN, 1], ["tanh", "identity"], rng, dtype)
    return CounterModel(encoder, codebook, decoder, beta_n, beta_m)


def residual_decode(model: CounterModel, z_q_a: np.ndarray, z_q_b: np.ndarray) -> np.ndarray | float:
    """``(Cd([a, b]) - Cd([b, a])) / 2`` for rows of quantized codes."""
    za, zb = np.broadcast_arrays(np.atleast_2d(z_q_a), np.atleast_2d(z_q_b))
    n = len(za)
    # BLAS results depend on row position, so each pair is decoded in a canonical
    # (lexicographically smaller first) orientation; this keeps antisymmetry exact
    differs = za != zb
    first = np.argmax(differs, axis=1)
    rows = np.arange(n)
    swap = differs.any(axis=1) & (za[rows, first] > zb[rows, first])
    lo, hi = np.where(swap[:, None], zb, za), np.where(swap[:, None], za, zb)
    x = model.decoder(np.concatenate([np.hstack([lo, hi]), np.hstack([hi, lo])]))[:, 0]
    out = (x[:n].astype(np.float64) - x[n:].astype(np.float64)) / 2.0
    out = np.where(swap, -out, out)
    out[~differs.any(axis=1)] = 0.0
    return float(out[0]) if np.ndim(z_q_a) == 1 and np.ndim(z_q_b) == 1 else out


def residual_target(outcome: np.ndarray | float, rating: RatingModel,
                    c_a: np.ndarray, c_b: np.ndarray) -> np.ndarray | float:
    """``W - R(a) / (R(a) + R(b))`` under a frozen rater."""
    res = np.asarray(outcome, dtype=np.float64) - bt_win(rating.ratings(c_a), rating.ratings(c_b))
    return float(res.reshape(-1)[0]) if np.ndim(c_a) == 1 and np.ndim(c_b) == 1 else res


@dataclass
class MaterializedCounterTable:
    """``table[k, l]`` is the residual win value of category ``k`` against ``l``."""

    table: np.ndarray
    categorize: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.table)

    def categories(self, comps: np.ndarray) -> np.ndarray:
        if self.categorize is None:
            raise ValueError("this table has no category assignment; pass categories explicitly")
        return np.asarray(self.categorize(comps))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> MaterializedCounterTable:
        t = np.asarray(matrix, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DimensionError("counter table must be square")
        if not np.array_equal(t, -t.T):
            raise ValueError("counter table must be antisymmetric")
        return cls(t)


def materialize(model: CounterModel) -> MaterializedCounterTable:
    m = model.size
    cb = model.codebook
    k, l = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    x = model.decoder(np.hstack([cb[k.ravel()], cb[l.ravel()]]))[:, 0].astype(np.float64)
    x = x.reshape(m, m)
    return MaterializedCounterTable((x - x.T) / 2.0, model.categorize)


def nct_margin(ratings_a: np.ndarray, ratings_b: np.ndarray, table: np.ndarray,
               cat_a: np.ndarray, cat_b: np.ndarray) -> np.ndarray:
    return bt_margin(ratings_a, ratings_b) + np.asarray(table)[cat_a, cat_b]


def nct_predict(rating: RatingModel, table: MaterializedCounterTable, c1: np.ndarray, c2: np.ndarray,
                clamp: bool = False) -> np.ndarray | float:
    """BT win value plus the counter-table residual of the two comps' categories.

    Unclamped by default; ``clamp=True`` limits the result to [0, 1] for reporting.
    """
    m = nct_margin(rating.ratings(c1), rating.ratings(c2), table.table,
                   table.categories(c1), table.categories(c2))
    out = win_from_margin(m)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    if np.ndim(c1) == 1 and np.ndim(c2) == 1:
        return float(np.asarray(out).reshape(-1)[0])
    return out


def utilized_m(model: CounterModel, comps: np.ndarray) -> int:
    """Number of distinct codebook entries selected over ``comps``."""
    return int(len(np.unique(model.categorize(comps))))


class CounterTrainer:
    """Holds a counter model and its optimizer states.

    :meth:`gradients` and :meth:`step` are the numpy reference for one batch;
    :meth:`compiled_epoch` runs whole epochs through the compiled kernel.
    """

    def __init__(self, model: CounterModel, comps: np.ndarray, strengths: np.ndarray) -> None:
        self.model = model
        self.comps = np.asarray(comps, dtype=model.encoder.dtype)
        self.strengths = np.asarray(strengths, dtype=np.float64)
        self.enc_state = AdamState.for_params(model.encoder.params)
        self.dec_state = AdamState.for_params(model.decoder.params)
        self.codebook_grad = np.zeros_like(model.codebook)
        self.cb_state = AdamState.for_params(model.codebook)

    def gradients(self, a: np.ndarray, b: np.ndarray, w: np.ndarray) -> dict[str, float]:
        """Accumulate all gradients for one batch; returns the loss terms."""
        model = self.model
        enc, dec, cb = model.encoder, model.decoder, model.codebook
        n, d, size = len(a), cb.shape[1], len(cb)
        r = self.strengths
        target = w - bt_win(r[a], r[b])

        u, inv = compact(np.concatenate([a, b]), len(self.comps))
        n_u = len(u)
        z_e, enc_cache = enc.forward(self.comps[u])
        k, z_q = quantize(cb, z_e)

        # the decoder only sees category pairs: run it once per distinct pair
        k_occ = k[inv]
        pair_ids, pinv = compact(k_occ[:n] * size + k_occ[n:], size * size)
        n_pairs = len(pair_ids)
        ea, eb = cb[pair_ids // size], cb[pair_ids % size]
        x, dec_cache = dec.forward(np.vstack([np.hstack([ea, eb]), np.hstack([eb, ea])]))
        x = x[:, 0].astype(np.float64)
        pred = ((x[:n_pairs] - x[n_pairs:]) / 2.0)[pinv]
        err = pred - target
        dx1 = np.bincount(pinv, weights=err / n, minlength=n_pairs)  # d loss / d x1 per pair
        dec.backward(dec_cache, np.concatenate([dx1, -dx1])[:, None])

        # d pred / d z_q for either side of each pair, weighted per (comp, pair) cell
        jac = dec.backward(dec_cache, np.ones((2 * n_pairs, 1), dec.dtype), accumulate=False)
        jac_a = 0.5 * (jac[:n_pairs, :d] - jac[n_pairs:, d:])
        jac_b = 0.5 * (jac[:n_pairs, d:] - jac[n_pairs:, :d])
        dpred = 2.0 * err / n
        cells = n_u * n_pairs
        w_a = np.bincount(inv[:n] * n_pairs + pinv, weights=dpred, minlength=cells).reshape(n_u, n_pairs)
        w_b = np.bincount(inv[n:] * n_pairs + pinv, weights=dpred, minlength=cells).reshape(n_u, n_pairs)
        g_zq = (w_a.astype(z_e.dtype) @ jac_a + w_b.astype(z_e.dtype) @ jac_b)

        counts = np.bincount(inv, minlength=n_u).astype(z_e.dtype)[:, None]
        pull = counts * (z_e - z_q) / (n * d)  # d L_vq / d z_e summed per distinct comp
        enc.backward(enc_cache, straight_through(g_zq) + model.beta_n * pull)

        g_cb = self.codebook_grad
        g_cb -= (k[:, None] == np.arange(size)).T.astype(pull.dtype) @ pull
        if model.beta_m:
            e_mean = cb.mean(axis=0)
            g_mean = -(counts * (z_e - e_mean)).sum(axis=0) / (n * d)
            g_cb += (model.beta_m / size) * g_mean

        sq = (z_e - z_q) ** 2
        return {
            "res": float(np.mean(err * err)),
            "vq": float((counts[:, 0] * sq.mean(axis=1)).sum() / (2 * n)),
        }

    def compiled_epoch(self, config: TrainConfig) -> Callable[[int, np.ndarray, np.ndarray, np.ndarray], int]:
        """A per-epoch callable running :func:`kernels.counter_epoch` on this trainer's state."""
        model = self.model
        self._counters = [kernels.adam_args(s)[2] for s in (self.enc_state, self.dec_state, self.cb_state)]
        enc_t, dec_t, cb_t = self._counters
        enc_layers, dec_layers = kernels.layer_table(model.encoder), kernels.layer_table(model.decoder)
        hyper = kernels.hyper(self.enc_state)

        def run_epoch(epoch, a, b, w):
            return kernels.counter_epoch(
                model.encoder.params, model.encoder.grads, self.enc_state.m, self.enc_state.v, enc_t, enc_layers,
                model.decoder.params, model.decoder.grads, self.dec_state.m, self.dec_state.v, dec_t, dec_layers,
                model.codebook, self.codebook_grad, self.cb_state.m, self.cb_state.v, cb_t,
                hyper, self.comps, self.strengths, a, b, w, model.beta_n, model.beta_m,
                config.batch_size, config.lr, epoch, config.epochs,
            )

        return run_epoch

    def sync_steps(self) -> None:
        for state, counter in zip((self.enc_state, self.dec_state, self.cb_state), self._counters):
            state.step = int(counter[0])

    def step(self, a: np.ndarray, b: np.ndarray, w: np.ndarray, lr: float) -> dict[str, float]:
        losses = self.gradients(a, b, w)
        model = self.model
        adam_step(model.encoder.params, model.encoder.grads, self.enc_state, lr)
        adam_step(model.decoder.params, model.decoder.grads, self.dec_state, lr)
        adam_step(model.codebook, self.codebook_grad, self.cb_state, lr)
        return losses


def train_counter(
    rating: RatingModel,
    train: Dataset,
    size: int,
    seed: int = 0,
    beta_n: float = BETA_N,
    beta_m: float = BETA_M,
    epochs: int = 100,
    config: TrainConfig | None = None,
) -> CounterModel:
    """Second training stage: fit an ``size``-entry counter model against a frozen rater."""
    if size < 1:
        raise ValueError("counter table size must be positive")
    config = config or TrainConfig(epochs=epochs)
    rng = model_rng(seed, "counter")
    model = make_counter_model(train.schema.dimension, size, rng, np.dtype(config.dtype), beta_n, beta_m)
    trainer = CounterTrainer(model, train.comps, rating.ratings(train.comps))
    if config.backend == "numpy":
        fit_loop(train, config, rng, trainer.step)
    else:
        compiled_loop(train, config, rng, trainer.compiled_epoch(config))
        trainer.sync_steps()
    return model
