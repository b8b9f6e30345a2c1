"""Non-neural baselines: averaged win-value tables, Elo and 2-D multidimensional Elo.

Average tables are fit once from the training matches.  Elo and mElo2 are
updated match by match over the same shuffled, swap-augmented 100-epoch
stream the networks see.  Queries for comps or pairs absent from training
return NaN, which the evaluator scores as a wrong prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import Dataset, swap_arrays
from .nn import minibatches

ELO_INIT = 1000.0
ELO_K = 16.0
MELO_C_RANGE = 10.0
MELO_KC = 1.0
MELO_ALPHA = math.log(10.0) / 400.0
TABULAR_METHODS = ("tab-winvalue", "tab-pairwin", "elo", "melo2")


@dataclass
class TabularWinValue:
    """Per-comp mean win value; both sides of every match contribute."""

    means: np.ndarray  # NaN where unseen
    counts: np.ndarray

    def predict(self, ids: np.ndarray) -> np.ndarray:
        return self.means[np.asarray(ids)]


@dataclass
class TabularPairWin:
    """Per-ordered-pair mean win value, stored sparsely under key ``a * n + b``."""

    n_comps: int
    keys: np.ndarray  # sorted
    means: np.ndarray
    counts: np.ndarray

    def predict(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        q = np.asarray(a, dtype=np.int64) * self.n_comps + np.asarray(b, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.keys, q), 0, len(self.keys) - 1)
        hit = self.keys[pos] == q
        return np.where(hit, self.means[pos], np.nan)


def fit_tabular_winvalue(train: Dataset) -> TabularWinValue:
    ids = np.concatenate([train.a, train.b])
    vals = np.concatenate([train.outcome, 1.0 - train.outcome])
    counts = np.bincount(ids, minlength=train.n_comps)
    sums = np.bincount(ids, weights=vals, minlength=train.n_comps)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / counts, np.nan)
    return TabularWinValue(means, counts)


def fit_tabular_pairwin(train: Dataset) -> TabularPairWin:
    n = train.n_comps
    a, b = train.a.astype(np.int64), train.b.astype(np.int64)
    keys = np.concatenate([a * n + b, b * n + a])
    vals = np.concatenate([train.outcome, 1.0 - train.outcome])
    uniq, inv = np.unique(keys, return_inverse=True)
    counts = np.bincount(inv, minlength=len(uniq))
    means = np.bincount(inv, weights=vals, minlength=len(uniq)) / counts
    return TabularPairWin(n, uniq, means, counts)


def tabular_fit(train: Dataset, kind: str = "pairwin") -> TabularWinValue | TabularPairWin:
    if kind == "winvalue":
        return fit_tabular_winvalue(train)
    if kind == "pairwin":
        return fit_tabular_pairwin(train)
    raise ValueError(f"unknown tabular kind {kind!r}")


# Elo -----------------------------------------------------------------------

def elo_expected(r_i: float, r_j: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_j - r_i) / 400.0))


@dataclass
class EloTable:
    ratings: np.ndarray
    k: float = ELO_K

    @classmethod
    def fresh(cls, n_comps: int, k: float = ELO_K) -> EloTable:
        return cls(np.full(n_comps, ELO_INIT), k)

    def predict(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        r = self.ratings
        return 1.0 / (1.0 + 10.0 ** ((r[np.asarray(b)] - r[np.asarray(a)]) / 400.0))


def elo_update(table: EloTable, i: int, j: int, w: float) -> None:
    r = table.ratings
    expected = elo_expected(r[i], r[j])
    delta = table.k * (w - expected)
    r[i] += delta
    r[j] -= delta


@njit(cache=True)
def _elo_run(r, a, b, w, k):  # pragma: no cover - compiled
    for t in range(a.shape[0]):
        i, j = a[t], b[t]
        expected = 1.0 / (1.0 + 10.0 ** ((r[j] - r[i]) / 400.0))
        delta = k * (w[t] - expected)
        r[i] += delta
        r[j] -= delta


# mElo2 ---------------------------------------------------------------------

def melo2_expected(r_i: float, c_i: np.ndarray, r_j: float, c_j: np.ndarray,
                   alpha: float = MELO_ALPHA) -> float:
    logit = alpha * (r_i - r_j) + c_i[0] * c_j[1] - c_i[1] * c_j[0]
    return 1.0 / (1.0 + math.exp(-logit))


@dataclass
class MElo2Table:
    ratings: np.ndarray
    vectors: np.ndarray  # (n, 2)
    k: float = ELO_K
    k_c: float = MELO_KC
    alpha: float = MELO_ALPHA

    @classmethod
    def fresh(cls, n_comps: int, rng: np.random.Generator, k: float = ELO_K,
              k_c: float = MELO_KC, alpha: float = MELO_ALPHA) -> MElo2Table:
        vectors = rng.uniform(-MELO_C_RANGE, MELO_C_RANGE, size=(n_comps, 2))
        return cls(np.full(n_comps, ELO_INIT), vectors, k, k_c, alpha)

    def predict(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a, b = np.asarray(a), np.asarray(b)
        ci, cj = self.vectors[a], self.vectors[b]
        logit = self.alpha * (self.ratings[a] - self.ratings[b]) + ci[..., 0] * cj[..., 1] - ci[..., 1] * cj[..., 0]
        return 1.0 / (1.0 + np.exp(-logit))


def melo2_update(table: MElo2Table, i: int, j: int, w: float) -> None:
    r, c = table.ratings, table.vectors
    ci, cj = c[i].copy(), c[j].copy()
    delta = w - melo2_expected(r[i], ci, r[j], cj, table.alpha)
    r[i] += table.k * delta
    r[j] -= table.k * delta
    kd = table.k_c * delta
    c[i, 0] += kd * cj[1]
    c[i, 1] -= kd * cj[0]
    c[j, 0] -= kd * ci[1]
    c[j, 1] += kd * ci[0]


@njit(cache=True)
def _melo2_run(r, c, a, b, w, k, k_c, alpha):  # pragma: no cover - compiled
    for t in range(a.shape[0]):
        i, j = a[t], b[t]
        ci0, ci1, cj0, cj1 = c[i, 0], c[i, 1], c[j, 0], c[j, 1]
        logit = alpha * (r[i] - r[j]) + ci0 * cj1 - ci1 * cj0
        delta = w[t] - 1.0 / (1.0 + math.exp(-logit))
        r[i] += k * delta
        r[j] -= k * delta
        kd = k_c * delta
        # increments, not assignments: a self-match must cancel to no change
        c[i, 0] += kd * cj1
        c[i, 1] -= kd * cj0
        c[j, 0] -= kd * ci1
        c[j, 1] += kd * ci0


def _stream(train: Dataset, epochs: int, rng: np.random.Generator):
    """The shuffled, swap-augmented epoch stream shared with neural training."""
    for _ in range(epochs):
        idx, coins = next(minibatches(len(train), len(train), rng))
        yield swap_arrays(train.a[idx], train.b[idx], train.outcome[idx], coins)


def train_elo(train: Dataset, seed: int = 0, epochs: int = 100, k: float = ELO_K) -> EloTable:
    rng = np.random.default_rng([int(seed), 21])
    table = EloTable.fresh(train.n_comps, k)
    for a, b, w in _stream(train, epochs, rng):
        _elo_run(table.ratings, a.astype(np.int64), b.astype(np.int64), w.astype(np.float64), float(k))
    return table


def train_melo2(train: Dataset, seed: int = 0, epochs: int = 100, k: float = ELO_K,
                k_c: float = MELO_KC, alpha: float = MELO_ALPHA) -> MElo2Table:
    rng = np.random.default_rng([int(seed), 22])
    table = MElo2Table.fresh(train.n_comps, rng, k, k_c, alpha)
    for a, b, w in _stream(train, epochs, rng):
        _melo2_run(table.ratings, table.vectors, a.astype(np.int64), b.astype(np.int64),
                   w.astype(np.float64), float(k), float(k_c), float(alpha))
    return table
