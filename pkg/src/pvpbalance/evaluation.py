"""Strength-relation accuracy under k-fold cross-validation.

Every method is reduced to a label per match: stronger, same or weaker for
the first comp.  Ground truth comes from the average win value of each pair
over the whole dataset, with both orientations of a pair pooled.  Fold ``i``
is held out for the model trained with seed ``i``; accuracies are counted per
match occurrence and averaged over folds.
"""

from __future__ import annotations

import enum
import time
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .counter import BETA_M, BETA_N, materialize, nct_margin, train_counter, utilized_m
from .data import Dataset, FoldSplit, kfold_split
from .errors import PvpBalanceError
from .nn import TrainConfig
from .rating import bt_win, train_pairwin, train_rating, train_winvalue, win_from_margin
from .tabular import fit_tabular_pairwin, fit_tabular_winvalue, train_elo, train_melo2

SAME_BAND = (0.499, 0.501)
DIFFERENCE_BAND = 0.001
NEURAL_METHODS = ("winvalue", "pairwin", "bt", "nrt", "nct")
TABULAR_METHODS = ("tab-winvalue", "tab-pairwin", "elo", "melo2")
METHODS = NEURAL_METHODS + TABULAR_METHODS


class StrengthRelationLabel(enum.IntEnum):
    WEAKER = -1
    SAME = 0
    STRONGER = 1
    UNDEFINED = 2  # prediction unavailable; never equals a ground-truth label


def labels_from_win(win: np.ndarray) -> np.ndarray:
    """Threshold win values at the same-band edges; NaN becomes UNDEFINED."""
    x = np.asarray(win, dtype=np.float64)
    lo, hi = SAME_BAND
    out = np.where(x > hi, 1, np.where(x < lo, -1, 0))
    return np.where(np.isnan(x), int(StrengthRelationLabel.UNDEFINED), out).astype(np.int8)


def labels_from_difference(diff: np.ndarray, band: float = DIFFERENCE_BAND) -> np.ndarray:
    """Labels from a per-comp score difference with a symmetric band."""
    d = np.asarray(diff, dtype=np.float64)
    out = np.where(d > band, 1, np.where(d < -band, -1, 0))
    return np.where(np.isnan(d), int(StrengthRelationLabel.UNDEFINED), out).astype(np.int8)


def classify(win: float) -> StrengthRelationLabel:
    return StrengthRelationLabel(int(labels_from_win(np.array([win]))[0]))


@dataclass(frozen=True)
class GroundTruth:
    """Pooled per-pair averages under sparse keys ``a * n + b``."""

    n_comps: int
    keys: np.ndarray
    means: np.ndarray

    def win(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        q = np.asarray(a, dtype=np.int64) * self.n_comps + np.asarray(b, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.keys, q), 0, len(self.keys) - 1)
        return np.where(self.keys[pos] == q, self.means[pos], np.nan)

    def labels(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return labels_from_win(self.win(a, b))


def ground_truth_labels(data: Dataset) -> GroundTruth:
    n = data.n_comps
    a, b = data.a.astype(np.int64), data.b.astype(np.int64)
    keys = np.concatenate([a * n + b, b * n + a])
    vals = np.concatenate([data.outcome, 1.0 - data.outcome])
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.bincount(inv, weights=vals, minlength=len(uniq))
    counts = np.bincount(inv, minlength=len(uniq))
    return GroundTruth(n, uniq, sums / counts)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    size: int | None = None  # counter table size, NCT only
    beta_n: float = BETA_N
    beta_m: float = BETA_M

    def __post_init__(self) -> None:
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; choose from {METHODS}")
        if self.name == "nct" and not self.size:
            raise ValueError("nct needs a table size")

    @property
    def key(self) -> str:
        if self.name != "nct":
            return self.name
        label = f"nct-M{self.size}"
        if (self.beta_n, self.beta_m) != (BETA_N, BETA_M):
            label += f"-bn{self.beta_n:g}-bm{self.beta_m:g}"
        return label


@dataclass
class ExperimentConfig:
    folds: int = 5
    epochs: int = 100
    batch_size: int = 128
    lr: float = 2.5e-4
    dtype: str = "float32"
    split_seed: int = 0
    workers: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr, self.dtype)


@dataclass
class AccuracyReport:
    method: str
    game: str
    per_seed_train: list[float]
    per_seed_test: list[float]
    utilized: list[int] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def train(self) -> float:
        return float(np.mean(self.per_seed_train))

    @property
    def test(self) -> float:
        return float(np.mean(self.per_seed_test))

    @property
    def mean_utilized(self) -> float | None:
        return float(np.mean(self.utilized)) if self.utilized else None


class FoldError(PvpBalanceError):
    pass


def _accuracy(pred_labels: np.ndarray, truth: np.ndarray) -> float:
    return 100.0 * float(np.mean(pred_labels == truth))


def _fold_predictors(split: FoldSplit, specs: Sequence[MethodSpec], cfg: ExperimentConfig):
    """Train every requested method on one fold; yield ``(spec, label_fn, info)``."""
    train, seed = split.train, split.fold_index
    tc = cfg.train_config()
    comps = train.comps
    rating_cache: dict = {}

    def rating(variant):
        if variant not in rating_cache:
            rating_cache[variant] = train_rating(variant, train, seed=seed, config=tc)
        return rating_cache[variant]

    for spec in specs:
        info: dict = {}
        name = spec.name
        if name in ("bt", "nrt"):
            r = rating(name).ratings(comps)
            fn = lambda a, b, r=r: labels_from_win(bt_win(r[a], r[b]))
        elif name == "nct":
            base = rating("nrt")
            model = train_counter(base, train, spec.size, seed=seed, beta_n=spec.beta_n,
                                  beta_m=spec.beta_m, config=tc)
            r, table = base.ratings(comps), materialize(model).table
            k = model.categorize(comps)
            info["utilized"] = utilized_m(model, comps)
            fn = lambda a, b, r=r, t=table, k=k: labels_from_win(
                win_from_margin(nct_margin(r[a], r[b], t, k[a], k[b])))
        elif name == "winvalue":
            v = train_winvalue(train, seed=seed, config=tc).predict(comps)
            fn = lambda a, b, v=v: labels_from_difference(v[a] - v[b])
        elif name == "pairwin":
            model = train_pairwin(train, seed=seed, config=tc)
            fn = lambda a, b, m=model: labels_from_win(m.predict(comps[a], comps[b]))
        elif name == "tab-winvalue":
            v = fit_tabular_winvalue(train).means
            fn = lambda a, b, v=v: labels_from_difference(v[a] - v[b])
        elif name == "tab-pairwin":
            fn = lambda a, b, m=fit_tabular_pairwin(train): labels_from_win(m.predict(a, b))
        elif name == "elo":
            fn = lambda a, b, m=train_elo(train, seed, cfg.epochs): labels_from_win(m.predict(a, b))
        else:
            fn = lambda a, b, m=train_melo2(train, seed, cfg.epochs): labels_from_win(m.predict(a, b))
        yield spec, fn, info


def evaluate_fold(split: FoldSplit, truth: GroundTruth, specs: Sequence[MethodSpec],
                  cfg: ExperimentConfig) -> dict[str, tuple[float, float, dict]]:
    out = {}
    t_train = truth.labels(split.train.a, split.train.b)
    t_test = truth.labels(split.test.a, split.test.b)
    try:
        start = time.perf_counter()
        for spec, fn, info in _fold_predictors(split, specs, cfg):
            tr = _accuracy(fn(split.train.a, split.train.b), t_train)
            te = _accuracy(fn(split.test.a, split.test.b), t_test)
            info["seconds"] = time.perf_counter() - start
            start = time.perf_counter()
            out[spec.key] = (tr, te, info)
    except Exception as exc:
        raise FoldError(f"seed/fold {split.fold_index}: {type(exc).__name__}: {exc}") from exc
    return out


def run_grid(data: Dataset, specs: Sequence[MethodSpec], config: ExperimentConfig | None = None,
             game: str | None = None) -> dict[str, AccuracyReport]:
    """Run every method on every fold; the NRT of a fold is shared by all its NCT sizes."""
    cfg = config or ExperimentConfig()
    truth = ground_truth_labels(data)
    splits = kfold_split(data, cfg.folds, cfg.split_seed)
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(evaluate_fold, splits, [truth] * len(splits),
                                    [list(specs)] * len(splits), [cfg] * len(splits)))
    else:
        results = [evaluate_fold(s, truth, specs, cfg) for s in splits]
    game = game or data.source
    reports = {}
    for spec in specs:
        rows = [res[spec.key] for res in results]  # already in fold order
        reports[spec.key] = AccuracyReport(
            method=spec.key,
            game=game,
            per_seed_train=[r[0] for r in rows],
            per_seed_test=[r[1] for r in rows],
            utilized=[r[2]["utilized"] for r in rows if "utilized" in r[2]],
            seconds=float(sum(r[2]["seconds"] for r in rows)),
        )
    return reports


def run_experiment(data: Dataset, method: str | MethodSpec, config: ExperimentConfig | None = None,
                   game: str | None = None) -> AccuracyReport:
    spec = method if isinstance(method, MethodSpec) else MethodSpec(method)
    return run_grid(data, [spec], config, game)[spec.key]
