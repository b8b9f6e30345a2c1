"""Top-D diversity and Top-B balance, plus brute-force oracles for both.

``top_d`` counts comps whose Bradley-Terry win value against the top-rated
comp is within a gap ``G`` of even.  ``top_b`` keeps the highest-rated comp
of every used counter category and counts those not dominated by another
category top, where ``c1`` dominates ``c2`` when it wins strictly more
against every category top.  The brute-force functions apply the same
definitions over all pairs through an arbitrary pairwise predictor and exist
to validate the fast paths.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .counter import MaterializedCounterTable, nct_margin
from .errors import EmptyInputError, SchemaMismatchError
from .rating import RatingModel, bt_win, win_from_margin

PairPredictor = Callable[[int, int], float]


@dataclass(frozen=True)
class DiversityResult:
    gap: float
    count: int
    members: tuple[int, ...]
    top_index: int
    top_rating: float


@dataclass(frozen=True)
class BalanceResult:
    size: int
    utilized: int
    count: int
    category_tops: dict[int, int] = field(default_factory=dict)
    dominated: tuple[int, ...] = ()


def _check_comps(comps, expected_dim: int | None) -> np.ndarray | None:
    if comps is None:
        return None
    x = np.asarray(comps, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise EmptyInputError("no compositions given")
    if expected_dim is not None and x.shape[1] != expected_dim:
        raise SchemaMismatchError(
            f"compositions have dimension {x.shape[1]}, model expects {expected_dim}"
        )
    return x


def resolve_ratings(rating: RatingModel | Sequence[float] | np.ndarray, comps=None) -> np.ndarray:
    """Ratings as a float array: evaluated from a model, or taken as given."""
    if isinstance(rating, RatingModel):
        x = _check_comps(comps, rating.net.input_dim)
        if x is None:
            raise EmptyInputError("a rating model needs compositions to evaluate")
        return rating.ratings(x)
    r = np.asarray(rating, dtype=np.float64).reshape(-1)
    if len(r) == 0:
        raise EmptyInputError("no ratings given")
    if comps is not None and len(comps) != len(r):
        raise SchemaMismatchError("one rating per composition required")
    return r


def top_d(rating: RatingModel | np.ndarray, comps=None, gap: float = 0.0) -> DiversityResult:
    """Count comps with ``R(c) / (R(c) + R(top)) + gap >= 0.5``; one pass after the argmax."""
    if not 0.0 <= gap <= 1.0:
        raise ValueError("gap must lie in [0, 1]")
    r = resolve_ratings(rating, comps)
    top = int(np.argmax(r))  # first maximum wins ties
    ok = bt_win(r, np.full_like(r, r[top])) + gap >= 0.5
    members = tuple(int(i) for i in np.flatnonzero(ok))
    return DiversityResult(float(gap), len(members), members, top, float(r[top]))


def category_tops(ratings: np.ndarray, categories: np.ndarray) -> dict[int, int]:
    """Highest-rated comp of each used category, ties to the earliest comp."""
    order = np.lexsort((np.arange(len(ratings)), -ratings, categories))
    cats = categories[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = cats[1:] != cats[:-1]
    return {int(c): int(i) for c, i in zip(cats[first], order[first])}


def top_b(
    rating: RatingModel | np.ndarray,
    table: MaterializedCounterTable | np.ndarray,
    comps=None,
    categories: np.ndarray | None = None,
) -> BalanceResult:
    """Number of non-dominated category tops under rating plus counter table."""
    tab = table if isinstance(table, MaterializedCounterTable) else MaterializedCounterTable(np.asarray(table, float))
    r = resolve_ratings(rating, comps)
    if categories is None:
        if comps is None:
            raise EmptyInputError("need compositions or explicit categories")
        x = _check_comps(comps, None)
        try:
            cats = tab.categories(x)
        except ValueError as exc:
            raise SchemaMismatchError(str(exc)) from exc
    else:
        cats = np.asarray(categories, dtype=np.int64).reshape(-1)
    if len(cats) != len(r):
        raise SchemaMismatchError("one category per composition required")
    if len(cats) and (cats.min() < 0 or cats.max() >= tab.size):
        raise SchemaMismatchError(f"category ids must lie in [0, {tab.size})")

    tops = category_tops(r, cats)
    idx = np.array(list(tops.values()))
    rt, ct = r[idx], cats[idx]
    # win[p, q]: win value of top p against top q
    win = win_from_margin(nct_margin(rt[:, None], rt[None, :], tab.table, ct[:, None], ct[None, :]))
    win = np.atleast_2d(win)
    beats_everywhere = np.all(win[:, None, :] > win[None, :, :], axis=2)  # [p', p]
    np.fill_diagonal(beats_everywhere, False)
    dominated = beats_everywhere.any(axis=0)
    return BalanceResult(
        size=tab.size,
        utilized=len(tops),
        count=int((~dominated).sum()),
        category_tops=tops,
        dominated=tuple(int(c) for c in ct[dominated]),
    )


def brute_force_top_d(predict: PairPredictor, n: int, gap: float) -> int:
    """Top-D by pairwise scan: find a comp no other beats, then count by the gap rule."""
    if n == 0:
        raise EmptyInputError("no compositions given")
    top = next(i for i in range(n) if all(predict(i, j) >= 0.5 for j in range(n)))
    return sum(1 for c in range(n) if predict(c, top) + gap >= 0.5)


def brute_force_domination(predict: PairPredictor, n: int) -> int:
    """Count comps not dominated by any other, checking every pair against every comp."""
    if n == 0:
        raise EmptyInputError("no compositions given")
    survivors = 0
    for c in range(n):
        dominated = any(
            other != c and all(predict(other, x) > predict(c, x) for x in range(n))
            for other in range(n)
        )
        survivors += not dominated
    return survivors
