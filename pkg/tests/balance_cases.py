"""Hand-built counter tables and brute-force helpers shared by the balance tests."""

import numpy as np

from pvpbalance.balance import brute_force_domination, category_tops
from pvpbalance.rating import bt_margin, win_from_margin


def cycle_with_neutral() -> np.ndarray:
    """Rock, paper, scissors plus a fourth category that ties everything."""
    t = np.zeros((4, 4))
    for i in range(3):
        t[i, (i + 2) % 3] = 0.5  # rock beats scissors, paper beats rock, ...
        t[(i + 2) % 3, i] = -0.5
    return t


def six_cycle() -> np.ndarray:
    """Category i beats i+1 and i+2, ties i+3, loses to i+4 and i+5."""
    t = np.zeros((6, 6))
    for i in range(6):
        for step, val in ((1, 0.5), (2, 0.5), (4, -0.5), (5, -0.5)):
            t[i, (i + step) % 6] = val
    return t


def pair_win(ratings, table, cats):
    """Pairwise win value by the direct formula, one pair at a time."""
    def predict(i, j):
        return float(win_from_margin(bt_margin(ratings[i], ratings[j]) + table[cats[i], cats[j]]))
    return predict


def brute_force_over_tops(ratings, table, cats) -> int:
    tops = list(category_tops(np.asarray(ratings), np.asarray(cats)).values())
    r = np.asarray(ratings)[tops]
    k = np.asarray(cats)[tops]
    return brute_force_domination(pair_win(r, table, k), len(tops))


def random_antisymmetric(rng, m, scale=0.3) -> np.ndarray:
    x = rng.uniform(-scale, scale, size=(m, m))
    return (x - x.T) / 2.0
