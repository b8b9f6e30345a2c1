"""Exit criteria for the package, one test and one verdict line per criterion.

The full-protocol grids (100k matches, 100 epochs, 5 folds) are computed once
per session and shared.  Deselect them with ``-m "not slow"``.
"""

import time
from functools import cache

import numpy as np
import pytest

from balance_cases import brute_force_over_tops, cycle_with_neutral, six_cycle
from oracles import (
    codebook_fd_error,
    decoder_fd_error,
    encoder_fd_error,
    rating_fd_error,
    regressor_fd_error,
)
from pvpbalance.balance import brute_force_domination, brute_force_top_d, top_b, top_d
from pvpbalance.counter import materialize, nct_predict, residual_decode, train_counter
from pvpbalance.data import Dataset, load_csv, save_csv, swap_arrays, swap_augment
from pvpbalance.evaluation import ExperimentConfig, MethodSpec, run_grid
from pvpbalance.games import get_game
from pvpbalance.nn import TrainConfig
from pvpbalance.rating import bt_predict, train_rating
from pvpbalance.tabular import EloTable, elo_expected, elo_update

FULL = 100_000
SMOKE = 20_000
SIZES = (3, 9, 27, 81)
GRID_METHODS = ("winvalue", "pairwin", "bt", "nrt", "tab-winvalue", "tab-pairwin", "elo", "melo2")
# (beta_n, beta_m) at M=27 besides the default (0.01, 0.25), which the main grid covers
ABLATION = ((0.125, 0.25), (0.25, 0.25), (0.01, 0.0), (0.01, 0.125), (0.01, 0.5), (0.01, 1.0))
ABLATION_SIZE = 27
# a smoke-profile pair counts as ordered only when the full run separates it by more than this
ORDER_MARGIN = 1.0


def within(x, centre, tol):
    return abs(x - centre) <= tol


def grid_specs(sizes=SIZES, extra=()):
    return [MethodSpec(m) for m in GRID_METHODS] + [MethodSpec("nct", size=m) for m in sizes] + list(extra)


@cache
def grid(game, n, with_nct=True, with_ablation=False):
    extra = [MethodSpec("nct", size=ABLATION_SIZE, beta_n=bn, beta_m=bm) for bn, bm in ABLATION] if with_ablation else []
    specs = grid_specs(SIZES if with_nct else (), extra)
    data = get_game(game).generate(n, seed=0)
    start = time.perf_counter()
    reports = run_grid(data, specs, ExperimentConfig(), game)
    return reports, time.perf_counter() - start


def grid_seconds(reports):
    return sum(reports[s.key].seconds for s in grid_specs())


def fmt(reports, key):
    r = reports[key]
    return f"{key} {r.train:.1f}/{r.test:.1f}"


# criteria 1-5: full-protocol reproductions --------------------------------

@pytest.mark.slow
def test_c1_rps_exact(verdict):
    reports, _ = grid("rps", FULL)
    nct_ok = all(reports[f"nct-M{m}"].train == 100.0 and reports[f"nct-M{m}"].test == 100.0 for m in SIZES)
    base_ok = all(within(reports[k].train, 51.3, 3) and within(reports[k].test, 51.1, 3)
                  for k in ("winvalue", "bt", "nrt"))
    # the timed set is the criterion's own methods; the session grid holds more
    seconds = sum(reports[k].seconds for k in ("winvalue", "bt", "nrt", *(f"nct-M{m}" for m in SIZES)))
    detail = (", ".join(fmt(reports, k) for k in ("winvalue", "bt", "nrt", *(f"nct-M{m}" for m in SIZES)))
              + f"; {seconds:.0f}s (target < 300s)")
    verdict("C1 RPS exact reproduction", nct_ok and base_ok and seconds < 300, detail)


@pytest.mark.slow
def test_c2_advanced_counter_gap(verdict):
    reports, _ = grid("advanced", FULL, with_ablation=True)
    nrt, m3, m9 = reports["nrt"], reports["nct-M3"], reports["nct-M9"]
    seconds = grid_seconds(reports)
    smoke, _ = grid("advanced", SMOKE)
    keys = [s.key for s in grid_specs()]
    separated = {(p, q) for p in keys for q in keys if reports[p].test > reports[q].test + ORDER_MARGIN}
    flipped = sorted(f"{p}>{q}" for p, q in separated if smoke[p].test <= smoke[q].test)
    checks = {
        "nrt": within(nrt.train, 57.9, 3),
        "m3": within(m3.train, nrt.train, 3),
        "m9": within(m9.train, 79.4, 3) and within(m9.test, 79.7, 3),
        "time": seconds < 1800,
        "smoke": not flipped,
    }
    detail = (f"{fmt(reports, 'nrt')}, {fmt(reports, 'nct-M3')}, {fmt(reports, 'nct-M9')}; "
              f"grid {seconds:.0f}s (target < 1800s); smoke flips {flipped or 'none'}; "
              f"failed {[k for k, v in checks.items() if not v] or 'none'}")
    verdict("C2 Advanced counter gap", all(checks.values()), detail)


@pytest.mark.slow
def test_c3_simple(verdict):
    reports, _ = grid("simple", FULL, with_nct=False)
    pw, bt = reports["pairwin"], reports["bt"]
    ok = within(pw.train, 71.2, 3) and within(pw.test, 61.8, 4) and within(bt.test, 65.5, 2)
    verdict("C3 Simple overfit gap", ok, f"{fmt(reports, 'pairwin')}, {fmt(reports, 'bt')}")


@pytest.mark.slow
def test_c4_tabular_pattern(verdict):
    simple, _ = grid("simple", FULL, with_nct=False)
    adv, _ = grid("advanced", FULL, with_ablation=True)
    rps, _ = grid("rps", FULL)
    tab_ok = all(r["tab-pairwin"].train >= 99 and r["tab-pairwin"].test < 15 for r in (simple, adv))
    melo_ok = rps["melo2"].train == 100.0 and rps["melo2"].test == 100.0
    elo_ok = within(simple["elo"].train, simple["nrt"].train, 3) and within(simple["elo"].test, simple["nrt"].test, 3)
    detail = (f"simple {fmt(simple, 'tab-pairwin')}, advanced {fmt(adv, 'tab-pairwin')}, "
              f"rps {fmt(rps, 'melo2')}, simple {fmt(simple, 'elo')} vs {fmt(simple, 'nrt')}")
    verdict("C4 tabular baselines", tab_ok and melo_ok and elo_ok, detail)


@pytest.mark.slow
def test_c5_utilization_ablation(verdict):
    reports, _ = grid("advanced", FULL, with_ablation=True)
    key = lambda bn, bm: MethodSpec("nct", size=ABLATION_SIZE, beta_n=bn, beta_m=bm).key
    util = lambda bn, bm: reports[key(bn, bm)].mean_utilized
    high_commit, default, no_mean = util(0.25, 0.25), util(0.01, 0.25), util(0.01, 0.0)
    acc_heavy, acc_default = reports[key(0.01, 1.0)].test, reports[key(0.01, 0.25)].test
    # "much less than" read as at most half
    ok = (high_commit <= 3 and 2 * high_commit <= default and no_mean < default
          and acc_heavy <= acc_default)
    detail = (f"utilized bn=0.25: {high_commit:.1f}, default: {default:.1f}, bm=0: {no_mean:.1f}; "
              f"test acc bm=1.0: {acc_heavy:.1f} vs bm=0.25: {acc_default:.1f}")
    verdict("C5 utilization ablation", ok, detail)


# criteria 6-7, also re-run on CSV input for criterion 9 ---------------------

def subgame(rng, n_comps, n_matches, game="advanced"):
    """Matches among a random subset of comps, sampled from the game's exact win matrix."""
    g = get_game(game)
    ids = rng.choice(len(g.comps), size=n_comps, replace=False)
    a, b = rng.integers(n_comps, size=n_matches), rng.integers(n_comps, size=n_matches)
    p = g.prob_matrix[ids[a], ids[b]]
    w = (rng.random(n_matches) < p).astype(float)
    return Dataset(g.encodings[ids], a, b, w, g.schema, source=f"{game}-subset")


def trained_instance(data, size, seed, epochs=20):
    cfg = TrainConfig(epochs=epochs)
    rating = train_rating("nrt", data, seed=seed, config=cfg)
    counter = train_counter(rating, data, size, seed=seed, config=cfg)
    return rating, counter


def oracle_mismatches(data, rating, counter, rng, n_gaps=10):
    """Disagreements between the fast measures and their pairwise brute-force definitions."""
    comps = data.comps
    r = rating.ratings(comps)
    x = [comps[i] for i in range(len(comps))]
    bad = []
    for gap in rng.uniform(0, 1, size=n_gaps):
        fast = top_d(r, gap=gap).count
        slow = brute_force_top_d(lambda i, j: float(bt_predict(rating, x[i], x[j])), len(x), gap)
        if fast != slow:
            bad.append(f"top_d G={gap:.3f}: {fast} vs {slow}")
    table = materialize(counter)
    res = top_b(r, table, comps)
    tops = list(res.category_tops.values())
    slow_b = brute_force_domination(lambda i, j: float(nct_predict(rating, table, x[tops[i]], x[tops[j]])), len(tops))
    if res.count != slow_b:
        bad.append(f"top_b: {res.count} vs {slow_b}")
    return bad, res


def invariant_violations(data, rating, counter):
    """Exact identity checks on one trained instance; returns the failed ones."""
    comps = data.comps
    n = len(comps)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    table = materialize(counter)
    bad = []
    if not np.all(bt_predict(rating, comps[i], comps[j]) + bt_predict(rating, comps[j], comps[i]) == 1.0):
        bad.append("bt complement")
    if not np.all(nct_predict(rating, table, comps[i], comps[j]) + nct_predict(rating, table, comps[j], comps[i]) == 1.0):
        bad.append("nct complement")
    cb = counter.codebook
    k, l = np.meshgrid(np.arange(len(cb)), np.arange(len(cb)), indexing="ij")
    res_kl = residual_decode(counter, cb[k.ravel()], cb[l.ravel()])
    res_lk = residual_decode(counter, cb[l.ravel()], cb[k.ravel()])
    if not (np.array_equal(res_kl, -res_lk) and np.all(res_kl[k.ravel() == l.ravel()] == 0)):
        bad.append("residual antisymmetry")
    if not (np.array_equal(table.table, -table.table.T) and np.all(np.diag(table.table) == 0)):
        bad.append("table antisymmetry")
    r = rating.ratings(comps)
    for scale in (0.25, 2.0, 1024.0):  # powers of two scale exactly
        d1, d2 = top_d(r, gap=0.05), top_d(r * scale, gap=0.05)
        b1, b2 = top_b(r, table, comps), top_b(r * scale, table, comps)
        if (d1.count, d1.members, d1.top_index) != (d2.count, d2.members, d2.top_index):
            bad.append(f"top_d scale {scale}")
        if (b1.count, b1.category_tops, b1.dominated) != (b2.count, b2.category_tops, b2.dominated):
            bad.append(f"top_b scale {scale}")
    return bad


def test_c6_oracle_equivalence(verdict):
    rng = np.random.default_rng(6)
    bad, counts = [], []
    for inst in range(20):
        data = subgame(rng, int(rng.integers(10, 51)), 3000)
        rating, counter = trained_instance(data, int(rng.choice([3, 9, 27])), seed=inst)
        mismatches, res = oracle_mismatches(data, rating, counter, rng)
        bad += [f"instance {inst} {m}" for m in mismatches]
        counts.append(res.count)
    verdict("C6 oracle equivalence", not bad,
            f"20 trained instances x 10 gaps plus top_b; B values {counts}; mismatches {bad or 'none'}")


def test_c7_exact_invariants(verdict):
    rng = np.random.default_rng(7)
    bad = []
    for inst in range(3):
        data = subgame(rng, 40, 3000)
        rating, counter = trained_instance(data, 9, seed=inst)
        bad += [f"instance {inst} {v}" for v in invariant_violations(data, rating, counter)]

    data = get_game("rps").generate(500, seed=1)
    coins = rng.random(len(data)) < 0.5
    twice = swap_arrays(*swap_arrays(data.a, data.b, data.outcome, coins), coins)
    if not all(np.array_equal(x, y) for x, y in zip(twice, (data.a, data.b, data.outcome))):
        bad.append("swap_arrays involution")
    rec = data.record(0)
    if swap_augment(swap_augment(rec, True), True) != rec:
        bad.append("swap_augment involution")

    elo = EloTable.fresh(6)
    for a, b, w in zip(rng.integers(6, size=500), rng.integers(6, size=500), rng.choice([0.0, 0.5, 1.0], size=500)):
        if a == b:
            continue
        ra, rb = elo.ratings[a], elo.ratings[b]
        delta = elo.k * (w - elo_expected(ra, rb))
        elo_update(elo, a, b, w)
        if not (elo.ratings[a] == ra + delta and elo.ratings[b] == rb - delta):
            bad.append("elo transfer")
            break

    uniform4, uniform6 = np.ones(4), np.ones(6)
    b4 = top_b(uniform4, cycle_with_neutral(), categories=np.arange(4)).count
    b6 = top_b(uniform6, six_cycle(), categories=np.arange(6)).count
    if (b4, brute_force_over_tops(uniform4, cycle_with_neutral(), np.arange(4))) != (4, 4):
        bad.append(f"4x4 fixture B={b4}")
    if (b6, brute_force_over_tops(uniform6, six_cycle(), np.arange(6))) != (6, 6):
        bad.append(f"6x6 fixture B={b6}")
    verdict("C7 exact invariants", not bad, f"violations {bad or 'none'}; fixtures B={b4} (4x4), B={b6} (6x6)")


POINTS = 100
GRADIENT_TOL = 1e-3


def test_c8_gradients(verdict):
    probes = {
        "rating nrt": lambda s: rating_fd_error("nrt", s),
        "rating bt": lambda s: rating_fd_error("bt", s),
        "winvalue": lambda s: regressor_fd_error(s),
        "pairwin": lambda s: regressor_fd_error(s, pairs=True),
        "encoder": encoder_fd_error,
        "decoder": decoder_fd_error,
        "codebook": codebook_fd_error,
    }
    worst = {name: max(probe(1000 + s) for s in range(POINTS)) for name, probe in probes.items()}
    ok = all(v < GRADIENT_TOL for v in worst.values())
    verdict("C8 gradient correctness", ok,
            f"worst relative error over {POINTS} points: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_c9_csv_path(verdict, tmp_path):
    rng = np.random.default_rng(9)
    source = subgame(rng, 45, 12_000)
    path = tmp_path / "matches.csv"
    save_csv(source, path)
    data = load_csv(path, source.schema)
    bad = [] if len(data) >= 10_000 else ["fewer than 10k matches"]
    for inst, size in enumerate((3, 9, 27)):
        rating, counter = trained_instance(data, size, seed=inst, epochs=10)
        mismatches, _ = oracle_mismatches(data, rating, counter, rng)
        bad += [f"M={size} {m}" for m in mismatches + invariant_violations(data, rating, counter)]
    verdict("C9 CSV path", not bad,
            f"{len(data)} matches, {data.n_comps} comps via CSV; criteria 6-7 failures {bad or 'none'}")
