from fractions import Fraction
from math import comb

import numpy as np
import pytest

from pvpbalance.games import (
    AdvancedComp,
    Rps,
    RpsComp,
    SimpleComp,
    advanced_score_prob,
    advanced_win_prob,
    get_game,
    rps_win_value,
    simple_win_prob,
)


def ratio(s1, s2):
    return float(Fraction(s1 * s1, s1 * s1 + s2 * s2))


class TestOracles:
    def test_simple_examples(self):
        top = SimpleComp.of(18, 19, 20)
        assert simple_win_prob(top, top) == 0.5
        assert simple_win_prob(top, SimpleComp.of(1, 2, 3)) == pytest.approx(3249 / 3285)
        assert simple_win_prob(SimpleComp.of(17, 19, 20), top) == pytest.approx(0.49115, abs=5e-6)

    def test_rps_rules(self):
        r, p, s = (RpsComp(c) for c in Rps)
        assert rps_win_value(r, s) == 1.0
        assert rps_win_value(r, r) == 0.5
        assert rps_win_value(s, r) == 0.0
        assert rps_win_value(p, r) == 1.0

    def test_advanced_bonus_on_scores(self):
        # Rock (57) against Paper (58): Paper takes the bonus
        assert advanced_score_prob(57, 58) == pytest.approx(3249 / 17173)
        assert advanced_score_prob(57, 58) == pytest.approx(0.1892, abs=1e-4)
        # Rock (57) against Rock (60): no bonus
        assert advanced_score_prob(57, 60) == pytest.approx(0.47438, abs=5e-6)

    def test_advanced_bonus_on_comps(self):
        rock57, paper55 = AdvancedComp.of(18, 19, 20), AdvancedComp.of(16, 19, 20)
        assert rock57.category is Rps.ROCK and paper55.category is Rps.PAPER
        assert advanced_win_prob(rock57, paper55) == pytest.approx(ratio(57, 115))
        assert advanced_win_prob(paper55, rock57) == pytest.approx(ratio(115, 57))

    def test_advanced_equal_comps(self):
        c = AdvancedComp.of(3, 9, 14)
        assert advanced_win_prob(c, c) == 0.5

    def test_advanced_reduces_to_simple_on_same_category(self):
        g = get_game("advanced")
        comps = g.comps
        rng = np.random.default_rng(1)
        for i, j in rng.integers(len(comps), size=(200, 2)):
            if comps[i].category == comps[j].category:
                assert advanced_win_prob(comps[i], comps[j]) == simple_win_prob(comps[i], comps[j])


class TestEnumeration:
    def test_counts(self):
        assert len(get_game("simple").comps) == comb(20, 3) == 1140
        assert len(get_game("advanced").comps) == 1140
        assert len(get_game("rps").comps) == 3

    def test_encodings(self):
        adv = get_game("advanced")
        x = adv.encodings
        assert x.shape == (1140, 23)
        adv.schema.validate(x)
        assert np.all(x[:, :20].sum(axis=1) == 3)
        get_game("simple").schema.validate(get_game("simple").encodings)
        assert np.array_equal(get_game("rps").encodings, np.eye(3))

    def test_score_range(self):
        scores = [c.score for c in get_game("simple").comps]
        assert min(scores) == 6 and max(scores) == 57

    def test_invalid_comp(self):
        with pytest.raises(ValueError):
            SimpleComp.of(1, 2, 21)
        with pytest.raises(ValueError):
            SimpleComp.of(1, 2)


@pytest.mark.parametrize("name", ["simple", "rps", "advanced"])
def test_matrix_complement_and_oracle_agreement(name):
    g = get_game(name)
    p = g.prob_matrix
    assert np.array_equal(p + p.T, np.ones_like(p))
    rng = np.random.default_rng(0)
    for i, j in rng.integers(len(g.comps), size=(100, 2)):
        assert p[i, j] == pytest.approx(g.win_prob(g.comps[i], g.comps[j]), abs=1e-12)


def test_rps_cyclic_dominance():
    p = get_game("rps").prob_matrix
    for k in range(3):
        others = [j for j in range(3) if j != k]
        assert not all(p[k, j] >= 0.5 for j in others)


class TestGeneration:
    def test_rps_frequency(self):
        d = get_game("rps").generate(100_000, seed=4)
        rock_share = (np.mean(d.a == 0) + np.mean(d.b == 0)) / 2
        assert abs(rock_share - 1 / 3) < 0.01
        assert set(np.unique(d.outcome)) <= {0.0, 0.5, 1.0}

    def test_simple_monte_carlo(self):
        g = get_game("simple")
        d = g.generate(100_000, seed=2)
        top = next(i for i, c in enumerate(g.comps) if c.elements == frozenset({18, 19, 20}))
        wins = np.concatenate([d.outcome[d.a == top], 1 - d.outcome[d.b == top]])
        opp = np.concatenate([d.b[d.a == top], d.a[d.b == top]])
        expected = g.prob_matrix[top, opp].mean()
        # about 175 matches at p ~ 0.9: standard error ~0.023, bound at 3 SE
        assert abs(wins.mean() - expected) < 0.07

    def test_single_binary_outcome(self):
        d = get_game("advanced").generate(1, seed=9)
        assert len(d) == 1 and d.outcome[0] in (0.0, 1.0)

    def test_deterministic(self):
        a, b = get_game("simple").generate(500, 3), get_game("simple").generate(500, 3)
        assert np.array_equal(a.a, b.a) and np.array_equal(a.outcome, b.outcome)

    def test_self_matches_allowed(self):
        d = get_game("rps").generate(1000, 0)
        assert np.any(d.a == d.b)
        assert np.all(d.outcome[d.a == d.b] == 0.5)
