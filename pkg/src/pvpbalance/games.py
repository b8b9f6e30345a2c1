"""Synthetic PvP games with exact win-probability oracles.

Three games are provided:

* ``simple`` -- a comp is 3 distinct elements out of 1..20 with score equal
  to the element sum; P(c1 beats c2) = s1^2 / (s1^2 + s2^2).
* ``rps`` -- Rock-Paper-Scissors with deterministic 0 / 0.5 / 1 outcomes.
* ``advanced`` -- the simple game plus an RPS category T = s mod 3
  (0/1/2 = Rock/Paper/Scissors); the side winning the RPS relation gets
  +60 added to its score before the squared-score ratio is taken.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .data import ADVANCED_SCHEMA, RPS_SCHEMA, SIMPLE_SCHEMA, Dataset, Schema
from .errors import SizeError

N_ELEMENTS = 20
COMP_SIZE = 3
RPS_BONUS = 60


class Rps(enum.IntEnum):
    ROCK = 0
    PAPER = 1
    SCISSORS = 2

    def beats(self, other: Rps) -> bool:
        return (self - other) % 3 == 1


@dataclass(frozen=True)
class SimpleComp:
    elements: frozenset[int]

    def __post_init__(self) -> None:
        if len(self.elements) != COMP_SIZE or not all(1 <= e <= N_ELEMENTS for e in self.elements):
            raise ValueError(f"a comp is {COMP_SIZE} distinct elements in 1..{N_ELEMENTS}")

    @classmethod
    def of(cls, *elements: int) -> SimpleComp:
        return cls(frozenset(elements))

    @property
    def score(self) -> int:
        return sum(self.elements)

    def encode(self) -> np.ndarray:
        x = np.zeros(N_ELEMENTS)
        x[[e - 1 for e in self.elements]] = 1.0
        return x


@dataclass(frozen=True)
class RpsComp:
    category: Rps

    def encode(self) -> np.ndarray:
        x = np.zeros(3)
        x[int(self.category)] = 1.0
        return x


@dataclass(frozen=True)
class AdvancedComp(SimpleComp):
    @property
    def category(self) -> Rps:
        return Rps(self.score % 3)

    def encode(self) -> np.ndarray:
        x = np.zeros(N_ELEMENTS + 3)
        x[:N_ELEMENTS] = super().encode()
        x[N_ELEMENTS + int(self.category)] = 1.0
        return x


def _squared_ratio(s1: float, s2: float) -> float:
    return s1 * s1 / (s1 * s1 + s2 * s2)


def simple_win_prob(c1: SimpleComp, c2: SimpleComp) -> float:
    return _squared_ratio(c1.score, c2.score)


def rps_win_value(c1: RpsComp, c2: RpsComp) -> float:
    if c1.category == c2.category:
        return 0.5
    return 1.0 if c1.category.beats(c2.category) else 0.0


def advanced_score_prob(s1: int, s2: int) -> float:
    """Advanced rule on raw scores; the category of a score is ``s mod 3``."""
    t1, t2 = Rps(s1 % 3), Rps(s2 % 3)
    if t1.beats(t2):
        s1 += RPS_BONUS
    elif t2.beats(t1):
        s2 += RPS_BONUS
    return _squared_ratio(s1, s2)


def advanced_win_prob(c1: AdvancedComp, c2: AdvancedComp) -> float:
    return advanced_score_prob(c1.score, c2.score)


class Game:
    """A synthetic game: enumerated comps, encodings and the pairwise oracle."""

    name: str
    schema: Schema
    binary_outcomes: bool = True

    @cached_property
    def comps(self) -> list:
        raise NotImplementedError

    def win_prob(self, c1, c2) -> float:
        raise NotImplementedError

    @cached_property
    def encodings(self) -> np.ndarray:
        return np.array([c.encode() for c in self.comps])

    @cached_property
    def prob_matrix(self) -> np.ndarray:
        """``P[i, j]`` = oracle win value of comp ``i`` against comp ``j``."""
        comps = self.comps
        return np.array([[self.win_prob(ci, cj) for cj in comps] for ci in comps])

    def generate(self, n_matches: int, seed: int = 0) -> Dataset:
        """Sample ``n_matches`` uniform comp pairs and their outcomes.

        Combination games draw a Bernoulli win from the oracle probability;
        RPS emits its deterministic 0 / 0.5 / 1 value.
        """
        if n_matches < 1:
            raise SizeError("n_matches must be at least 1")
        rng = np.random.default_rng(seed)
        n = len(self.comps)
        a = rng.integers(n, size=n_matches)
        b = rng.integers(n, size=n_matches)
        p = self.prob_matrix[a, b]
        if self.binary_outcomes:
            outcome = (rng.random(n_matches) < p).astype(float)
        else:
            outcome = p.astype(float)
        return Dataset(self.encodings, a, b, outcome, self.schema, source=f"{self.name}:{seed}")


class SimpleGame(Game):
    name = "simple"
    schema = SIMPLE_SCHEMA

    @cached_property
    def comps(self) -> list[SimpleComp]:
        return [
            SimpleComp(frozenset(c))
            for c in itertools.combinations(range(1, N_ELEMENTS + 1), COMP_SIZE)
        ]

    def win_prob(self, c1, c2) -> float:
        return simple_win_prob(c1, c2)

    @cached_property
    def prob_matrix(self) -> np.ndarray:
        s = np.array([c.score for c in self.comps], dtype=float) ** 2
        return s[:, None] / (s[:, None] + s[None, :])


class RpsGame(Game):
    name = "rps"
    schema = RPS_SCHEMA
    binary_outcomes = False

    @cached_property
    def comps(self) -> list[RpsComp]:
        return [RpsComp(r) for r in Rps]

    def win_prob(self, c1, c2) -> float:
        return rps_win_value(c1, c2)


class AdvancedGame(Game):
    name = "advanced"
    schema = ADVANCED_SCHEMA

    @cached_property
    def comps(self) -> list[AdvancedComp]:
        return [
            AdvancedComp(frozenset(c))
            for c in itertools.combinations(range(1, N_ELEMENTS + 1), COMP_SIZE)
        ]

    def win_prob(self, c1, c2) -> float:
        return advanced_win_prob(c1, c2)

    @cached_property
    def prob_matrix(self) -> np.ndarray:
        score = np.array([c.score for c in self.comps], dtype=float)
        cat = score.astype(int) % 3
        s1 = np.broadcast_to(score[:, None], (len(score),) * 2).copy()
        s2 = np.broadcast_to(score[None, :], (len(score),) * 2).copy()
        first_wins = (cat[:, None] - cat[None, :]) % 3 == 1
        second_wins = (cat[None, :] - cat[:, None]) % 3 == 1
        s1[first_wins] += RPS_BONUS
        s2[second_wins] += RPS_BONUS
        return s1**2 / (s1**2 + s2**2)


GAMES: dict[str, type[Game]] = {"simple": SimpleGame, "rps": RpsGame, "advanced": AdvancedGame}


def get_game(name: str) -> Game:
    try:
        return GAMES[name]()
    except KeyError:
        raise KeyError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None


def generate_dataset(game: str | Game, n_matches: int, seed: int = 0) -> Dataset:
    if isinstance(game, str):
        game = get_game(game)
    return game.generate(n_matches, seed)
