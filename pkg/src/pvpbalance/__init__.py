"""Strength ratings, neural counter tables and balance measures for PvP compositions."""

from .balance import BalanceResult, DiversityResult, brute_force_domination, brute_force_top_d, top_b, top_d
from .counter import (
    CounterModel,
    MaterializedCounterTable,
    materialize,
    nct_predict,
    quantize,
    residual_decode,
    residual_target,
    train_counter,
    utilized_m,
)
from .data import Dataset, MatchRecord, Schema, kfold_split, load_csv, save_csv, swap_augment
from .evaluation import (
    AccuracyReport,
    ExperimentConfig,
    MethodSpec,
    StrengthRelationLabel,
    classify,
    ground_truth_labels,
    run_experiment,
    run_grid,
)
from .games import generate_dataset, get_game
from .rating import RatingModel, bt_predict, train_pairwin, train_rating, train_winvalue

__version__ = "0.1.0"

__all__ = [
    "AccuracyReport",
    "BalanceResult",
    "CounterModel",
    "Dataset",
    "DiversityResult",
    "ExperimentConfig",
    "MatchRecord",
    "MaterializedCounterTable",
    "MethodSpec",
    "RatingModel",
    "Schema",
    "StrengthRelationLabel",
    "brute_force_domination",
    "brute_force_top_d",
    "bt_predict",
    "classify",
    "generate_dataset",
    "get_game",
    "ground_truth_labels",
    "kfold_split",
    "load_csv",
    "materialize",
    "nct_predict",
    "quantize",
    "residual_decode",
    "residual_target",
    "run_experiment",
    "run_grid",
    "save_csv",
    "swap_augment",
    "top_b",
    "top_d",
    "train_counter",
    "train_pairwin",
    "train_rating",
    "train_winvalue",
    "utilized_m",
]
