"""Command-line entry point: ``pvpbalance <command> [options]``.

Commands: generate, train, evaluate, ablate-beta, balance, report.  Options
may also come from a flat ``key = value`` config file (``--config``); flags
override the file, which overrides defaults.  A run manifest written by any
command is itself accepted as ``--config``.  Outputs go under ``--out``,
falling back to ``$PVPBALANCE_OUT`` and then ``./pvpbalance-out``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .balance import top_b, top_d
from .counter import BETA_M, BETA_N, CounterModel, materialize, nct_margin, train_counter, utilized_m
from .data import Dataset, get_schema, load_csv, save_csv
from .errors import PvpBalanceError
from .evaluation import METHODS, ExperimentConfig, MethodSpec, ground_truth_labels, labels_from_win, run_grid
from .games import GAMES, get_game
from .nn import TrainConfig
from .rating import RatingModel, train_rating, win_from_margin

OUT_ENV = "PVPBALANCE_OUT"
DEFAULT_OUT = "pvpbalance-out"
MANIFEST = "manifest.json"


@dataclass
class RunConfig:
    game: str = "rps"
    csv: str = ""
    schema: str = ""
    matches: int = 100_000
    data_seed: int = 0
    methods: list[str] = field(default_factory=lambda: ["winvalue", "pairwin", "bt", "nrt"])
    sizes: list[int] = field(default_factory=lambda: [3, 9, 27, 81])
    gaps: list[float] = field(default_factory=lambda: [0.01, 0.02, 0.04, 0.08])
    beta_n: float = BETA_N
    beta_m: float = BETA_M
    beta_n_grid: list[float] = field(default_factory=lambda: [0.01, 0.125, 0.25])
    beta_m_grid: list[float] = field(default_factory=lambda: [0.0, 0.125, 0.25, 0.5, 1.0])
    ablation_size: int = 27
    seeds: int = 5
    epochs: int = 100
    batch_size: int = 128
    lr: float = 2.5e-4
    rating: str = "nrt"
    min_records: int = 1
    workers: int = 1

    @property
    def source_name(self) -> str:
        return Path(self.csv).stem if self.csv else self.game

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(folds=self.seeds, epochs=self.epochs, batch_size=self.batch_size,
                                lr=self.lr, workers=self.workers)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw) -> object:
    default = getattr(RunConfig(), name)
    if isinstance(default, list):
        items = raw if isinstance(raw, list) else [s for s in str(raw).replace(" ", "").split(",") if s]
        kind = type(default[0]) if default else str
        return [kind(x) for x in items]
    return type(default)(raw)


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines (``#`` comments), or a manifest's ``config`` block."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        values = json.loads(text).get("config", {})
    else:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise PvpBalanceError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            values[key.replace("-", "_")] = value
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise PvpBalanceError(f"{path}: unknown config keys {unknown}")
    return {k: _coerce(k, v) for k, v in values.items()}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    for name in _FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = _coerce(name, value)
    cfg = RunConfig(**merged)
    bad = sorted(set(cfg.methods) - set(METHODS))
    if bad:
        raise PvpBalanceError(f"unknown methods {bad}; choose from {list(METHODS)}")
    if not cfg.csv and cfg.game not in GAMES:
        raise PvpBalanceError(f"unknown game {cfg.game!r}; choose from {sorted(GAMES)}")
    return cfg


def output_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_data(cfg: RunConfig) -> Dataset:
    if cfg.csv:
        return load_csv(cfg.csv, get_schema(cfg.schema or cfg.game))
    return get_game(cfg.game).generate(cfg.matches, cfg.data_seed)


def all_comps(cfg: RunConfig, data: Dataset) -> np.ndarray:
    """Comp ids the balance measures range over."""
    if cfg.csv:
        return data.observed_comps(cfg.min_records)
    return np.arange(data.n_comps)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "config_hash": cfg.digest(),
        "seeds": {"data": cfg.data_seed, "models": list(range(cfg.seeds)), "split": 0},
        "versions": {
            "pvpbalance": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out / (MANIFEST if command != "generate" else f"{outputs[0].stem}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path: Path, header: list[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(x: float) -> str:
    return f"{x:.2f}"


# commands ------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    target = Path(args.output) if args.output else output_dir(args) / f"{cfg.game}.csv"
    data = get_game(cfg.game).generate(cfg.matches, cfg.data_seed)
    save_csv(data, target)
    write_manifest(target.parent, "generate", cfg, [target])
    print(f"wrote {len(data)} matches to {target}")
    return 0


def _train_all(cfg: RunConfig, data: Dataset, out: Path) -> tuple[RatingModel, dict[int, CounterModel], list[Path]]:
    tc = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr)
    rating = train_rating(cfg.rating, data, seed=0, config=tc)
    rating_path = out / "rating.npz"
    rating.save(rating_path)
    outputs = [rating_path]
    counters = {}
    for size in cfg.sizes:
        model = train_counter(rating, data, size, seed=0, beta_n=cfg.beta_n, beta_m=cfg.beta_m, config=tc)
        counters[size] = model
        model_path = out / f"counter-M{size}.npz"
        model.save(model_path)
        outputs += [model_path, *export_table(model, data, out / f"table-M{size}.csv",
                                              out / f"assignments-M{size}.csv")]
    return rating, counters, outputs


def export_table(model: CounterModel, data: Dataset, table_path: Path, assign_path: Path) -> list[Path]:
    table = materialize(model).table
    labels = [f"k{i}" for i in range(len(table))]
    _write_rows(table_path, ["category", *labels],
                [[lab, *(repr(float(v)) for v in row)] for lab, row in zip(labels, table)])
    cats = model.categorize(data.comps)
    dim = data.schema.dimension
    _write_rows(assign_path, ["comp", "category", *(f"f{i}" for i in range(dim))],
                [[i, f"k{k}", *(f"{v:g}" for v in row)] for i, (k, row) in enumerate(zip(cats, data.comps))])
    return [table_path, assign_path]


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = output_dir(args)
    data = load_data(cfg)
    _, _, outputs = _train_all(cfg, data, out)
    write_manifest(out, "train", cfg, outputs)
    print(f"trained {cfg.rating} rating and counter tables M={cfg.sizes} into {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = output_dir(args)
    data = load_data(cfg)
    specs = [MethodSpec(m) for m in cfg.methods if m != "nct"]
    specs += [MethodSpec("nct", size=m, beta_n=cfg.beta_n, beta_m=cfg.beta_m) for m in cfg.sizes]
    reports = run_grid(data, specs, cfg.experiment(), cfg.source_name)
    keys = [s.key for s in specs]
    game = cfg.source_name
    table = _write_rows(
        out / "accuracy.csv",
        ["split", "game", *keys],
        [["train", game, *(_fmt(reports[k].train) for k in keys)],
         ["test", game, *(_fmt(reports[k].test) for k in keys)]],
    )
    per_seed = _write_rows(
        out / "accuracy_per_seed.csv",
        ["game", "method", "seed", "train", "test", "utilized"],
        [[game, k, i, _fmt(tr), _fmt(te), (reports[k].utilized[i] if reports[k].utilized else "")]
         for k in keys for i, (tr, te) in enumerate(zip(reports[k].per_seed_train, reports[k].per_seed_test))],
    )
    vs_m = _write_rows(
        out / "accuracy_vs_m.csv",
        ["game", "size", "train", "test", "utilized"],
        [[game, s.size, _fmt(reports[s.key].train), _fmt(reports[s.key].test), _fmt(reports[s.key].mean_utilized)]
         for s in specs if s.name == "nct"],
    )
    write_manifest(out, "evaluate", cfg, [table, per_seed, vs_m])
    print(table.read_text(), end="")
    return 0


def cmd_ablate_beta(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = output_dir(args)
    data = load_data(cfg)
    m = cfg.ablation_size
    settings = [(bn, cfg.beta_m) for bn in cfg.beta_n_grid]
    settings += [(cfg.beta_n, bm) for bm in cfg.beta_m_grid if (cfg.beta_n, bm) not in settings]
    specs = [MethodSpec("nct", size=m, beta_n=bn, beta_m=bm) for bn, bm in settings]
    reports = run_grid(data, specs, cfg.experiment(), cfg.source_name)
    path = _write_rows(
        out / "utilization.csv",
        ["game", "size", "beta_n", "beta_m", "train", "test", "utilized"],
        [[cfg.source_name, m, f"{s.beta_n:g}", f"{s.beta_m:g}", _fmt(reports[s.key].train),
          _fmt(reports[s.key].test), _fmt(reports[s.key].mean_utilized)] for s in specs],
    )
    write_manifest(out, "ablate-beta", cfg, [path])
    print(path.read_text(), end="")
    return 0


def cmd_balance(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = output_dir(args)
    data = load_data(cfg)
    rating_path = out / "rating.npz"
    if rating_path.exists() and all((out / f"counter-M{m}.npz").exists() for m in cfg.sizes):
        rating = RatingModel.load(rating_path)
        counters = {m: CounterModel.load(out / f"counter-M{m}.npz") for m in cfg.sizes}
        outputs: list[Path] = []
    else:
        rating, counters, outputs = _train_all(cfg, data, out)
    ids = all_comps(cfg, data)
    comps = data.comps[ids]
    r = rating.ratings(comps)
    d_rows = []
    for g in cfg.gaps:
        res = top_d(r, gap=g)
        d_rows.append([cfg.source_name, f"{g:g}", res.count, int(ids[res.top_index])])
    truth = ground_truth_labels(data).labels(data.a, data.b)
    r_all = rating.ratings(data.comps)
    b_rows = []
    for m, model in counters.items():
        tab = materialize(model)
        res = top_b(r, tab, comps)
        k = model.categorize(data.comps)
        pred = labels_from_win(win_from_margin(nct_margin(r_all[data.a], r_all[data.b], tab.table, k[data.a], k[data.b])))
        acc = 100.0 * float(np.mean(pred == truth))
        b_rows.append([cfg.source_name, m, utilized_m(model, comps), res.count, _fmt(acc)])
    outputs.append(_write_rows(out / "top_d.csv", ["game", "gap", "D", "top_comp"], d_rows))
    outputs.append(_write_rows(out / "top_b.csv", ["game", "size", "utilized", "B", "train_accuracy"], b_rows))
    write_manifest(out, "balance", cfg, outputs)
    print((out / "top_d.csv").read_text() + (out / "top_b.csv").read_text(), end="")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    out = output_dir(args)
    found = False
    for name in ("accuracy.csv", "accuracy_vs_m.csv", "utilization.csv", "top_d.csv", "top_b.csv"):
        path = out / name
        if path.exists():
            found = True
            print(f"== {name}")
            print(path.read_text(), end="")
    if not found:
        raise PvpBalanceError(f"no result files in {out}")
    return 0


# parser --------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file, or a manifest.json")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--game", choices=sorted(GAMES))
    p.add_argument("--csv", help="match CSV instead of a synthetic game")
    p.add_argument("--schema", help="schema name or schema file for --csv")
    p.add_argument("--matches", type=int)
    p.add_argument("--data-seed", dest="data_seed", type=int)
    p.add_argument("--methods", help="comma list of " + ",".join(METHODS))
    p.add_argument("--sizes", help="comma list of counter table sizes")
    p.add_argument("--gaps", help="comma list of Top-D gaps")
    p.add_argument("--beta-n", dest="beta_n", type=float)
    p.add_argument("--beta-m", dest="beta_m", type=float)
    p.add_argument("--beta-n-grid", dest="beta_n_grid")
    p.add_argument("--beta-m-grid", dest="beta_m_grid")
    p.add_argument("--ablation-size", dest="ablation_size", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds, one per fold")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--rating", choices=["bt", "nrt"])
    p.add_argument("--min-records", dest="min_records", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvpbalance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "generate": (cmd_generate, "write a synthetic match CSV"),
        "train": (cmd_train, "train a rating model and counter tables on the full data"),
        "evaluate": (cmd_evaluate, "cross-validated strength-relation accuracy"),
        "ablate-beta": (cmd_ablate_beta, "codebook utilization under beta settings"),
        "balance": (cmd_balance, "Top-D and Top-B reports"),
        "report": (cmd_report, "print collected result tables"),
    }
    for name, (fn, helptext) in commands.items():
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "generate":
            p.add_argument("--output", help="CSV path (default <out>/<game>.csv)")
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PvpBalanceError, ValueError, KeyError, OSError) as exc:
        print(f"pvpbalance {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
