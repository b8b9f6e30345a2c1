"""Compositions, match records, datasets, fold splits and CSV ingestion.

A :class:`Dataset` stores its matches column-wise: a table of distinct
composition encodings plus two index arrays and an outcome array.  Every
subset taken from a dataset (folds, filters) shares the parent's composition
table, so composition ids are comparable across train and test splits.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, SizeError

VALID_OUTCOMES = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class Segment:
    kind: str  # "binary" or "onehot"
    size: int

    def __post_init__(self) -> None:
        if self.kind not in ("binary", "onehot"):
            raise SchemaError(f"unknown segment kind {self.kind!r}")
        if self.size < 1:
            raise SchemaError("segment size must be positive")


@dataclass(frozen=True)
class Schema:
    """Layout of a composition feature vector."""

    name: str
    segments: tuple[Segment, ...]

    @property
    def dimension(self) -> int:
        return sum(s.size for s in self.segments)

    def validate(self, features: np.ndarray) -> None:
        """Raise SchemaError unless every row of ``features`` conforms."""
        x = np.atleast_2d(np.asarray(features, dtype=float))
        if x.shape[1] != self.dimension:
            raise SchemaError(
                f"schema {self.name!r} expects dimension {self.dimension}, got {x.shape[1]}"
            )
        if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
            raise SchemaError("feature entries must lie in [0, 1]")
        start = 0
        for seg in self.segments:
            block = x[:, start:start + seg.size]
            if seg.kind == "onehot":
                ok = np.all((block == 0) | (block == 1), axis=1) & (block.sum(axis=1) == 1)
                if not np.all(ok):
                    raise SchemaError(
                        f"one-hot segment at columns {start}..{start + seg.size - 1} "
                        "must contain exactly one 1"
                    )
            start += seg.size

    def to_text(self) -> str:
        segs = ",".join(f"{s.kind}:{s.size}" for s in self.segments)
        return f"name = {self.name}\ndimension = {self.dimension}\nsegments = {segs}\n"

    @classmethod
    def from_text(cls, text: str) -> Schema:
        values: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"malformed schema line: {raw!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            values[key] = value
        if "segments" not in values:
            raise SchemaError("schema must declare 'segments'")
        segments = []
        for item in values["segments"].split(","):
            kind, _, size = item.strip().partition(":")
            try:
                segments.append(Segment(kind.strip(), int(size)))
            except ValueError as exc:
                raise SchemaError(f"bad segment {item!r}") from exc
        schema = cls(values.get("name", "custom"), tuple(segments))
        if "dimension" in values and int(values["dimension"]) != schema.dimension:
            raise SchemaError(
                f"declared dimension {values['dimension']} does not match segments "
                f"({schema.dimension})"
            )
        return schema

    @classmethod
    def load(cls, path: str | Path) -> Schema:
        return cls.from_text(Path(path).read_text())


SIMPLE_SCHEMA = Schema("simple", (Segment("binary", 20),))
RPS_SCHEMA = Schema("rps", (Segment("onehot", 3),))
ADVANCED_SCHEMA = Schema("advanced", (Segment("binary", 20), Segment("onehot", 3)))
BUILTIN_SCHEMAS = {s.name: s for s in (SIMPLE_SCHEMA, RPS_SCHEMA, ADVANCED_SCHEMA)}


def get_schema(name_or_path: str | Path) -> Schema:
    if str(name_or_path) in BUILTIN_SCHEMAS:
        return BUILTIN_SCHEMAS[str(name_or_path)]
    return Schema.load(name_or_path)


@dataclass(frozen=True)
class CompositionEncoding:
    features: tuple[float, ...]
    schema_id: str

    def as_array(self) -> np.ndarray:
        return np.asarray(self.features, dtype=float)


@dataclass(frozen=True)
class MatchRecord:
    comp_a: CompositionEncoding
    comp_b: CompositionEncoding
    outcome: float  # win value of comp_a


def swap_augment(record: MatchRecord, coin: bool) -> MatchRecord:
    """Swap the two sides of a match when ``coin`` is set, complementing the outcome."""
    if not coin:
        return record
    return MatchRecord(record.comp_b, record.comp_a, 1.0 - record.outcome)


def swap_arrays(
    a: np.ndarray, b: np.ndarray, outcome: np.ndarray, coins: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`swap_augment` over index arrays."""
    return (
        np.where(coins, b, a),
        np.where(coins, a, b),
        np.where(coins, 1.0 - outcome, outcome),
    )


@dataclass(frozen=True)
class Dataset:
    comps: np.ndarray
    a: np.ndarray
    b: np.ndarray
    outcome: np.ndarray
    schema: Schema
    source: str = ""
    _pair_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.a) == 0:
            raise SizeError("dataset must contain at least one match")
        if not (len(self.a) == len(self.b) == len(self.outcome)):
            raise SizeError("index and outcome arrays must have equal length")
        if self.comps.shape[1] != self.schema.dimension:
            raise SchemaError("composition table does not match schema dimension")

    def __len__(self) -> int:
        return len(self.a)

    @property
    def n_comps(self) -> int:
        return len(self.comps)

    @property
    def schema_id(self) -> str:
        return self.schema.name

    def record(self, i: int) -> MatchRecord:
        sid = self.schema.name
        return MatchRecord(
            CompositionEncoding(tuple(self.comps[self.a[i]].tolist()), sid),
            CompositionEncoding(tuple(self.comps[self.b[i]].tolist()), sid),
            float(self.outcome[i]),
        )

    def records(self) -> Iterator[MatchRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, indices: np.ndarray, source: str | None = None) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.comps,
            self.a[idx],
            self.b[idx],
            self.outcome[idx],
            self.schema,
            self.source if source is None else source,
        )

    def observed_comps(self, min_records: int = 1) -> np.ndarray:
        """Ids of compositions appearing in at least ``min_records`` matches."""
        n = self.n_comps
        # a self-match is one record for its comp
        counts = (np.bincount(self.a, minlength=n) + np.bincount(self.b, minlength=n)
                  - np.bincount(self.a[self.a == self.b], minlength=n))
        return np.flatnonzero(counts >= min_records)

    @classmethod
    def from_arrays(
        cls,
        features_a: np.ndarray,
        features_b: np.ndarray,
        outcome: Sequence[float],
        schema: Schema,
        source: str = "",
    ) -> Dataset:
        """Build a dataset from per-match feature rows, deduplicating compositions."""
        fa = np.asarray(features_a, dtype=float)
        fb = np.asarray(features_b, dtype=float)
        if len(fa) == 0:
            raise SizeError("dataset must contain at least one match")
        schema.validate(fa)
        schema.validate(fb)
        stacked = np.concatenate([fa, fb])
        uniq, first, inverse = np.unique(stacked, axis=0, return_index=True, return_inverse=True)
        # renumber by first appearance so ids follow file order
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        ids = rank[inverse.reshape(-1)]
        n = len(fa)
        return cls(uniq[order], ids[:n], ids[n:], np.asarray(outcome, dtype=float), schema, source)

    @classmethod
    def from_records(cls, records: Iterable[MatchRecord], schema: Schema, source: str = "") -> Dataset:
        recs = list(records)
        if not recs:
            raise SizeError("dataset must contain at least one match")
        for r in recs:
            if r.comp_a.schema_id != schema.name or r.comp_b.schema_id != schema.name:
                raise SchemaError("all records must share the dataset schema")
        return cls.from_arrays(
            [r.comp_a.features for r in recs],
            [r.comp_b.features for r in recs],
            [r.outcome for r in recs],
            schema,
            source,
        )


@dataclass(frozen=True)
class FoldSplit:
    train: Dataset
    test: Dataset
    fold_index: int


def kfold_split(data: Dataset, k: int = 5, seed: int = 0) -> list[FoldSplit]:
    """Seeded shuffle, then contiguous slices; fold ``i`` is the test set of split ``i``."""
    if k < 2:
        raise SizeError("k must be at least 2")
    if len(data) < k:
        raise SizeError(f"dataset of size {len(data)} cannot be split into {k} folds")
    perm = np.random.default_rng(seed).permutation(len(data))
    folds = np.array_split(perm, k)
    splits = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        splits.append(
            FoldSplit(
                train=data.subset(np.sort(train_idx), source=f"{data.source}[train {i}]"),
                test=data.subset(np.sort(test_idx), source=f"{data.source}[test {i}]"),
                fold_index=i,
            )
        )
    return splits


def _parse_outcome(text: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"outcome {text!r} is not a number", row) from None
    if value not in VALID_OUTCOMES:
        raise ParseError(f"outcome {value} not in {{0, 0.5, 1}}", row)
    return value


def load_csv(path: str | Path, schema: Schema, header: bool = False) -> Dataset:
    """Read one match per row: comp_a features, comp_b features, outcome."""
    dim = schema.dimension
    fa, fb, out = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            if len(cells) != 2 * dim + 1:
                raise SchemaError(
                    f"row {lineno}: expected {2 * dim + 1} columns for schema "
                    f"{schema.name!r}, got {len(cells)}"
                )
            try:
                feats = [float(c) for c in cells[:-1]]
            except ValueError:
                raise ParseError("non-numeric feature value", lineno) from None
            outcome = _parse_outcome(cells[-1], lineno)
            try:
                schema.validate(np.array([feats[:dim], feats[dim:]]))
            except SchemaError as exc:
                raise ParseError(str(exc), lineno) from None
            fa.append(feats[:dim])
            fb.append(feats[dim:])
            out.append(outcome)
    if not out:
        raise SchemaError(f"{path}: no match rows found")
    return Dataset.from_arrays(np.array(fa), np.array(fb), out, schema, source=str(path))


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def save_csv(data: Dataset, path: str | Path, header: bool = False) -> None:
    dim = data.schema.dimension
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(
                [f"a{i}" for i in range(dim)] + [f"b{i}" for i in range(dim)] + ["outcome"]
            )
        cells = [[_fmt(v) for v in row] for row in data.comps.tolist()]
        for ia, ib, w in zip(data.a.tolist(), data.b.tolist(), data.outcome.tolist()):
            writer.writerow(cells[ia] + cells[ib] + [_fmt(w)])
