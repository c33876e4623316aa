"""Flow-table handling: schema, ingestion, cleaning, stratified splits and
a synthetic generator used by tests and demos."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from robustsel.errors import DataError
from robustsel.seeding import derive_rng

logger = logging.getLogger(__name__)

KINDS = ("continuous", "integer", "flag")


def _norm_token(token: str) -> str:
    return token.strip().casefold()


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...]
    kinds: tuple[str, ...]
    label_column: str = "Label"
    positive_label: str = "1"
    # When set, every label token other than this one counts as malicious.
    benign_label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(self.names) != len(self.kinds):
            raise DataError("schema names and kinds differ in length")
        if any(not n for n in self.names):
            raise DataError("schema contains an empty feature name")
        if len(set(self.names)) != len(self.names):
            dup = sorted({n for n in self.names if self.names.count(n) > 1})
            raise DataError(f"duplicate feature names in schema: {dup}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise DataError(f"unknown feature kinds {bad}; expected one of {KINDS}")
        if self.label_column in self.names:
            raise DataError(f"label column {self.label_column!r} is also a feature")

    @property
    def n_features(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None

    def subset(self, names: Sequence[str]) -> FeatureSchema:
        idx = [self.index(n) for n in names]
        return FeatureSchema(
            names=tuple(self.names[i] for i in idx),
            kinds=tuple(self.kinds[i] for i in idx),
            label_column=self.label_column,
            positive_label=self.positive_label,
            benign_label=self.benign_label,
        )

    def map_label(self, token: str) -> int:
        t = _norm_token(token)
        if t == _norm_token(self.positive_label):
            return 1
        if self.benign_label is not None:
            return 0 if t == _norm_token(self.benign_label) else 1
        return 0

    def to_dict(self) -> dict[str, Any]:
        d = {
            "names": list(self.names),
            "kinds": list(self.kinds),
            "label_column": self.label_column,
            "positive_label": self.positive_label,
        }
        if self.benign_label is not None:
            d["benign_label"] = self.benign_label
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> FeatureSchema:
        try:
            names = d["names"]
            kinds = d.get("kinds") or ["continuous"] * len(names)
            return cls(
                names=tuple(names),
                kinds=tuple(kinds),
                label_column=d.get("label_column", "Label"),
                positive_label=str(d.get("positive_label", "1")),
                benign_label=(
                    None if d.get("benign_label") is None else str(d["benign_label"])
                ),
            )
        except KeyError as exc:
            raise DataError(f"schema is missing field {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> FeatureSchema:
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except OSError as exc:
            raise DataError(f"cannot read schema {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"schema {path} is not valid JSON: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Immutable flow matrix with binary labels (1 = malicious)."""

    schema: FeatureSchema
    values: np.ndarray
    labels: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if values.ndim != 2:
            if values.size == 0:
                values = values.reshape(0, self.schema.n_features)
            else:
                raise DataError("feature values must be a 2-D matrix")
        if values.shape[1] != self.schema.n_features:
            raise DataError(
                f"values have {values.shape[1]} columns but schema has "
                f"{self.schema.n_features} features"
            )
        if values.shape[0] != labels.shape[0]:
            raise DataError("row count of values differs from number of labels")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DataError("labels must be binary (0 benign, 1 malicious)")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "labels", _readonly(labels))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return self.schema.names

    @property
    def n_malicious(self) -> int:
        return int(self.labels.sum())

    def class_counts(self) -> tuple[int, int]:
        """(benign, malicious) row counts."""
        m = self.n_malicious
        return self.n_rows - m, m

    def check(self) -> None:
        """Raise :class:`DataError` unless the cleaned-table invariants hold."""
        if not np.isfinite(self.values).all():
            raise DataError("table contains NaN or infinite values")
        for j, kind in enumerate(self.schema.kinds):
            if kind != "continuous":
                col = self.values[:, j]
                if not np.array_equal(col, np.round(col)):
                    raise DataError(
                        f"{kind} feature {self.schema.names[j]!r} has fractional values"
                    )

    def take(self, rows: np.ndarray) -> FeatureTable:
        rows = np.asarray(rows)
        return FeatureTable(self.schema, self.values[rows], self.labels[rows], dict(self.metadata))

    def select(self, names: Sequence[str]) -> FeatureTable:
        idx = [self.schema.index(n) for n in names]
        return FeatureTable(
            self.schema.subset(names), self.values[:, idx], self.labels, dict(self.metadata)
        )

    def with_values(self, values: np.ndarray) -> FeatureTable:
        return FeatureTable(self.schema, values, self.labels, dict(self.metadata))

    def equals(self, other: FeatureTable) -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.labels, other.labels)
        )

    @staticmethod
    def concat(tables: Sequence[FeatureTable]) -> FeatureTable:
        schema = tables[0].schema
        if any(t.schema != schema for t in tables[1:]):
            raise DataError("cannot concatenate tables with different schemas")
        return FeatureTable(
            schema,
            np.vstack([t.values for t in tables]),
            np.concatenate([t.labels for t in tables]),
            dict(tables[0].metadata),
        )


@dataclass(frozen=True, eq=False)
class SplitPair:
    train: FeatureTable
    holdout: FeatureTable
    seed: int
    train_index: np.ndarray | None = None
    holdout_index: np.ndarray | None = None


@dataclass
class RowIssue:
    row: int
    column: str
    token: str


# -- ingestion ---------------------------------------------------------------

_SPECIAL = {"nan": math.nan, "infinity": math.inf, "+infinity": math.inf,
            "-infinity": -math.inf, "inf": math.inf, "+inf": math.inf, "-inf": -math.inf}


def parse_cell(token: str) -> float:
    """Parse one numeric cell; raises ValueError when unparseable."""
    t = token.strip()
    special = _SPECIAL.get(t.casefold())
    if special is not None:
        return special
    if not t:
        return math.nan
    return float(t)


def load_csv(path: str | Path, schema: FeatureSchema, strict: bool = False) -> FeatureTable:
    """Read a header-first UTF-8 CSV into a table in schema column order.

    Extra columns are ignored. Cells that do not parse as numbers are fatal
    with ``strict=True``; otherwise their rows are dropped and listed in
    ``table.metadata["dropped"]``. ``NaN``/``Infinity`` tokens are kept for
    :func:`clean` to handle.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        stripped = [h.strip() for h in header]
        lookup: dict[str, int] = {}
        for i, h in enumerate(header):
            lookup.setdefault(h, i)
        for i, h in enumerate(stripped):
            lookup.setdefault(h, i)

        def col_index(name: str) -> int:
            if name in lookup:
                return lookup[name]
            if name.strip() in lookup:
                return lookup[name.strip()]
            raise DataError(f"{path}: missing column {name!r}")

        label_idx = col_index(schema.label_column)
        feat_idx = [col_index(n) for n in schema.names]
        width = len(header)

        raw_rows: list[list[str]] = []
        labels: list[int] = []
        issues: list[RowIssue] = []
        for row_no, row in enumerate(reader):
            if not row:
                continue
            if len(row) < width:
                if strict:
                    raise DataError(f"{path}: row {row_no} has {len(row)} fields, expected {width}")
                issues.append(RowIssue(row_no, "<row>", ",".join(row)))
                continue
            raw_rows.append([row[i] for i in feat_idx])
            labels.append(schema.map_label(row[label_idx]))

    n, d = len(raw_rows), schema.n_features
    values = np.empty((n, d), dtype=np.float64)
    keep = np.ones(n, dtype=bool)
    if n:
        cells = np.array(raw_rows, dtype=object)
        for j in range(d):
            col = cells[:, j]
            try:
                values[:, j] = [parse_cell(t) for t in col]
                continue
            except ValueError:
                pass
            for i, t in enumerate(col):
                try:
                    values[i, j] = parse_cell(t)
                except ValueError:
                    if strict:
                        raise DataError(
                            f"{path}: row {i}: column {schema.names[j]!r} has "
                            f"unparseable value {t!r}"
                        ) from None
                    issues.append(RowIssue(i, schema.names[j], t))
                    values[i, j] = math.nan
                    keep[i] = False
    if issues:
        logger.warning("%s: dropped %d row(s) with unparseable cells", path, len(issues))
    dropped = [{"row": r.row, "column": r.column, "token": r.token} for r in issues]
    return FeatureTable(
        schema,
        values[keep],
        np.asarray(labels, dtype=np.int64)[keep] if n else np.zeros(0, dtype=np.int64),
        {"source": str(path), "dropped": dropped},
    )


def write_csv(table: FeatureTable, path: str | Path) -> None:
    """Write ``table`` as CSV; label tokens are written as 0/1 unless the
    schema names explicit tokens."""
    schema = table.schema
    pos = schema.positive_label
    neg = schema.benign_label if schema.benign_label is not None else (
        "0" if pos == "1" else "BENIGN")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(schema.names) + [schema.label_column])
        for row, y in zip(table.values.tolist(), table.labels.tolist()):
            w.writerow([repr(v) for v in row] + [pos if y else neg])
    tmp.replace(path)


def schema_from_csv(path: str | Path, label_column: str, positive_label: str = "1",
                    benign_label: str | None = None, exclude: Sequence[str] = (),
                    sample_rows: int = 10_000) -> FeatureSchema:
    """Guess a schema from a CSV header: every column except the label and
    ``exclude`` is a feature; whole-number columns become ``integer`` (or
    ``flag`` when only 0/1 occur) and the rest ``continuous``."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for _, r in zip(range(sample_rows), reader)]
    skip = {label_column.strip(), *(e.strip() for e in exclude)}
    names, kinds = [], []
    for j, h in enumerate(header):
        if h in skip or h in names:
            continue
        vals = []
        numeric = True
        for r in rows:
            try:
                vals.append(parse_cell(r[j]))
            except (ValueError, IndexError):
                numeric = False
                break
        if not numeric:
            continue
        v = np.asarray(vals, dtype=float)
        v = v[np.isfinite(v)]
        if v.size and np.array_equal(v, np.round(v)):
            kinds.append("flag" if np.isin(v, (0.0, 1.0)).all() else "integer")
        else:
            kinds.append("continuous")
        names.append(h)
    return FeatureSchema(tuple(names), tuple(kinds), label_column.strip(), positive_label,
                         benign_label)


# -- cleaning and splitting ----------------------------------------------------

def clean(table: FeatureTable) -> FeatureTable:
    """Drop rows with NaN and clamp +/-Inf to the column's finite extrema."""
    v = table.values
    keep = ~np.isnan(v).any(axis=1)
    v = v[keep].copy()
    if v.shape[0] == 0:
        raise DataError("table is empty after cleaning")
    for j in range(v.shape[1]):
        col = v[:, j]
        inf = np.isinf(col)
        if not inf.any():
            continue
        finite = col[~inf]
        if finite.size == 0:
            raise DataError(f"column {table.schema.names[j]!r} has no finite values")
        col[col == np.inf] = finite.max()
        col[col == -np.inf] = finite.min()
    out = FeatureTable(table.schema, v, table.labels[keep], dict(table.metadata))
    out.check()
    return out


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(table: FeatureTable, train_fraction: float = 0.7, seed: int = 0) -> SplitPair:
    """Per-class shuffled split; row order inside each part follows the input."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = derive_rng(seed, "flowdata", "stratified_split")
    train_parts = []
    for c in (0, 1):
        idx = np.flatnonzero(table.labels == c)
        if idx.size < 2:
            raise DataError(f"class {c} has {idx.size} sample(s); stratification needs at least 2")
        n_train = min(max(_round_half_up(train_fraction * idx.size), 1), idx.size - 1)
        train_parts.append(rng.permutation(idx)[:n_train])
    train_idx = np.sort(np.concatenate(train_parts))
    mask = np.zeros(table.n_rows, dtype=bool)
    mask[train_idx] = True
    hold_idx = np.flatnonzero(~mask)
    return SplitPair(table.take(train_idx), table.take(hold_idx), seed, train_idx, hold_idx)


def stratified_kfold(labels: np.ndarray, n_splits: int = 5, seed: int = 0
                     ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return ``n_splits`` (train_index, validation_index) pairs with each
    class dealt round-robin over the folds after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = derive_rng(seed, "flowdata", "kfold")
    fold_of = np.empty(labels.size, dtype=np.int64)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < n_splits:
            raise DataError(
                f"class {c} has {idx.size} sample(s), fewer than {n_splits} folds"
            )
        fold_of[idx] = np.arange(idx.size) % n_splits
    return [(np.flatnonzero(fold_of != k), np.flatnonzero(fold_of == k)) for k in range(n_splits)]


# -- synthetic data ------------------------------------------------------------

def synthesize(n_rows: int = 1000, n_informative: int = 5, n_noise: int = 20,
               class_ratio: float = 0.1, seed: int = 0, separation: float = 2.0) -> FeatureTable:
    """Gaussian flow-like table with ``n_informative`` class-dependent columns.

    Informative columns are N(0, 1) for benign rows and N(+/-separation, 1)
    for malicious rows (sign alternates by column); noise columns are N(0, s)
    for both classes with per-column scales s. Exactly
    ``round(n_rows * class_ratio)`` rows are malicious. Column placement is
    shuffled; ``metadata["informative"]`` lists the informative names.
    """
    if n_informative < 1:
        raise DataError("n_informative must be at least 1")
    if n_noise < 0:
        raise DataError("n_noise must be non-negative")
    if not 0.0 < class_ratio < 1.0:
        raise DataError("class_ratio must be in (0, 1)")
    if n_rows < 2:
        raise DataError("n_rows must be at least 2")
    rng = derive_rng(seed, "flowdata", "synthesize")
    d = n_informative + n_noise
    n_mal = min(max(_round_half_up(n_rows * class_ratio), 1), n_rows - 1)
    labels = np.zeros(n_rows, dtype=np.int64)
    labels[rng.permutation(n_rows)[:n_mal]] = 1

    order = rng.permutation(d)
    informative_cols = np.sort(order[:n_informative])
    X = np.empty((n_rows, d))
    for k, j in enumerate(informative_cols):
        shift = separation if k % 2 == 0 else -separation
        X[:, j] = rng.standard_normal(n_rows) + shift * labels
    for j in np.sort(order[n_informative:]):
        X[:, j] = rng.standard_normal(n_rows) * rng.uniform(0.5, 2.0)
    names = tuple(f"f{j:02d}" for j in range(d))
    schema = FeatureSchema(names, ("continuous",) * d, "Label", "1")
    meta = {
        "informative": [names[j] for j in informative_cols],
        "generator": {"n_rows": n_rows, "n_informative": n_informative, "n_noise": n_noise,
                      "class_ratio": class_ratio, "seed": seed, "separation": separation},
    }
    return FeatureTable(schema, X, labels, meta)
