"""Tabular ingestion, condition binarization, and seeded splitting.

The pipeline works on a design matrix of binary condition columns plus a
trailing all-ones intercept column, a binary treatment vector T, and a
binary outcome vector y. Conditions are one binary test per column:
categorical equality/inequality or a numeric quantile interval.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

KIND_CAT_EQ = "categorical-equals"
KIND_CAT_NE = "categorical-not-equals"
KIND_INTERVAL = "numeric-interval"


@dataclass(frozen=True)
class Condition:
    """A single binary test on one source attribute."""

    attribute_id: int
    kind: str
    category: str | None = None
    lower: float | None = None
    upper: float | None = None
    closed_right: bool = False  # last quantile interval includes its upper edge

    def __post_init__(self):
        if self.kind == KIND_INTERVAL:
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise ValueError("interval condition requires lower < upper")
            if self.category is not None:
                raise ValueError("interval condition does not take a category")
        elif self.kind in (KIND_CAT_EQ, KIND_CAT_NE):
            if self.category is None:
                raise ValueError(f"{self.kind} condition requires a category")
            if self.lower is not None or self.upper is not None:
                raise ValueError(f"{self.kind} condition does not take bounds")
        else:
            raise ValueError(f"unknown condition kind {self.kind!r}")

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """Boolean mask of rows satisfying the condition."""
        if self.kind == KIND_CAT_EQ:
            return np.asarray(values) == self.category
        if self.kind == KIND_CAT_NE:
            return np.asarray(values) != self.category
        v = np.asarray(values, dtype=np.float64)
        hi = v <= self.upper if self.closed_right else v < self.upper
        return (v >= self.lower) & hi

    def describe(self, attribute_names: list[str]) -> str:
        name = attribute_names[self.attribute_id]
        if self.kind == KIND_CAT_EQ:
            return f"{name} == {self.category}"
        if self.kind == KIND_CAT_NE:
            return f"{name} != {self.category}"
        op = "<=" if self.closed_right else "<"
        return f"{self.lower:g} <= {name} {op} {self.upper:g}"


@dataclass
class RawTable:
    """A parsed table with role annotations; values are kept column-wise."""

    column_names: list[str]
    columns: dict[str, np.ndarray]
    n_rows: int
    treatment: str
    outcome: str
    numeric: tuple[str, ...]
    categorical: tuple[str, ...]


@dataclass
class Dataset:
    """Binarized design matrix with intercept, plus treatment and outcome.

    X is n x (J+1) float64 where the last column is the all-ones intercept
    and every other entry is 0/1; conditions[j] documents column j.
    """

    X: np.ndarray
    T: np.ndarray
    y: np.ndarray
    conditions: list[Condition]
    attribute_names: list[str]
    _memo: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.int8)
        self.y = np.asarray(self.y, dtype=np.int8)
        n, cols = self.X.shape
        if len(self.conditions) != cols - 1:
            raise DataError("conditions must describe every non-intercept column")
        if not np.all(self.X[:, -1] == 1.0):
            raise DataError("intercept column must be all ones")
        body = self.X[:, :-1]
        if body.size and not np.all((body == 0.0) | (body == 1.0)):
            raise DataError("condition columns must be binary")
        for name, vec in (("treatment", self.T), ("outcome", self.y)):
            if vec.shape != (n,):
                raise DataError(f"{name} vector length mismatch")
            if vec.size and not np.all((vec == 0) | (vec == 1)):
                raise DataError(f"{name} vector must be binary")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_conditions(self) -> int:
        return self.X.shape[1] - 1

    def features(self) -> np.ndarray:
        """Condition columns without the intercept (forest / mining input)."""
        return self.X[:, :-1]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[rows],
            T=self.T[rows],
            y=self.y[rows],
            conditions=self.conditions,
            attribute_names=self.attribute_names,
        )

    def condition_strings(self) -> list[str]:
        return [c.describe(self.attribute_names) for c in self.conditions]


def load_schema(path: str | Path) -> dict:
    """Read the column-role map: treatment/outcome names plus numeric/categorical lists."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"schema file is not valid JSON: {e}") from e
    for key in ("treatment", "outcome"):
        if not isinstance(raw.get(key), str):
            raise ConfigError(f"schema must name a {key!r} column")
    schema = {
        "treatment": raw["treatment"],
        "outcome": raw["outcome"],
        "numeric": list(raw.get("numeric", [])),
        "categorical": list(raw.get("categorical", [])),
    }
    declared = [schema["treatment"], schema["outcome"], *schema["numeric"], *schema["categorical"]]
    dupes = {c for c in declared if declared.count(c) > 1}
    if dupes:
        raise ConfigError(f"schema assigns multiple roles to: {sorted(dupes)}")
    return schema


def _parse_binary(value: str, column: str, row: int) -> int:
    v = value.strip()
    if v in ("0", "1"):
        return int(v)
    try:
        f = float(v)
    except ValueError:
        raise DataError(f"non-binary {column} value {value!r} at row {row}") from None
    if f in (0.0, 1.0):
        return int(f)
    raise DataError(f"non-binary {column} value {value!r} at row {row}")


def load_csv(path: str | Path, schema: dict) -> RawTable:
    """Read a UTF-8, comma-separated, header-first file under the given role map.

    Treatment and outcome values must coerce to {0,1}; missing values are
    rejected outright. Row order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("no rows: file is empty") from None
        header = [h.strip() for h in header]
        rows = [r for r in reader if r]
    if not rows:
        raise DataError("no rows: data section is empty")

    declared = [schema["treatment"], schema["outcome"], *schema["numeric"], *schema["categorical"]]
    missing = [c for c in declared if c not in header]
    if missing:
        raise DataError(f"unknown column(s) in schema: {missing}")

    col_idx = {name: header.index(name) for name in declared}
    cells: dict[str, list] = {name: [] for name in declared}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i} has {len(row)} fields, expected {len(header)}")
        for name in declared:
            value = row[col_idx[name]].strip()
            if value == "":
                raise DataError(f"missing value in column {name!r} at row {i}")
            cells[name].append(value)

    columns: dict[str, np.ndarray] = {}
    for role, name in (("treatment", schema["treatment"]), ("outcome", schema["outcome"])):
        columns[name] = np.array(
            [_parse_binary(v, role, i) for i, v in enumerate(cells[name])], dtype=np.int8
        )
    for name in schema["numeric"]:
        try:
            columns[name] = np.array([float(v) for v in cells[name]], dtype=np.float64)
        except ValueError:
            bad = next(i for i, v in enumerate(cells[name]) if not _is_float(v))
            raise DataError(f"non-numeric value in column {name!r} at row {bad}") from None
    for name in schema["categorical"]:
        columns[name] = np.array(cells[name], dtype=object)

    return RawTable(
        column_names=list(declared),
        columns=columns,
        n_rows=len(rows),
        treatment=schema["treatment"],
        outcome=schema["outcome"],
        numeric=tuple(schema["numeric"]),
        categorical=tuple(schema["categorical"]),
    )


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def _numeric_conditions(attr_id: int, values: np.ndarray, bins: int) -> list[Condition]:
    # Quantile cut points; duplicate edges collapse, so skewed attributes may
    # yield fewer than `bins` intervals.
    qs = np.quantile(values, np.arange(1, bins) / bins)
    edges = [float(values.min())]
    for q in qs:
        if float(q) > edges[-1]:
            edges.append(float(q))
    top = float(values.max())
    if top > edges[-1]:
        edges.append(top)
    if len(edges) < 3:
        return []  # one interval would be a constant column
    out = []
    for k in range(len(edges) - 1):
        out.append(
            Condition(
                attribute_id=attr_id,
                kind=KIND_INTERVAL,
                lower=edges[k],
                upper=edges[k + 1],
                closed_right=(k == len(edges) - 2),
            )
        )
    return out


def binarize(table: RawTable, bins_per_numeric: int = 3) -> Dataset:
    """Turn each attribute into binary condition columns and append an intercept.

    Categorical attributes with k levels produce k equality conditions, plus
    k inequality conditions when k > 2. Numeric attributes produce
    bins_per_numeric quantile intervals, half-open except the last. Constant
    attributes are dropped with a warning.
    """
    if bins_per_numeric < 2:
        raise DataError("bins_per_numeric must be at least 2")

    attribute_names = [n for n in table.column_names if n not in (table.treatment, table.outcome)]
    conditions: list[Condition] = []
    columns: list[np.ndarray] = []
    for attr_id, name in enumerate(attribute_names):
        values = table.columns[name]
        if name in table.numeric:
            cands = _numeric_conditions(attr_id, values, bins_per_numeric)
        else:
            levels = sorted({str(v) for v in values})
            cands = [Condition(attr_id, KIND_CAT_EQ, category=lv) for lv in levels]
            if len(levels) > 2:
                cands += [Condition(attr_id, KIND_CAT_NE, category=lv) for lv in levels]
        kept_any = False
        for cond in cands:
            mask = cond.evaluate(values)
            if mask.all() or not mask.any():
                continue  # constant condition column
            conditions.append(cond)
            columns.append(mask.astype(np.float64))
            kept_any = True
        if not kept_any:
            warnings.warn(
                f"attribute {name!r} produced no non-constant condition columns; dropped",
                stacklevel=2,
            )

    n = table.n_rows
    X = np.column_stack(columns + [np.ones(n)]) if columns else np.ones((n, 1))
    return Dataset(
        X=X,
        T=table.columns[table.treatment],
        y=table.columns[table.outcome],
        conditions=conditions,
        attribute_names=attribute_names,
    )


def part_sizes(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Largest-remainder rounding of n into len(fractions) shares summing to n."""
    if any(f <= 0 for f in fractions):
        raise DataError("all split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    raw = [f * n for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    leftovers = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in leftovers[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_indices(n: int, fractions: tuple[float, ...], seed: int) -> list[np.ndarray]:
    """Disjoint, exhaustive row partition by a seeded uniform shuffle."""
    sizes = part_sizes(n, fractions)
    if any(s == 0 for s in sizes):
        raise DataError(f"split produced an empty part: sizes {sizes} for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    out, start = [], 0
    for s in sizes:
        out.append(np.sort(perm[start : start + s]))
        start += s
    return out


def split(
    ds: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Split into (train, validation, test) with rounded shares summing to n."""
    if len(fractions) != 3:
        raise DataError("expected (train, validation, test) fractions")
    train_idx, val_idx, test_idx = split_indices(ds.n, tuple(fractions), seed)
    return ds.subset(train_idx), ds.subset(val_idx), ds.subset(test_idx)
