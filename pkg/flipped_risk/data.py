"""Case data: schema sidecar, CSV ingestion, cleaning rules, train/test split and design matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from rich.table import Table

from flipped_risk._roles import ColumnKind, ColumnRole, Partition
from flipped_risk.errors import ColumnMismatchError, ConfigError, EmptyDataError, SchemaError
from flipped_risk.log import log

OUTCOME_CAP = 540.0
UNKNOWN_LEVEL = "unknown"
ROW_ID = "row_id"
NA_TOKENS = ["", "NA", "N/A", "NaN", "nan", "NULL", "null", "."]


@dataclass(frozen=True)
class ColumnSpec:
    """One declared column: name, storage kind and modelling role."""

    name: str
    kind: ColumnKind
    role: ColumnRole

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ColumnKind.parse(self.kind))
        object.__setattr__(self, "role", ColumnRole.parse(self.role))

    def to_line(self) -> str:
        """Render as a schema sidecar line."""
        return f"{self.name} {self.kind} {self.role}"


def validate_schema(schema: Sequence[ColumnSpec]) -> Tuple[ColumnSpec, ...]:
    """Check that names are unique and exactly one column is the outcome."""
    names = [spec.name for spec in schema]
    seen = set()
    for name in names:
        if name in seen:
            raise SchemaError(f"Duplicate column {name!r} in schema", column=name)
        seen.add(name)
    outcomes = [spec for spec in schema if spec.role is ColumnRole.OUTCOME]
    if len(outcomes) != 1:
        raise SchemaError(f"Schema must declare exactly one outcome column, found {len(outcomes)}")
    if outcomes[0].kind is ColumnKind.CATEGORICAL:
        raise SchemaError("The outcome column must be numeric", column=outcomes[0].name)
    return tuple(schema)


def parse_schema(text: str) -> Tuple[ColumnSpec, ...]:
    """Parse schema sidecar text.

    Grammar, one column per line::

        <name> <kind> <role>    # kind: categorical|numeric|enhancement-points
                                # role: outcome|relevant|irrelevant|ignored

    Blank lines and anything after `#` are ignored.
    """
    specs: List[ColumnSpec] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise SchemaError(f"Schema line {number}: expected '<name> <kind> <role>', got {raw!r}")
        name, kind, role = parts
        try:
            specs.append(ColumnSpec(name, ColumnKind.parse(kind), ColumnRole.parse(role)))
        except ValueError as error:
            raise SchemaError(f"Schema line {number}: {error}", column=name) from error
    return validate_schema(specs)


def load_schema(path: Path | str) -> Tuple[ColumnSpec, ...]:
    """Read a schema sidecar file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Schema file not found: {path}")
    return parse_schema(path.read_text(encoding="utf-8"))


def write_schema(schema: Sequence[ColumnSpec], path: Path | str) -> Path:
    """Write a schema sidecar file."""
    path = Path(path)
    lines = ["# name kind role"] + [spec.to_line() for spec in schema]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass(frozen=True, eq=False)
class Dataset:
    """Tabular case records keyed by schema names.

    Attributes:
        frame: One row per case; categorical cells are str or missing, numeric cells float.
        schema: The declared columns.
        partition: Per-row `Partition`, or None before `split`.
        parse_failures: Count of unparseable numeric cells per column.
        preprocessed: Whether the cleaning rules were applied.
    """

    frame: pd.DataFrame
    schema: Tuple[ColumnSpec, ...]
    partition: Optional[np.ndarray] = None
    parse_failures: Mapping[str, int] = field(default_factory=dict)
    preprocessed: bool = False

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def outcome_spec(self) -> ColumnSpec:
        """The outcome column."""
        return next(spec for spec in self.schema if spec.role is ColumnRole.OUTCOME)

    @property
    def outcome(self) -> np.ndarray:
        """Sentence length in months."""
        return self.frame[self.outcome_spec.name].to_numpy(dtype=float)

    @property
    def row_ids(self) -> np.ndarray:
        """Stable row identifiers."""
        return self.frame[ROW_ID].to_numpy(dtype=np.int64)

    def columns(self, role: ColumnRole | str) -> Tuple[ColumnSpec, ...]:
        """Declared columns with the given role, in schema order."""
        role = ColumnRole.parse(role)
        return tuple(spec for spec in self.schema if spec.role is role)

    def spec(self, name: str) -> ColumnSpec:
        """Look up a column by name."""
        for spec in self.schema:
            if spec.name == name:
                return spec
        raise SchemaError(f"Unknown column {name!r}", column=name)

    def complete(self, role: ColumnRole | str) -> np.ndarray:
        """Rows with every column of `role` present."""
        names = [spec.name for spec in self.columns(role)]
        if not names:
            return np.ones(len(self), dtype=bool)
        return self.frame[names].notna().all(axis=1).to_numpy()

    def mask(self, partition: Partition | str) -> np.ndarray:
        """Rows assigned to `partition`."""
        if self.partition is None:
            raise ConfigError("Dataset has not been split")
        return self.partition == Partition.parse(partition).value

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Rows selected by a boolean mask or integer index."""
        frame = self.frame.iloc[np.asarray(rows)].reset_index(drop=True)
        partition = None if self.partition is None else self.partition[np.asarray(rows)]
        return replace(self, frame=frame, partition=partition)

    def __rich__(self) -> Table:
        table = Table(title="Dataset", show_header=True, header_style="table.header")
        table.add_column("Column", style="label")
        table.add_column("Kind")
        table.add_column("Role")
        table.add_column("Missing", justify="right", style="value")
        for spec in self.schema:
            missing = int(self.frame[spec.name].isna().sum())
            table.add_row(spec.name, str(spec.kind), str(spec.role), str(missing))
        table.caption = f"{len(self)} rows"
        return table


def load_csv(path: Path | str, schema: Sequence[ColumnSpec]) -> Dataset:
    """Read a CSV (RFC-4180 quoting) and parse declared columns.

    Unparseable numeric cells become missing and are counted per column. Undeclared columns are
    dropped.
    """
    schema = validate_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Data file not found: {path}")
    try:
        raw = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_values=NA_TOKENS,
            skipinitialspace=True,
        )
    except pd.errors.EmptyDataError as error:
        raise EmptyDataError(f"Data file is empty: {path}") from error
    except pd.errors.ParserError as error:
        raise SchemaError(f"Could not parse {path}: {error}") from error

    for spec in schema:
        if spec.name not in raw.columns:
            raise SchemaError(f"Column {spec.name!r} declared in schema is missing from {path}", column=spec.name)
    if raw.empty:
        raise EmptyDataError(f"Data file has a header but no rows: {path}")

    columns: Dict[str, pd.Series] = {}
    failures: Dict[str, int] = {}
    for spec in schema:
        cells = raw[spec.name]
        if spec.kind.is_numeric:
            parsed = pd.to_numeric(cells, errors="coerce").astype(float)
            bad = int((cells.notna() & parsed.isna()).sum())
            if bad:
                failures[spec.name] = bad
                log.warning(f"{spec.name}: {bad} unparseable numeric cell(s) recorded as missing")
            columns[spec.name] = parsed
        else:
            columns[spec.name] = cells.str.strip().astype(object).where(cells.notna(), None)
    frame = pd.DataFrame(columns)
    if ROW_ID in raw.columns and ROW_ID not in columns:
        ids = pd.to_numeric(raw[ROW_ID], errors="coerce")
        if ids.notna().all() and ids.is_unique:
            frame.insert(0, ROW_ID, ids.astype(np.int64).to_numpy())
    if ROW_ID not in frame.columns:
        frame.insert(0, ROW_ID, np.arange(len(frame), dtype=np.int64))
    log.info(f"Loaded {len(frame)} rows x {len(schema)} declared columns from {path}")
    return Dataset(frame=frame, schema=schema, parse_failures=failures)


def preprocess(ds: Dataset) -> Dataset:
    """Apply the cleaning rules.

    * categorical missing -> level "unknown"
    * enhancement-points missing -> 0
    * outcome clipped to [0, 540] (life sentences coded 470 are left to the cap like any value)
    * rows with a missing outcome are dropped and counted

    Rows still missing a relevant (irrelevant) feature stay in the dataset and are left out of the
    Stage-1 (Stage-2) design by `build_design`. Applying this twice changes nothing.
    """
    frame = ds.frame.copy()
    for spec in ds.schema:
        if spec.kind is ColumnKind.CATEGORICAL:
            frame[spec.name] = frame[spec.name].where(frame[spec.name].notna(), UNKNOWN_LEVEL).astype(str)
        elif spec.kind is ColumnKind.ENHANCEMENT_POINTS:
            frame[spec.name] = frame[spec.name].fillna(0.0)

    outcome = ds.outcome_spec.name
    keep = np.isfinite(frame[outcome].to_numpy(dtype=float))
    missing = ~keep
    dropped = int(missing.sum())
    if dropped:
        log.info(f"Dropped {dropped} row(s) with a missing outcome")
    frame = frame.loc[keep].reset_index(drop=True)
    if frame.empty:
        raise EmptyDataError("No rows left after removing missing outcomes")
    capped = int((frame[outcome] > OUTCOME_CAP).sum())
    if capped:
        log.debug(f"Capped {capped} outcome value(s) at {OUTCOME_CAP:g} months")
    frame[outcome] = frame[outcome].clip(lower=0.0, upper=OUTCOME_CAP)

    partition = None if ds.partition is None else ds.partition[keep]
    cleaned = replace(ds, frame=frame, partition=partition, preprocessed=True)
    for role in (ColumnRole.RELEVANT, ColumnRole.IRRELEVANT):
        usable = int(cleaned.complete(role).sum())
        log.info(f"{usable} row(s) have every {role} factor present")
    return cleaned


def row_counts(raw: Dataset, cleaned: Dataset) -> List[Tuple[str, int]]:
    """Row accounting between loading and preprocessing."""
    return [
        ("raw", len(raw)),
        ("dropped_missing_outcome", len(raw) - len(cleaned)),
        ("preprocessed", len(cleaned)),
        ("stage1_usable", int(cleaned.complete(ColumnRole.RELEVANT).sum())),
        ("stage2_usable", int(cleaned.complete(ColumnRole.IRRELEVANT).sum())),
    ]


def split(ds: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Dataset:
    """Assign rows to train/test, deterministic given `seed`.

    floor(n * train_fraction) rows go to train, clamped so neither side is empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds)
    if n < 2:
        raise EmptyDataError(f"Cannot split {n} row(s)")
    n_train = min(max(int(math.floor(n * train_fraction + 1e-9)), 1), n - 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    partition = np.full(n, Partition.TEST.value, dtype=object)
    partition[order[:n_train]] = Partition.TRAIN.value
    log.info(f"Split {n} rows: {n_train} train / {n - n_train} test (seed {seed})")
    return replace(ds, partition=partition)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Numeric encoding of one role's factors.

    Attributes:
        column_names: Ordered expanded feature names (`FACTOR=level`, numeric names, `A=a:B=b`).
        values: Row-major matrix, one row per entry of `row_ids`.
        source: The role encoded.
        interaction_terms: Factor pairs expanded pairwise.
        factor_of: Expanded column name -> factor it came from (`A*B` for interactions).
        standardized: Whether numeric columns were standardised.
        centers: Per-column centre subtracted (0 for indicators).
        scales: Per-column scale divided (1 for indicators).
        row_ids: Dataset row ids of the rows encoded.
    """

    column_names: Tuple[str, ...]
    values: np.ndarray
    source: ColumnRole
    interaction_terms: Tuple[Tuple[str, str], ...]
    factor_of: Mapping[str, str]
    standardized: bool
    centers: np.ndarray
    scales: np.ndarray
    row_ids: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        """(rows, columns)."""
        return self.values.shape

    def take(self, rows: np.ndarray) -> "DesignMatrix":
        """Keep the rows selected by a boolean mask or integer index."""
        rows = np.asarray(rows)
        return replace(self, values=self.values[rows], row_ids=self.row_ids[rows])

    def select_ids(self, row_ids: Iterable[int]) -> "DesignMatrix":
        """Keep rows whose ids are in `row_ids`, preserving this matrix's order."""
        wanted = np.isin(self.row_ids, np.fromiter(row_ids, dtype=np.int64))
        return self.take(wanted)

    def constant_columns(self) -> List[str]:
        """Names of columns with a single value over the rows held."""
        if len(self.values) == 0:
            return list(self.column_names)
        spread = self.values.max(axis=0) - self.values.min(axis=0)
        return [name for name, width in zip(self.column_names, spread) if width == 0]

    def drop_columns(self, names: Iterable[str]) -> "DesignMatrix":
        """Remove the named columns."""
        drop = set(names)
        keep = [i for i, name in enumerate(self.column_names) if name not in drop]
        return replace(
            self,
            column_names=tuple(self.column_names[i] for i in keep),
            values=self.values[:, keep],
            factor_of={name: self.factor_of[name] for name in self.column_names if name not in drop},
            centers=self.centers[keep],
            scales=self.scales[keep],
        )


def check_columns(expected: Sequence[str], given: Sequence[str]) -> None:
    """Raise `ColumnMismatchError` naming the first column where `given` departs from `expected`."""
    expected, given = tuple(expected), tuple(given)
    if expected == given:
        return
    for want, have in zip(expected, given):
        if want != have:
            column = want if want not in given else have
            raise ColumnMismatchError(column, f"Column {column!r} does not match the fit-time columns")
    if len(given) < len(expected):
        column = expected[len(given)]
        raise ColumnMismatchError(column, f"Column {column!r} is missing")
    column = given[len(expected)]
    raise ColumnMismatchError(column, f"Column {column!r} was not present at fit time")


def _factor_blocks(
    frame: pd.DataFrame, spec: ColumnSpec
) -> Tuple[List[str], np.ndarray, List[str]]:
    """Expand one factor into (column names, block, level labels)."""
    if spec.kind is ColumnKind.CATEGORICAL:
        cells = frame[spec.name].astype(str).to_numpy()
        levels = sorted(set(cells))
        block = (cells[:, None] == np.asarray(levels, dtype=object)[None, :]).astype(float)
        return [f"{spec.name}={level}" for level in levels], block, levels
    values = frame[spec.name].to_numpy(dtype=float)
    return [spec.name], values[:, None], [spec.name]


def build_design(
    ds: Dataset,
    role: ColumnRole | str,
    interactions: Sequence[Tuple[str, str]] = (),
    standardize_numeric: bool = False,
    exclude: Sequence[str] = (),
) -> DesignMatrix:
    """Encode the factors of `role` for rows that have all of them present.

    Categorical factors get the full indicator set (no reference level dropped; the L1 fit in
    Stage 2 resolves the collinearity, and trees in Stage 1 do not care). Interaction pairs become
    products of the two factors' columns. Column order follows the schema, then `interactions`.
    """
    role = ColumnRole.parse(role)
    if not ds.preprocessed:
        raise ConfigError("build_design requires a preprocessed dataset")
    excluded = set(exclude)
    specs = [spec for spec in ds.columns(role) if spec.name not in excluded]
    by_name = {spec.name: spec for spec in specs}
    for left, right in interactions:
        for name in (left, right):
            if name not in by_name:
                raise SchemaError(f"Interaction factor {name!r} is not a {role} column", column=name)

    rows = ds.complete(role) if specs else np.ones(len(ds), dtype=bool)
    frame = ds.frame.loc[rows].reset_index(drop=True)
    dropped = int((~rows).sum())
    if dropped:
        log.info(f"{dropped} row(s) left out of the {role} design for missing factors")

    names: List[str] = []
    blocks: List[np.ndarray] = []
    factor_of: Dict[str, str] = {}
    numeric: List[bool] = []
    expanded: Dict[str, Tuple[List[str], np.ndarray]] = {}
    for spec in specs:
        cols, block, _ = _factor_blocks(frame, spec)
        expanded[spec.name] = (cols, block)
        names.extend(cols)
        blocks.append(block)
        factor_of.update({col: spec.name for col in cols})
        numeric.extend([spec.kind.is_numeric] * len(cols))

    for left, right in interactions:
        left_cols, left_block = expanded[left]
        right_cols, right_block = expanded[right]
        factor = f"{left}*{right}"
        product = (left_block[:, :, None] * right_block[:, None, :]).reshape(len(frame), -1)
        cols = [f"{a}:{b}" for a in left_cols for b in right_cols]
        names.extend(cols)
        blocks.append(product)
        factor_of.update({col: factor for col in cols})
        is_numeric = by_name[left].kind.is_numeric or by_name[right].kind.is_numeric
        numeric.extend([is_numeric] * len(cols))

    values = np.hstack(blocks) if blocks else np.empty((len(frame), 0))
    centers = np.zeros(values.shape[1])
    scales = np.ones(values.shape[1])
    if standardize_numeric:
        for j, is_numeric in enumerate(numeric):
            if not is_numeric:
                continue
            sd = values[:, j].std(ddof=1) if len(values) > 1 else 0.0
            if not sd > 0:
                raise SchemaError(f"Numeric column {names[j]!r} is constant and cannot be standardised", column=names[j])
            centers[j] = values[:, j].mean()
            scales[j] = sd
        values = (values - centers) / scales

    return DesignMatrix(
        column_names=tuple(names),
        values=values,
        source=role,
        interaction_terms=tuple((left, right) for left, right in interactions),
        factor_of=factor_of,
        standardized=standardize_numeric,
        centers=centers,
        scales=scales,
        row_ids=frame[ROW_ID].to_numpy(dtype=np.int64),
    )
