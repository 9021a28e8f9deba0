"""Schema handling, CSV ingest, and the expanded latent-column layout.

A dataset is a set of typed columns: categorical columns are stored as
integer level codes against an ordered level list, binary/ordinal/count
columns as int64, continuous columns as float64.  Every categorical column
expands to a contiguous block of k latent indicator columns; all other
columns occupy one latent column.  The expanded width is
p_star = r + sum_c k_c.
"""
from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    LevelNotInSchemaError,
    MissingValueError,
    NonIntegerCountError,
    SchemaError,
    UnknownColumnError,
)

__all__ = [
    "Kind",
    "ColumnSchema",
    "MixedDataset",
    "ExpandedLayout",
    "load_schema",
    "load_dataset",
    "expand_layout",
    "write_csv",
    "schema_hash",
]

# Cells matching these (case-sensitive, after strip) are treated as missing.
_MISSING_TOKENS = {"", "NA", "NaN", "nan", "N/A", "null", "None"}

ORDINAL_WARN_LEVELS = 10


class Kind(str, Enum):
    CATEGORICAL = "categorical"
    BINARY = "binary"
    ORDINAL = "ordinal"
    COUNT = "count"
    CONTINUOUS = "continuous"


#: kinds modeled through the rank likelihood (one latent column each)
RANK_KINDS = (Kind.BINARY, Kind.ORDINAL, Kind.COUNT, Kind.CONTINUOUS)
#: kinds whose values are integers
INTEGER_KINDS = (Kind.BINARY, Kind.ORDINAL, Kind.COUNT)
#: kinds allowed in the response role
RESPONSE_KINDS = (Kind.ORDINAL, Kind.COUNT, Kind.CONTINUOUS)


@dataclass(frozen=True)
class ColumnSchema:
    """Declared name, kind, optional level list, and pipeline role of a column."""

    name: str
    kind: Kind
    levels: tuple[str, ...] | None = None
    role: str = "copula"

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.role not in ("copula", "response"):
            raise SchemaError(f"column '{self.name}': unknown role '{self.role}'")
        if self.kind is Kind.CATEGORICAL:
            if self.levels is None or len(self.levels) < 2:
                raise SchemaError(
                    f"column '{self.name}': categorical columns need >= 2 declared levels"
                )
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"column '{self.name}': duplicate levels")
        elif self.levels is not None:
            raise SchemaError(
                f"column '{self.name}': only categorical columns declare levels"
            )
        if self.role == "response" and self.kind not in RESPONSE_KINDS:
            raise SchemaError(
                f"column '{self.name}': response columns must be ordinal, count, "
                f"or continuous, not {self.kind.value}"
            )

    @property
    def k(self) -> int:
        """Number of levels (categorical only)."""
        if self.levels is None:
            raise SchemaError(f"column '{self.name}' is not categorical")
        return len(self.levels)

    @property
    def width(self) -> int:
        """Width of this column's latent block."""
        return len(self.levels) if self.kind is Kind.CATEGORICAL else 1


@dataclass
class MixedDataset:
    """Complete-case mixed-type table with schema-validated column arrays."""

    schema: tuple[ColumnSchema, ...]
    columns: dict[str, np.ndarray]
    n: int = field(init=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if set(self.columns) != set(names):
            extra = set(self.columns) - set(names)
            missing = set(names) - set(self.columns)
            bad = ", ".join(sorted(extra | missing))
            raise UnknownColumnError(f"columns do not match schema: {bad}")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1:
            raise SchemaError(f"columns have differing lengths: {sorted(lengths)}")
        self.n = lengths.pop()
        for col in self.schema:
            arr = np.asarray(self.columns[col.name])
            arr = self._validate_column(col, arr)
            self.columns[col.name] = arr

    @staticmethod
    def _validate_column(col: ColumnSchema, arr: np.ndarray) -> np.ndarray:
        if col.kind is Kind.CONTINUOUS:
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                row = int(np.flatnonzero(~np.isfinite(arr))[0])
                raise MissingValueError(
                    f"column '{col.name}', row {row}: non-finite value"
                )
            return arr
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.integer):
            as_int = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(as_int)):
                row = int(np.flatnonzero(~np.isfinite(as_int))[0])
                raise MissingValueError(
                    f"column '{col.name}', row {row}: non-finite value"
                )
            if np.any(as_int != np.floor(as_int)):
                row = int(np.flatnonzero(as_int != np.floor(as_int))[0])
                raise NonIntegerCountError(
                    f"column '{col.name}', row {row}: value {arr[row]!r} is not an integer"
                )
            arr = as_int.astype(np.int64)
        else:
            arr = arr.astype(np.int64)
        if col.kind is Kind.CATEGORICAL:
            bad = (arr < 0) | (arr >= col.k)
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                raise LevelNotInSchemaError(
                    f"column '{col.name}', row {row}: level code {arr[row]} outside "
                    f"declared levels (k={col.k})"
                )
        elif col.kind is Kind.BINARY:
            bad = (arr < 0) | (arr > 1)
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                raise LevelNotInSchemaError(
                    f"column '{col.name}', row {row}: binary value {arr[row]} not in {{0,1}}"
                )
        return arr

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownColumnError(f"no column named '{name}'") from None

    def col_schema(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise UnknownColumnError(f"no column named '{name}'")

    def subset(self, names) -> "MixedDataset":
        """Dataset restricted to the named columns, in the given order."""
        sub = tuple(self.col_schema(nm) for nm in names)
        return MixedDataset(sub, {nm: self.columns[nm] for nm in names})

    @property
    def copula_columns(self) -> tuple[ColumnSchema, ...]:
        return tuple(c for c in self.schema if c.role == "copula")

    @property
    def response_columns(self) -> tuple[ColumnSchema, ...]:
        return tuple(c for c in self.schema if c.role == "response")


@dataclass(frozen=True)
class ExpandedLayout:
    """Mapping from columns to contiguous latent blocks of total width p_star."""

    columns: tuple[ColumnSchema, ...]
    offsets: tuple[int, ...]
    p_star: int

    def block(self, name: str) -> slice:
        for col, off in zip(self.columns, self.offsets):
            if col.name == name:
                return slice(off, off + col.width)
        raise UnknownColumnError(f"no column named '{name}' in layout")

    @property
    def cat_columns(self) -> tuple[ColumnSchema, ...]:
        return tuple(c for c in self.columns if c.kind is Kind.CATEGORICAL)

    @property
    def rank_columns(self) -> tuple[ColumnSchema, ...]:
        return tuple(c for c in self.columns if c.kind is not Kind.CATEGORICAL)

    def cat_latent_mask(self) -> np.ndarray:
        """Boolean mask over latent columns: True inside categorical blocks."""
        mask = np.zeros(self.p_star, dtype=bool)
        for col, off in zip(self.columns, self.offsets):
            if col.kind is Kind.CATEGORICAL:
                mask[off : off + col.width] = True
        return mask

    def latent_names(self) -> list[str]:
        names = []
        for col in self.columns:
            if col.kind is Kind.CATEGORICAL:
                names.extend(f"{col.name}={lv}" for lv in col.levels)
            else:
                names.append(col.name)
        return names


def expand_layout(columns) -> ExpandedLayout:
    """Assign each column a contiguous latent block in declaration order.

    Accepts a MixedDataset (its copula-role columns are used) or an iterable
    of ColumnSchema.
    """
    if isinstance(columns, MixedDataset):
        cols = columns.copula_columns
    else:
        cols = tuple(columns)
    offsets = []
    off = 0
    for col in cols:
        offsets.append(off)
        off += col.width
    return ExpandedLayout(cols, tuple(offsets), off)


def _parse_kind(raw: str, name: str) -> Kind:
    try:
        return Kind(str(raw).strip().lower())
    except ValueError:
        raise SchemaError(
            f"column '{name}': unknown kind '{raw}' "
            f"(expected one of {[k.value for k in Kind]})"
        ) from None


def load_schema(path) -> tuple[ColumnSchema, ...]:
    """Read a schema from a YAML or JSON config file.

    The file holds a ``columns`` list (or is itself a list) of entries with
    keys ``name``, ``kind``, optional ``levels`` and ``role``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        doc = json.loads(text)
    else:
        doc = yaml.safe_load(text)
    if isinstance(doc, dict):
        entries = doc.get("columns")
        if entries is None:
            raise SchemaError(f"{path}: schema file needs a 'columns' list")
    else:
        entries = doc
    if not isinstance(entries, list) or not entries:
        raise SchemaError(f"{path}: schema 'columns' must be a non-empty list")
    out = []
    for ent in entries:
        if not isinstance(ent, dict) or "name" not in ent or "kind" not in ent:
            raise SchemaError(f"{path}: each column needs 'name' and 'kind' keys")
        name = str(ent["name"])
        kind = _parse_kind(ent["kind"], name)
        levels = ent.get("levels")
        if levels is not None:
            levels = tuple(str(lv) for lv in levels)
        out.append(
            ColumnSchema(name, kind, levels=levels, role=str(ent.get("role", "copula")))
        )
    return tuple(out)


def _convert_cell(col: ColumnSchema, raw: str, row: int):
    val = raw.strip()
    if val in _MISSING_TOKENS:
        raise MissingValueError(f"column '{col.name}', row {row}: missing value")
    if col.kind is Kind.CATEGORICAL:
        try:
            return col.levels.index(val)
        except ValueError:
            raise LevelNotInSchemaError(
                f"column '{col.name}', row {row}: level '{val}' not in schema "
                f"levels {list(col.levels)}"
            ) from None
    if col.kind is Kind.CONTINUOUS:
        try:
            return float(val)
        except ValueError:
            raise SchemaError(
                f"column '{col.name}', row {row}: cannot parse '{val}' as float"
            ) from None
    try:
        parsed = int(val)
    except ValueError:
        raise NonIntegerCountError(
            f"column '{col.name}', row {row}: cannot parse '{val}' as integer"
        ) from None
    if col.kind is Kind.BINARY and parsed not in (0, 1):
        raise LevelNotInSchemaError(
            f"column '{col.name}', row {row}: binary value {parsed} not in {{0,1}}"
        )
    return parsed


def load_dataset(csv_path, schema) -> MixedDataset:
    """Load a header-row CSV against a schema (path or ColumnSchema tuple)."""
    if isinstance(schema, (str, Path)):
        schema = load_schema(schema)
    schema = tuple(schema)
    csv_path = Path(csv_path)
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{csv_path}: empty file") from None
        header = [h.strip() for h in header]
        by_name = {c.name: c for c in schema}
        for h in header:
            if h not in by_name:
                raise UnknownColumnError(f"CSV column '{h}' not declared in schema")
        for c in schema:
            if c.name not in header:
                raise UnknownColumnError(f"schema column '{c.name}' missing from CSV")
        cols: dict[str, list] = {c.name: [] for c in schema}
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                raise SchemaError(
                    f"{csv_path}, row {row_idx}: expected {len(header)} cells, "
                    f"got {len(row)}"
                )
            for h, raw in zip(header, row):
                cols[h].append(_convert_cell(by_name[h], raw, row_idx))
    if not cols[schema[0].name]:
        raise SchemaError(f"{csv_path}: no data rows")
    arrays = {}
    for c in schema:
        dtype = np.float64 if c.kind is Kind.CONTINUOUS else np.int64
        arrays[c.name] = np.asarray(cols[c.name], dtype=dtype)
    ds = MixedDataset(schema, arrays)
    _warn_short_ordinals(ds)
    return ds


def _warn_short_ordinals(ds: MixedDataset) -> None:
    for c in ds.schema:
        if c.kind is Kind.ORDINAL:
            distinct = np.unique(ds.columns[c.name]).size
            if distinct < ORDINAL_WARN_LEVELS:
                warnings.warn(
                    f"ordinal column '{c.name}' has only {distinct} distinct values; "
                    "categorical treatment usually synthesizes such columns better",
                    UserWarning,
                    stacklevel=3,
                )


def _format_cell(col: ColumnSchema, value) -> str:
    if col.kind is Kind.CATEGORICAL:
        return col.levels[int(value)]
    if col.kind is Kind.CONTINUOUS:
        return repr(float(value))
    return str(int(value))


def write_csv(ds: MixedDataset, path) -> None:
    """Write the canonical CSV form (schema column order, labels restored)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([c.name for c in ds.schema])
        cols = [ds.columns[c.name] for c in ds.schema]
        for i in range(ds.n):
            writer.writerow(
                [_format_cell(c, col[i]) for c, col in zip(ds.schema, cols)]
            )


def schema_hash(schema) -> str:
    """Stable SHA-256 over the canonical JSON form of a schema."""
    doc = [
        {
            "name": c.name,
            "kind": c.kind.value,
            "levels": list(c.levels) if c.levels else None,
            "role": c.role,
        }
        for c in schema
    ]
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
