"""Typed datasets: schema declarations, CSV ingestion, and CSV export.

Columns are scalar (length n), factor (length n, levels in first-appearance
order) or matrix-valued (n x T).  Matrix columns are stored wide in CSV under
bracketed headers ``name[0] ... name[T-1]`` which must be contiguous.
Ingestion never coerces silently: any unparseable cell is a hard failure
reporting its row and column.  Missing (empty) cells are permitted only in
scalar columns and surface as NaN; the fitting layer drops such rows with a
logged count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestError, ValidationError

FORMAT_VERSION = 1

_ROLES = ("scalar", "factor", "matrix")
_BRACKET = re.compile(r"^(.*)\[(\d+)\]$")


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    role: str
    width: int = 1
    index_values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.role not in _ROLES:
            raise ValidationError(f"unknown column role {self.role!r}")
        if self.role == "matrix":
            if self.width < 1:
                raise ValidationError("matrix width must be >= 1")
            if self.index_values is not None and len(self.index_values) != self.width:
                raise ValidationError(
                    f"index_values for {self.name!r} has length "
                    f"{len(self.index_values)} but width is {self.width}"
                )
        elif self.width != 1:
            raise ValidationError(f"{self.role} column cannot declare a width")


@dataclass(frozen=True)
class DatasetSchema:
    columns: tuple[ColumnSchema, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate column names in schema")

    def __getitem__(self, name: str) -> ColumnSchema:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "role": c.role}
            if c.role == "matrix":
                d["width"] = c.width
                if c.index_values is not None:
                    d["index_values"] = list(c.index_values)
            cols.append(d)
        return {"format_version": FORMAT_VERSION, "columns": cols}

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        if d.get("format_version") != FORMAT_VERSION:
            raise IngestError(
                f"unsupported schema format_version {d.get('format_version')!r}"
            )
        cols = []
        for c in d.get("columns", []):
            iv = c.get("index_values")
            cols.append(
                ColumnSchema(
                    name=c["name"],
                    role=c["role"],
                    width=int(c.get("width", 1)),
                    index_values=None if iv is None else tuple(float(v) for v in iv),
                )
            )
        return cls(columns=tuple(cols))


def load_schema(path) -> DatasetSchema:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"schema {path}: invalid JSON ({exc})") from exc
    return DatasetSchema.from_dict(doc)


@dataclass
class Dataset:
    """In-memory typed dataset.

    ``scalars`` maps name -> float array (n,), ``factors`` maps name ->
    (codes int array (n,), levels tuple), ``matrices`` maps name -> float
    array (n, T).
    """

    schema: DatasetSchema
    n: int
    scalars: dict = field(default_factory=dict)
    factors: dict = field(default_factory=dict)
    matrices: dict = field(default_factory=dict)

    def column_info(self) -> dict:
        """name -> (role, width) mapping used by formula resolution."""
        return {c.name: (c.role, c.width) for c in self.schema.columns}

    def scalar(self, name: str) -> np.ndarray:
        if name not in self.scalars:
            raise ValidationError(f"{name!r} is not a scalar column")
        return self.scalars[name]

    def factor(self, name: str):
        if name not in self.factors:
            raise ValidationError(f"{name!r} is not a factor column")
        return self.factors[name]

    def matrix(self, name: str) -> np.ndarray:
        if name not in self.matrices:
            raise ValidationError(f"{name!r} is not a matrix column")
        return self.matrices[name]

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset (used when dropping rows with missing scalars)."""
        return Dataset(
            schema=self.schema,
            n=int(np.sum(rows)) if rows.dtype == bool else len(rows),
            scalars={k: v[rows] for k, v in self.scalars.items()},
            factors={k: (codes[rows], levels) for k, (codes, levels) in self.factors.items()},
            matrices={k: v[rows] for k, v in self.matrices.items()},
        )

    @classmethod
    def from_arrays(cls, columns: dict, index_values: dict | None = None) -> "Dataset":
        """Build a dataset from plain arrays; roles are inferred from shape
        and dtype (2-D -> matrix, non-numeric 1-D -> factor)."""
        index_values = index_values or {}
        schema_cols = []
        scalars, factors, matrices = {}, {}, {}
        n = None
        for name, values in columns.items():
            arr = np.asarray(values)
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValidationError(f"column {name!r} has {arr.shape[0]} rows, expected {n}")
            if arr.ndim == 2:
                iv = index_values.get(name)
                schema_cols.append(ColumnSchema(name, "matrix", arr.shape[1],
                                                None if iv is None else tuple(iv)))
                matrices[name] = arr.astype(float)
            elif arr.dtype.kind in "fiub":
                schema_cols.append(ColumnSchema(name, "scalar"))
                scalars[name] = arr.astype(float)
            else:
                levels, codes = np.unique(arr, return_inverse=True)
                # first-appearance order, matching CSV ingestion
                order = np.argsort([np.argmax(codes == i) for i in range(len(levels))])
                remap = np.empty(len(levels), dtype=int)
                remap[order] = np.arange(len(levels))
                schema_cols.append(ColumnSchema(name, "factor"))
                factors[name] = (remap[codes], tuple(str(l) for l in levels[order]))
            if arr.ndim > 2:
                raise ValidationError(f"column {name!r} has too many dimensions")
        return cls(schema=DatasetSchema(tuple(schema_cols)), n=n or 0,
                   scalars=scalars, factors=factors, matrices=matrices)


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise IngestError(
            f"row {row}, column {col!r}: cannot parse {cell!r} as a number"
        ) from None


def ingest(csv_path, schema_path) -> Dataset:
    """Read a CSV against a schema JSON into a typed Dataset."""
    schema = load_schema(schema_path)
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{csv_path}: empty file") from None
        rows = list(reader)

    positions = {h: i for i, h in enumerate(header)}
    if len(positions) != len(header):
        raise IngestError("duplicate CSV headers")

    # locate each schema column in the header, validating matrix contiguity
    locators = {}
    for col in schema.columns:
        if col.role == "matrix":
            first = f"{col.name}[0]"
            if first not in positions:
                raise IngestError(
                    f"matrix column {col.name!r}: header {first!r} not found"
                )
            start = positions[first]
            for t in range(col.width):
                want = f"{col.name}[{t}]"
                got = header[start + t] if start + t < len(header) else None
                if got != want:
                    raise IngestError(
                        f"matrix column {col.name!r} is ragged or not contiguous: "
                        f"expected header {want!r}, found {got!r}"
                    )
            extra = f"{col.name}[{col.width}]"
            if extra in positions:
                raise IngestError(
                    f"matrix column {col.name!r}: CSV has more than the "
                    f"declared {col.width} columns ({extra!r} present)"
                )
            locators[col.name] = ("matrix", start)
        else:
            if col.name not in positions:
                raise IngestError(f"column {col.name!r} not found in CSV header")
            locators[col.name] = (col.role, positions[col.name])

    n = len(rows)
    scalars, factors, matrices = {}, {}, {}
    for col in schema.columns:
        role, start = locators[col.name]
        if role == "scalar":
            vals = np.empty(n)
            for i, r in enumerate(rows):
                cell = r[start] if start < len(r) else ""
                vals[i] = math.nan if cell == "" else _parse_float(cell, i, col.name)
            scalars[col.name] = vals
        elif role == "factor":
            levels: list[str] = []
            seen: dict[str, int] = {}
            codes = np.empty(n, dtype=int)
            for i, r in enumerate(rows):
                cell = r[start] if start < len(r) else ""
                if cell == "":
                    raise IngestError(
                        f"row {i}, column {col.name!r}: missing factor value"
                    )
                if cell not in seen:
                    seen[cell] = len(levels)
                    levels.append(cell)
                codes[i] = seen[cell]
            factors[col.name] = (codes, tuple(levels))
        else:
            vals = np.empty((n, col.width))
            for i, r in enumerate(rows):
                for t in range(col.width):
                    j = start + t
                    cell = r[j] if j < len(r) else ""
                    if cell == "":
                        raise IngestError(
                            f"row {i}, column {col.name!r}[{t}]: missing value "
                            "(matrix cells cannot be missing)"
                        )
                    vals[i, t] = _parse_float(cell, i, f"{col.name}[{t}]")
            matrices[col.name] = vals
    return Dataset(schema=schema, n=n, scalars=scalars,
                   factors=factors, matrices=matrices)


def write_csv(dataset: Dataset, path) -> None:
    """Write a dataset wide: matrix columns under bracketed headers."""
    header = []
    getters = []
    for col in dataset.schema.columns:
        if col.role == "scalar":
            arr = dataset.scalars[col.name]
            header.append(col.name)
            getters.append(lambda i, a=arr: repr(float(a[i])))
        elif col.role == "factor":
            codes, levels = dataset.factors[col.name]
            header.append(col.name)
            getters.append(lambda i, c=codes, l=levels: l[c[i]])
        else:
            arr = dataset.matrices[col.name]
            for t in range(col.width):
                header.append(f"{col.name}[{t}]")
                getters.append(lambda i, a=arr, t=t: repr(float(a[i, t])))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            writer.writerow([g(i) for g in getters])


def write_schema(schema: DatasetSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
