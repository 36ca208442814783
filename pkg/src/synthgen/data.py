"""Tabular ingestion: schema inference, imputation, [0,1] encoding, splits, persistence.

A :class:`RawTable` holds cells as ``float`` (numeric), ``str`` (categorical)
or ``None`` (missing). Encoding min-max scales numeric attributes and expands
categorical ones into one binary column per category value; the class
attribute is encoded like any other categorical attribute.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

NUMERIC = "numeric"
CATEGORICAL = "categorical"
SCHEMA_TAG = "synthgen-schema v1"

PathOrStream = Union[str, os.PathLike, TextIO]


class FormatError(ValueError):
    """Malformed input file; carries the offending position when known."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


@dataclass
class AttributeSpec:
    name: str
    kind: str
    categories: List[str] = field(default_factory=list)
    min: Optional[float] = None
    max: Optional[float] = None

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    @property
    def width(self) -> int:
        return 1 if self.is_numeric else len(self.categories)


@dataclass
class Schema:
    attributes: List[AttributeSpec]
    class_index: int

    def __post_init__(self):
        self.validate()

    def validate(self):
        names = [a.name for a in self.attributes]
        if any(not n for n in names):
            raise ValueError("attribute names must be non-empty")
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise ValueError(f"duplicate attribute names: {dupes}")
        if not 0 <= self.class_index < len(self.attributes):
            raise ValueError(f"class_index {self.class_index} out of range")
        for a in self.attributes:
            if a.kind not in (NUMERIC, CATEGORICAL):
                raise ValueError(f"attribute {a.name!r} has unknown kind {a.kind!r}")
            if a.kind == CATEGORICAL and not a.categories:
                raise ValueError(f"categorical attribute {a.name!r} has no categories")
            if a.kind == CATEGORICAL and len(set(a.categories)) != len(a.categories):
                raise ValueError(f"categorical attribute {a.name!r} lists a value twice")
            if a.min is not None and a.max is not None and a.min > a.max:
                raise ValueError(f"attribute {a.name!r} has min > max")
        if self.attributes[self.class_index].kind != CATEGORICAL:
            raise ValueError("the class attribute must be categorical")
        if len(self.attributes[self.class_index].categories) < 2:
            raise ValueError("the class attribute needs at least 2 distinct values")

    @property
    def names(self) -> List[str]:
        return [a.name for a in self.attributes]

    @property
    def class_attribute(self) -> AttributeSpec:
        return self.attributes[self.class_index]

    @property
    def width(self) -> int:
        return sum(a.width for a in self.attributes)

    @property
    def column_map(self) -> List[Tuple[int, Optional[int]]]:
        """Encoded column -> (attribute index, category index or None)."""
        out = []
        for i, a in enumerate(self.attributes):
            if a.is_numeric:
                out.append((i, None))
            else:
                out.extend((i, j) for j in range(len(a.categories)))
        return out

    def slices(self) -> List[slice]:
        """Encoded column range of each attribute."""
        out, start = [], 0
        for a in self.attributes:
            out.append(slice(start, start + a.width))
            start += a.width
        return out

    def column_names(self) -> List[str]:
        return [
            self.attributes[i].name if j is None else f"{self.attributes[i].name}={self.attributes[i].categories[j]}"
            for i, j in self.column_map
        ]

    def numeric_columns(self) -> List[int]:
        return [c for c, (_, j) in enumerate(self.column_map) if j is None]

    @property
    def fitted(self) -> bool:
        return all(a.min is not None and a.max is not None for a in self.attributes if a.is_numeric)

    def copy(self) -> "Schema":
        return Schema([replace(a, categories=list(a.categories)) for a in self.attributes], self.class_index)

    def fingerprint(self) -> str:
        """Stable digest of names, kinds and category orders (not the min/max)."""
        text = "|".join(f"{a.name}:{a.kind}:{','.join(a.categories)}" for a in self.attributes)
        return hashlib.sha256(f"{text}#{self.class_index}".encode("utf-8")).hexdigest()[:16]


@dataclass
class RawTable:
    schema: Schema
    rows: List[list]

    def __post_init__(self):
        width = len(self.schema.attributes)
        for r, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {r} has {len(row)} cells, schema has {width} attributes")

    def __len__(self):
        return len(self.rows)

    def column(self, index: int) -> list:
        return [row[index] for row in self.rows]

    def take(self, indices: Iterable[int]) -> "RawTable":
        return RawTable(self.schema, [list(self.rows[i]) for i in indices])

    @property
    def n_missing(self) -> int:
        return sum(cell is None for row in self.rows for cell in row)


@dataclass
class EncodedDataset:
    schema: Schema
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.schema.width:
            raise ValueError(f"matrix shape {self.matrix.shape} does not fit schema width {self.schema.width}")

    @property
    def column_map(self):
        return self.schema.column_map

    def __len__(self):
        return self.matrix.shape[0]

    def take(self, indices) -> "EncodedDataset":
        return EncodedDataset(self.schema, self.matrix[np.asarray(indices, dtype=int)])

    def features_and_labels(self) -> Tuple[np.ndarray, np.ndarray]:
        """Non-class columns and the class label as a category index."""
        cls = self.schema.slices()[self.schema.class_index]
        keep = np.ones(self.matrix.shape[1], dtype=bool)
        keep[cls] = False
        return self.matrix[:, keep], np.argmax(self.matrix[:, cls], axis=1)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    seed: np.ndarray
    eval: np.ndarray
    rng_seed: int


# -- reading ---------------------------------------------------------------


def _open_text(source: PathOrStream, mode: str = "r"):
    if hasattr(source, "read") or hasattr(source, "write"):
        return _NoClose(source)
    return open(source, mode, newline="", encoding="utf-8")


class _NoClose:
    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        return False


def _parse_real(text: str) -> Optional[float]:
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _read_cells(source: PathOrStream) -> Tuple[List[str], List[List[str]]]:
    with _open_text(source) as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty input") from None
        header = [h.strip() for h in header]
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"expected {len(header)} fields, found {len(row)}", line=reader.line_num
                )
            rows.append([c.strip() for c in row])
    return header, rows


def _resolve_class(header: Sequence[str], class_column: Union[str, int, None]) -> int:
    if class_column is None:
        return len(header) - 1
    if isinstance(class_column, int):
        if not -len(header) <= class_column < len(header):
            raise ValueError(f"class column index {class_column} out of range")
        return class_column % len(header)
    if class_column not in header:
        raise ValueError(f"class column {class_column!r} not found in header")
    return list(header).index(class_column)


def _infer(header, rows, class_column, missing, categorical) -> Schema:
    if not header or not any(header):
        raise ValueError("empty input")
    dupes = sorted(n for n, c in Counter(header).items() if c > 1)
    if dupes:
        raise ValueError(f"duplicate column names: {dupes}")
    if not rows:
        raise ValueError("input has a header but no data rows")
    class_index = _resolve_class(header, class_column)
    forced = set(categorical or ())
    attributes = []
    for i, name in enumerate(header):
        cells = [r[i] for r in rows if r[i] != missing]
        numeric = (
            i != class_index
            and name not in forced
            and all(_parse_real(c) is not None for c in cells)
        )
        if numeric:
            attributes.append(AttributeSpec(name, NUMERIC))
        else:
            attributes.append(AttributeSpec(name, CATEGORICAL, list(dict.fromkeys(cells))))
    return Schema(attributes, class_index)


def infer_schema(
    raw_csv: PathOrStream,
    class_column: Union[str, int, None] = None,
    missing: str = "?",
    categorical: Sequence[str] = (),
) -> Schema:
    """Infer attribute kinds and category orders from a CSV with a header row.

    A column is numeric when every non-missing cell parses as a finite real
    and it is neither the class column nor listed in ``categorical``.
    Category values are recorded in order of first appearance.
    """
    header, rows = _read_cells(raw_csv)
    return _infer(header, rows, class_column, missing, categorical)


def _convert(schema: Schema, rows: List[List[str]], missing: str, first_line: int = 2) -> List[list]:
    out = []
    for r, row in enumerate(rows):
        cells = []
        for i, (a, text) in enumerate(zip(schema.attributes, row)):
            if text == missing:
                cells.append(None)
            elif a.is_numeric:
                value = _parse_real(text)
                if value is None:
                    raise FormatError(f"{text!r} is not a finite number", line=first_line + r, field=i + 1)
                cells.append(value)
            else:
                if text not in a.categories:
                    raise FormatError(f"unknown category {text!r} for {a.name!r}", line=first_line + r, field=i + 1)
                cells.append(text)
        out.append(cells)
    return out


def read_table(
    source: PathOrStream,
    schema: Optional[Schema] = None,
    class_column: Union[str, int, None] = None,
    missing: str = "?",
    categorical: Sequence[str] = (),
) -> RawTable:
    """Read a CSV into a :class:`RawTable`, inferring the schema unless given."""
    header, rows = _read_cells(source)
    if schema is None:
        schema = _infer(header, rows, class_column, missing, categorical)
    elif header != schema.names:
        raise FormatError(f"header {header} does not match schema attributes {schema.names}", line=1)
    return RawTable(schema, _convert(schema, rows, missing))


def _format_cell(cell, missing: str) -> str:
    if cell is None:
        return missing
    if isinstance(cell, float):
        return repr(cell)
    return str(cell)


def write_table(table: RawTable, dest: PathOrStream, missing: str = "?") -> None:
    with _open_text(dest, "w") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(table.schema.names)
        for row in table.rows:
            w.writerow([_format_cell(c, missing) for c in row])


# -- imputation, encoding --------------------------------------------------


def impute_missing(table: RawTable) -> RawTable:
    """Mean-impute numeric cells and mode-impute categorical cells.

    Mode ties go to the value listed first in the schema.
    """
    fills = []
    for i, a in enumerate(table.schema.attributes):
        present = [c for c in table.column(i) if c is not None]
        if not present:
            raise ValueError(f"attribute {a.name!r} has no observed values")
        if a.is_numeric:
            fills.append(math.fsum(present) / len(present))
        else:
            counts = Counter(present)
            fills.append(max(a.categories, key=lambda v: (counts[v], -a.categories.index(v))))
    rows = [[fills[i] if c is None else c for i, c in enumerate(row)] for row in table.rows]
    return RawTable(table.schema, rows)


def _check_complete(table: RawTable):
    if table.n_missing:
        raise ValueError(f"table has {table.n_missing} missing cells; impute first")


def fit_encode(table: RawTable, fit_rows: Optional[Sequence[int]] = None) -> EncodedDataset:
    """Learn numeric min/max (over all rows, or only ``fit_rows``) and encode.

    Returns a dataset whose schema is a copy carrying the fitted ranges; the
    input schema is left untouched.
    """
    _check_complete(table)
    schema = table.schema.copy()
    source = table.rows if fit_rows is None else [table.rows[i] for i in fit_rows]
    if not source:
        raise ValueError("cannot fit an encoding on zero rows")
    for i, a in enumerate(schema.attributes):
        if a.is_numeric:
            values = [row[i] for row in source]
            a.min, a.max = float(min(values)), float(max(values))
    return encode(table, schema)


def encode(table: RawTable, schema: Schema) -> EncodedDataset:
    """Encode ``table`` with an already fitted ``schema``.

    Values outside the fitted range are clipped to [0, 1]; a constant
    attribute (min == max) encodes as 0.
    """
    _check_complete(table)
    if not schema.fitted:
        raise ValueError("schema has no fitted numeric ranges")
    if table.schema.names != schema.names:
        raise ValueError("table and schema attributes differ")
    n = len(table.rows)
    out = np.zeros((n, schema.width))
    for a, sl, i in zip(schema.attributes, schema.slices(), range(len(schema.attributes))):
        col = table.column(i)
        if a.is_numeric:
            values = np.asarray(col, dtype=np.float64)
            span = a.max - a.min
            out[:, sl.start] = 0.0 if span == 0 else np.clip((values - a.min) / span, 0.0, 1.0)
        else:
            lookup = {v: j for j, v in enumerate(a.categories)}
            try:
                idx = np.fromiter((lookup[v] for v in col), dtype=int, count=n)
            except KeyError as e:
                raise ValueError(f"unknown category {e.args[0]!r} for {a.name!r}") from None
            out[np.arange(n), sl.start + idx] = 1.0
    return EncodedDataset(schema, out)


def decode(rows, schema: Schema) -> RawTable:
    """Map encoded rows back to the original schema.

    Numeric columns are clipped to [0, 1] and inverse-scaled; each one-hot
    group decodes to its argmax, ties going to the lowest category index.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != schema.width:
        raise ValueError(f"encoded rows have shape {X.shape}, schema expects width {schema.width}")
    if not schema.fitted:
        raise ValueError("schema has no fitted numeric ranges")
    columns = []
    for a, sl in zip(schema.attributes, schema.slices()):
        if a.is_numeric:
            v = np.clip(X[:, sl.start], 0.0, 1.0)
            columns.append((a.min + v * (a.max - a.min)).tolist())
        else:
            idx = np.argmax(X[:, sl], axis=1)
            columns.append([a.categories[j] for j in idx])
    return RawTable(schema, [list(r) for r in zip(*columns)] if columns else [])


# -- splitting -------------------------------------------------------------


def split_25_25_50(n: int, rng_seed: int) -> SplitIndices:
    """Random 25% train / 25% seeding / 50% evaluation partition of ``range(n)``.

    The data are halved first (evaluation gets the larger half when ``n`` is
    odd) and the other half is split into train and seeding parts.
    """
    if n < 8:
        raise ValueError(f"need at least 8 instances to split, got {n}")
    perm = np.random.default_rng(rng_seed).permutation(n)
    first = n // 2
    n_train = first // 2
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        seed=np.sort(perm[n_train:first]),
        eval=np.sort(perm[first:]),
        rng_seed=rng_seed,
    )


# -- persistence -----------------------------------------------------------


def schema_to_dict(schema: Schema) -> dict:
    attrs = []
    for a in schema.attributes:
        entry = {"name": a.name, "kind": a.kind}
        if a.is_numeric:
            entry["min"] = a.min
            entry["max"] = a.max
        else:
            entry["categories"] = list(a.categories)
        attrs.append(entry)
    return {"format": SCHEMA_TAG, "class_index": schema.class_index, "attributes": attrs}


def schema_from_dict(doc) -> Schema:
    if not isinstance(doc, dict) or doc.get("format") != SCHEMA_TAG:
        found = doc.get("format") if isinstance(doc, dict) else None
        raise FormatError(f"expected format {SCHEMA_TAG!r}, found {found!r}")
    try:
        attrs = []
        for k, entry in enumerate(doc["attributes"]):
            kind = entry["kind"]
            if kind == NUMERIC:
                lo, hi = entry.get("min"), entry.get("max")
                attrs.append(AttributeSpec(
                    str(entry["name"]), kind,
                    min=None if lo is None else float(lo), max=None if hi is None else float(hi),
                ))
            else:
                attrs.append(AttributeSpec(str(entry["name"]), kind, [str(c) for c in entry["categories"]]))
        return Schema(attrs, int(doc["class_index"]))
    except (KeyError, TypeError) as e:
        raise FormatError(f"malformed schema document: {e!r}") from None


def write_schema(schema: Schema, dest: PathOrStream, extra: Optional[dict] = None) -> None:
    doc = schema_to_dict(schema)
    if extra:
        doc.update(extra)
    with _open_text(dest, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False, allow_unicode=True, default_flow_style=False)


def _load_schema_doc(source: PathOrStream) -> dict:
    with _open_text(source) as f:
        try:
            return yaml.safe_load(f)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise FormatError(str(e), line=None if mark is None else mark.line + 1) from None


def read_schema(source: PathOrStream) -> Schema:
    return schema_from_dict(_load_schema_doc(source))


def sidecar_path(path: Union[str, os.PathLike]) -> str:
    base, _ = os.path.splitext(os.fspath(path))
    return base + ".schema.yaml"


def write_encoded(ds: EncodedDataset, path: Union[str, os.PathLike]) -> None:
    """Encoded matrix as CSV (lossless float repr) plus a schema sidecar."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ds.schema.column_names())
        for row in ds.matrix:
            w.writerow([repr(float(v)) for v in row])
    write_schema(ds.schema, sidecar_path(path), extra={"rows": int(ds.matrix.shape[0])})


def read_encoded(path: Union[str, os.PathLike]) -> EncodedDataset:
    doc = _load_schema_doc(sidecar_path(path))
    schema = schema_from_dict(doc)
    header, rows = _read_cells(path)
    if header != schema.column_names():
        raise FormatError("encoded header does not match schema columns", line=1)
    matrix = np.empty((len(rows), schema.width))
    for r, row in enumerate(rows):
        for c, text in enumerate(row):
            value = _parse_real(text)
            if value is None or not 0.0 <= value <= 1.0:
                raise FormatError(f"{text!r} is not a real in [0, 1]", line=r + 2, field=c + 1)
            matrix[r, c] = value
    expected = doc.get("rows")
    if expected is not None and expected != len(rows):
        raise FormatError(f"expected {expected} rows, found {len(rows)} (truncated file?)", line=len(rows) + 2)
    return EncodedDataset(schema, matrix)


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_encode` / :func:`encode` / :func:`decode`.

    ``fit`` and ``transform`` accept a :class:`RawTable`; ``transform`` returns
    the encoded matrix and ``inverse_transform`` returns a :class:`RawTable`.
    Missing cells are imputed when ``impute`` is set.
    """

    def __init__(self, impute: bool = True):
        self.impute = impute

    def _prepare(self, table: RawTable) -> RawTable:
        if not isinstance(table, RawTable):
            raise TypeError(f"expected a RawTable, got {type(table).__name__}")
        return impute_missing(table) if self.impute and table.n_missing else table

    def fit(self, X: RawTable, y=None):
        self.schema_ = fit_encode(self._prepare(X)).schema
        self.n_features_out_ = self.schema_.width
        return self

    def transform(self, X: RawTable) -> np.ndarray:
        check_is_fitted(self, "schema_")
        return encode(self._prepare(X), self.schema_).matrix

    def inverse_transform(self, X) -> RawTable:
        check_is_fitted(self, "schema_")
        return decode(X, self.schema_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "schema_")
        return np.asarray(self.schema_.column_names(), dtype=object)
