"""Entity-centric tables: typed values, category schemas, ingestion, statistics.

A table is an ordered list of key -> values rows plus a title and a category.
Values are typed on ingestion (date / number / entity-name / location / url /
boolean / free-text); untypeable text degrades to free-text instead of failing,
because real infobox data is dirty and generation must skip, not crash.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    DuplicateKeyError,
    EmptyTableError,
    MalformedRecordError,
    UnknownTableIdError,
)

VALUE_KINDS = ("date", "number", "entity-name", "location", "url", "boolean", "free-text")

ENTITY_TYPES = (
    "person",
    "person-type",
    "skill",
    "organization",
    "quantity",
    "date-time",
    "location",
    "event",
    "url",
    "product",
    "other",
)

MULTI_VALUE_SEPARATOR = ";"


@dataclass(frozen=True)
class TypedValue:
    """One table cell value plus its inferred type payload.

    Invariants: a date always has a year, month implies year, day implies
    month; a number's magnitude reparses from its raw form.
    """

    raw: str
    kind: str
    year: int | None = None
    month: int | None = None
    day: int | None = None
    magnitude: float | None = None
    unit: str | None = None

    def __post_init__(self):
        if self.kind not in VALUE_KINDS:
            raise ValueError(f"unknown value kind {self.kind!r}")
        if self.kind == "date":
            if self.year is None:
                raise ValueError("date value needs a year")
            if self.day is not None and self.month is None:
                raise ValueError("day implies month")
        if self.kind == "number" and self.magnitude is None:
            raise ValueError("number value needs a magnitude")

    def date_tuple(self) -> tuple[int, int | None, int | None]:
        if self.kind != "date":
            raise ValueError(f"{self.raw!r} is not a date")
        return (self.year, self.month, self.day)


@dataclass(frozen=True)
class Row:
    """One table row: a key with one or more typed values."""

    key: str
    values: tuple[TypedValue, ...]

    def __post_init__(self):
        if not self.key.strip():
            raise ValueError("row key must be non-empty")
        if not self.values:
            raise ValueError(f"row {self.key!r} has no values")


@dataclass(frozen=True)
class Table:
    """An entity-centric premise table.

    The row count is the number of keys the table realizes (the k of a
    category whose schema lists n possible keys).
    """

    id: str
    title: str
    category: str
    rows: tuple[Row, ...]
    is_counterfactual: bool = False
    parent_id: str | None = None

    def __post_init__(self):
        keys = [r.key for r in self.rows]
        dupes = [k for k, c in Counter(keys).items() if c > 1]
        if dupes:
            raise DuplicateKeyError(f"table {self.id!r} repeats keys {dupes}")
        if self.is_counterfactual != (self.parent_id is not None):
            raise ValueError("is_counterfactual must match presence of parent_id")

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(r.key for r in self.rows)

    def row(self, key: str) -> Row | None:
        for r in self.rows:
            if r.key == key:
                return r
        return None


@dataclass(frozen=True)
class KeySchema:
    """Schema entry for one key of a category."""

    key: str
    entity_type: str
    value_kind: str
    min_hypothesis_templates: int = 2
    min_premise_paraphrases: int = 3

    def __post_init__(self):
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.entity_type!r}")
        if self.value_kind not in VALUE_KINDS:
            raise ValueError(f"unknown value kind {self.value_kind!r}")


@dataclass(frozen=True)
class CategorySchema:
    """All known keys of one category; its key count is the category's n."""

    category: str
    keys: tuple[KeySchema, ...]
    _by_key: Mapping[str, KeySchema] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_key", {k.key: k for k in self.keys})

    def key_schema(self, key: str) -> KeySchema | None:
        return self._by_key.get(key)

    @property
    def key_names(self) -> tuple[str, ...]:
        return tuple(k.key for k in self.keys)


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level counts; averages are kept as exact rationals."""

    unique_key_count: int
    avg_keys_per_table: Fraction
    avg_pairs_per_table: Fraction
    label_counts: Mapping[str, int]
    table_count: int
    counterfactual_ratio: Fraction

    def to_json_dict(self) -> dict:
        def frac(f: Fraction) -> dict:
            return {"exact": f"{f.numerator}/{f.denominator}", "value": float(f)}

        return {
            "unique_key_count": self.unique_key_count,
            "avg_keys_per_table": frac(self.avg_keys_per_table),
            "avg_pairs_per_table": frac(self.avg_pairs_per_table),
            "label_counts": dict(sorted(self.label_counts.items())),
            "table_count": self.table_count,
            "counterfactual_ratio": frac(self.counterfactual_ratio),
        }


# --- value inference ------------------------------------------------------

_MONTHS = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september october november december".split()
    )
}
_MONTH_ABBREV = {name[:3]: num for name, num in _MONTHS.items()}

_DATE_MDY = re.compile(r"^([A-Za-z]+)\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{3,4})$")
_DATE_DMY = re.compile(r"^(\d{1,2})(?:st|nd|rd|th)?\s+([A-Za-z]+)\.?,?\s+(\d{3,4})$")
_DATE_MY = re.compile(r"^([A-Za-z]+)\.?,?\s+(\d{3,4})$")
_DATE_ISO = re.compile(r"^(\d{4})-(\d{2})(?:-(\d{2}))?$")
_DATE_Y = re.compile(r"^\d{3,4}$")

_NUMBER = re.compile(
    r"^(?P<cur>[$€£])?\s*(?P<mag>-?\d{1,3}(?:,\d{3})+|-?\d+(?:\.\d+)?)\s*"
    r"(?P<scale>thousand|million|billion|trillion)?\s*(?P<unit>%|[A-Za-z/²]+(?:\s[A-Za-z]+)?)?$"
)
_SCALES = {"thousand": 1e3, "million": 1e6, "billion": 1e9, "trillion": 1e12}

_URL = re.compile(r"^(https?://|www\.)\S+$", re.IGNORECASE)
_BOOL = {"yes": True, "no": False, "true": True, "false": False}

_NAME_WORD = re.compile(r"^[A-Z][\w\.'&-]*$")
_NAME_STOPWORDS = {"of", "the", "and", "for", "de", "da", "van", "von", "in", "at"}


def _month_number(word: str) -> int | None:
    w = word.lower().rstrip(".")
    return _MONTHS.get(w) or _MONTH_ABBREV.get(w[:3] if len(w) >= 3 else w)


def _try_date(raw: str) -> TypedValue | None:
    s = raw.strip()
    if m := _DATE_MDY.match(s):
        month = _month_number(m.group(1))
        if month:
            return TypedValue(raw, "date", year=int(m.group(3)), month=month, day=int(m.group(2)))
        return None
    if m := _DATE_DMY.match(s):
        month = _month_number(m.group(2))
        if month:
            return TypedValue(raw, "date", year=int(m.group(3)), month=month, day=int(m.group(1)))
        return None
    if m := _DATE_ISO.match(s):
        day = int(m.group(3)) if m.group(3) else None
        return TypedValue(raw, "date", year=int(m.group(1)), month=int(m.group(2)), day=day)
    if m := _DATE_MY.match(s):
        month = _month_number(m.group(1))
        if month:
            return TypedValue(raw, "date", year=int(m.group(2)), month=month)
        return None
    if _DATE_Y.match(s):
        return TypedValue(raw, "date", year=int(s))
    return None


def _try_number(raw: str) -> TypedValue | None:
    m = _NUMBER.match(raw.strip())
    if not m:
        return None
    mag = float(m.group("mag").replace(",", ""))
    if m.group("scale"):
        mag *= _SCALES[m.group("scale")]
    unit = None
    if m.group("cur"):
        unit = "money"
    elif m.group("unit"):
        unit = m.group("unit")
    return TypedValue(raw, "number", magnitude=mag, unit=unit)


def _looks_like_name(raw: str) -> bool:
    words = raw.strip().split()
    if not words or any(ch.isdigit() for ch in raw):
        return False
    if not _NAME_WORD.match(words[0]):
        return False
    return all(_NAME_WORD.match(w) or w.lower() in _NAME_STOPWORDS for w in words)


def infer_value(raw: str, hint: str | None = None) -> TypedValue:
    """Type a raw cell string, preferring the most specific matching kind.

    A `hint` (a schema value kind) wins whenever the raw text is readable as
    that kind; free-text is the total fallback, so this never raises on data.
    """
    if not raw or not raw.strip():
        raise ValueError("raw value must be non-empty")
    raw = raw.strip()

    if hint is not None:
        if hint == "date" and (v := _try_date(raw)):
            return v
        if hint == "number":
            if v := _try_number(raw):
                return v
            # "1927" hints back to number even though a bare year reads as a date
            if _DATE_Y.match(raw):
                return TypedValue(raw, "number", magnitude=float(raw))
        if hint == "boolean" and raw.lower() in _BOOL:
            return TypedValue(raw, "boolean")
        if hint == "url" and _URL.match(raw):
            return TypedValue(raw, "url")
        if hint == "location":
            return TypedValue(raw, "location")
        if hint == "entity-name":
            return TypedValue(raw, "entity-name")
        if hint == "free-text":
            return TypedValue(raw, "free-text")
        # unreadable under the hint: fall through to unhinted inference

    if v := _try_date(raw):
        return v
    if v := _try_number(raw):
        return v
    if _URL.match(raw):
        return TypedValue(raw, "url")
    if raw.lower() in _BOOL:
        return TypedValue(raw, "boolean")
    if _looks_like_name(raw):
        return TypedValue(raw, "entity-name")
    return TypedValue(raw, "free-text")


# --- ingestion / serialization --------------------------------------------


def split_cell(raw: str) -> list[str]:
    """Split a multi-valued cell on ';' and drop empty fragments."""
    parts = [p.strip() for p in raw.split(MULTI_VALUE_SEPARATOR)]
    return [p for p in parts if p]


def ingest_table(record: Mapping, schema: CategorySchema | None = None) -> Table:
    """Build a Table from one JSON record, typing values along the way.

    Record shape: {"id", "title", "category", "rows": [{"key", "values": [...]}]}
    with optional "is_counterfactual"/"parent_id". When a schema is given its
    value kinds act as inference hints.
    """
    if not isinstance(record, Mapping):
        raise MalformedRecordError("table record must be a JSON object")
    for fld in ("title", "category"):
        if not record.get(fld):
            raise MalformedRecordError(f"table record lacks {fld!r}")
    rows_in = record.get("rows", [])
    if not rows_in:
        raise EmptyTableError(f"table {record.get('id', '?')!r} has no rows")

    rows = []
    seen = set()
    for r in rows_in:
        key = str(r.get("key", "")).strip()
        if not key:
            raise MalformedRecordError("row lacks a key")
        if key in seen:
            raise DuplicateKeyError(f"duplicate key {key!r} in table {record.get('id', '?')!r}")
        seen.add(key)
        hint = None
        if schema is not None and (ks := schema.key_schema(key)):
            hint = ks.value_kind
        raws: list[str] = []
        for cell in r.get("values", []):
            raws.extend(split_cell(str(cell)))
        if not raws:
            raise MalformedRecordError(f"row {key!r} has no values")
        rows.append(Row(key, tuple(infer_value(raw, hint) for raw in raws)))

    return Table(
        id=str(record.get("id") or record["title"]),
        title=str(record["title"]),
        category=str(record["category"]),
        rows=tuple(rows),
        is_counterfactual=bool(record.get("is_counterfactual", False)),
        parent_id=record.get("parent_id"),
    )


def serialize_table(table: Table) -> dict:
    """Inverse of ingest_table: ingest(serialize(t)) == t."""
    rec = {
        "id": table.id,
        "title": table.title,
        "category": table.category,
        "rows": [{"key": r.key, "values": [v.raw for v in r.values]} for r in table.rows],
    }
    if table.is_counterfactual:
        rec["is_counterfactual"] = True
        rec["parent_id"] = table.parent_id
    return rec


def load_tables(path: str | Path, schemas: Mapping[str, CategorySchema] | None = None) -> list[Table]:
    """Read a corpus from a JSON-lines file (or a directory of *.json files)."""
    path = Path(path)
    records: list[Mapping] = []
    if path.is_dir():
        for p in sorted(path.glob("*.json")):
            records.append(json.loads(p.read_text(encoding="utf-8")))
    else:
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
    tables = []
    for rec in records:
        schema = schemas.get(rec.get("category", "")) if schemas else None
        tables.append(ingest_table(rec, schema))
    return tables


def write_tables(tables: Iterable[Table], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for t in tables:
            fh.write(json.dumps(serialize_table(t), ensure_ascii=False, sort_keys=True) + "\n")


def load_schemas(path: str | Path) -> dict[str, CategorySchema]:
    """Read category schemas from one JSON file or a directory of them.

    Schema shape: {"category", "keys": [{"key", "entity_type", "value_kind", ...}]}.
    """
    path = Path(path)
    raw_schemas = []
    if path.is_dir():
        for p in sorted(path.glob("*.json")):
            raw_schemas.append(json.loads(p.read_text(encoding="utf-8")))
    else:
        loaded = json.loads(path.read_text(encoding="utf-8"))
        raw_schemas = loaded if isinstance(loaded, list) else [loaded]
    out = {}
    for raw in raw_schemas:
        keys = tuple(
            KeySchema(
                key=k["key"],
                entity_type=k["entity_type"],
                value_kind=k["value_kind"],
                min_hypothesis_templates=int(k.get("min_hypothesis_templates", 2)),
                min_premise_paraphrases=int(k.get("min_premise_paraphrases", 3)),
            )
            for k in raw["keys"]
        )
        out[raw["category"]] = CategorySchema(category=raw["category"], keys=keys)
    return out


# --- statistics ------------------------------------------------------------


def corpus_stats(tables: Sequence[Table], pairs: Sequence) -> CorpusStats:
    """Count keys, tables and pairs; averages are over the tables passed in.

    Callers choose the averaging base by what they pass: originals only, or
    the expanded corpus. Unique keys are distinct (category, key) pairs.
    """
    ids = {t.id for t in tables}
    for p in pairs:
        if p.table_id not in ids:
            raise UnknownTableIdError(f"pair references unknown table {p.table_id!r}")

    n = len(tables)
    key_pairs = {(t.category, r.key) for t in tables for r in t.rows}
    total_rows = sum(len(t.rows) for t in tables)
    labels = Counter(getattr(p.label, "value", p.label) for p in pairs)
    cf = sum(1 for t in tables if t.is_counterfactual)
    return CorpusStats(
        unique_key_count=len(key_pairs),
        avg_keys_per_table=Fraction(total_rows, n) if n else Fraction(0),
        avg_pairs_per_table=Fraction(len(pairs), n) if n else Fraction(0),
        label_counts=dict(labels),
        table_count=n,
        counterfactual_ratio=Fraction(cf, n) if n else Fraction(0),
    )


def iter_category_tables(tables: Iterable[Table], category: str) -> Iterator[Table]:
    return (t for t in tables if t.category == category)
