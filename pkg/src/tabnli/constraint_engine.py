"""Key-specific logical constraints that keep (counterfactual) tables rational.

A constraint is a typed predicate over key paths within a single table, e.g.
``Born:Date <= Died:Date`` or ``Budget:Number >= 0``. Missing keys make a
constraint Inapplicable, never Violated: row deletion is a legitimate
mutation and must not strand constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    ExtractorFailedError,
    IncomparableKindsError,
    IndexOutOfRangeError,
    MissingBindingError,
    MissingKeyError,
    TemplateSyntaxError,
    UnknownKeyError,
)
from .table_model import CategorySchema, Table, TypedValue
from .template_dsl import (
    CondExpr,
    _cond_slots,
    _resolve_slot,
    eval_condition,
    parse_condition,
    print_condition,
)

SATISFIED = "Satisfied"
VIOLATED = "Violated"
INAPPLICABLE = "Inapplicable"


@dataclass(frozen=True)
class Constraint:
    id: str
    category: str
    predicate: CondExpr

    @property
    def keys(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for s in _cond_slots(self.predicate):
            seen.setdefault(s.key)
        return tuple(seen)

    def source(self) -> str:
        return print_condition(self.predicate)


@dataclass(frozen=True)
class ConstraintVerdict:
    status: str  # Satisfied | Violated | Inapplicable
    missing_keys: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status == INAPPLICABLE and not self.missing_keys:
            raise ValueError("Inapplicable verdict must name at least one missing key")

    @property
    def ok(self) -> bool:
        return self.status != VIOLATED


@dataclass(frozen=True)
class ConstraintReport:
    verdicts: tuple[tuple[Constraint, ConstraintVerdict], ...]

    @property
    def ok(self) -> bool:
        return all(v.ok for _, v in self.verdicts)

    def violated(self) -> list[Constraint]:
        return [c for c, v in self.verdicts if v.status == VIOLATED]


def parse_constraint(
    source: str,
    *,
    id: str = "anonymous",
    category: str = "",
    schema: CategorySchema | None = None,
) -> Constraint:
    """Parse a predicate like ``Born:Date <= Died:Date``.

    Key references may be bare (``Box Office:Number``) or angle-bracketed;
    ``:Date`` is an alias for the full typed value. With a schema, unknown
    keys are rejected.
    """
    if not source or not source.strip():
        raise TemplateSyntaxError("empty constraint source", 0)
    predicate = parse_condition(source)
    constraint = Constraint(id=id, category=category, predicate=predicate)
    if schema is not None:
        for key in constraint.keys:
            if schema.key_schema(key) is None:
                raise UnknownKeyError(f"constraint {id!r} references key {key!r} not in schema {schema.category!r}")
    return constraint


def load_constraints(path: str | Path, schemas: dict[str, CategorySchema] | None = None) -> list[Constraint]:
    """Read constraints from a TSV: id, category, predicate. '#' comments."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TemplateSyntaxError(f"{path.name}:{lineno}: expected 3 tab-separated fields", 0)
            cid, category, predicate = (f.strip() for f in fields)
            schema = schemas.get(category) if schemas else None
            try:
                out.append(parse_constraint(predicate, id=cid, category=category, schema=schema))
            except TemplateSyntaxError as exc:
                raise TemplateSyntaxError(f"{path.name}:{lineno}: {exc.reason}", exc.pos) from exc
    return out


def check(constraint: Constraint, table: Table) -> ConstraintVerdict:
    """Evaluate one constraint; every failure mode is a verdict, never a raise."""
    if constraint.category and constraint.category != table.category:
        return ConstraintVerdict(INAPPLICABLE, missing_keys=tuple(constraint.keys))

    values: dict[tuple[str, int], TypedValue] = {}
    counts: dict[str, int] = {}
    missing: list[str] = []
    for slot in _cond_slots(constraint.predicate):
        try:
            values[(slot.key, slot.index)] = _resolve_slot(slot, table)
            counts[slot.key] = len(table.row(slot.key).values)
        except (MissingKeyError, IndexOutOfRangeError):
            missing.append(slot.key)
    if missing:
        return ConstraintVerdict(INAPPLICABLE, missing_keys=tuple(dict.fromkeys(missing)))

    try:
        holds = eval_condition(constraint.predicate, values, counts)
    except (ExtractorFailedError, IncomparableKindsError, MissingBindingError):
        # an extraction that cannot be made is a missing extraction
        return ConstraintVerdict(INAPPLICABLE, missing_keys=tuple(constraint.keys))
    return ConstraintVerdict(SATISFIED if holds else VIOLATED)


def check_all(table: Table, constraints: Iterable[Constraint]) -> ConstraintReport:
    """Check every constraint; overall pass iff nothing is Violated."""
    return ConstraintReport(tuple((c, check(c, table)) for c in constraints))


def constraints_for(constraints: Sequence[Constraint], category: str) -> list[Constraint]:
    return [c for c in constraints if not c.category or c.category == category]
