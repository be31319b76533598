"""Rational counterfactual tables via row mutations and constraint rejection.

For each row of an original table, with probability p one applicable
operation (add a value, substitute the value, delete the row) replaces the
default Keep; absent schema keys are inserted with the same probability.
Substituted and added values come from per-(category, key) pools harvested
across the corpus, and every candidate table must pass the category's
constraints or is resampled.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from enum import Enum
from random import Random
from typing import Iterable, Mapping, Sequence

from .constraint_engine import Constraint, check_all, constraints_for
from .errors import (
    DegenerateError,
    KeyAlreadyPresentError,
    KeyNotFoundError,
    PoolExhaustedError,
)
from .table_model import CategorySchema, Row, Table, TypedValue, infer_value, serialize_table

log = logging.getLogger(__name__)


class MutationOp(Enum):
    KEEP = "Keep"
    ADD_VALUE = "AddValue"
    SUBSTITUTE = "Substitute"
    DELETE = "Delete"
    ADD_MISSING_KEY = "AddMissingKey"


@dataclass(frozen=True)
class ValuePools:
    """Distinct values per (category, key), drawn from all corpus tables.

    Pools are ordered lexicographically on raw text so that pool draws are
    reproducible across runs and platforms.
    """

    pools: Mapping[tuple[str, str], tuple[TypedValue, ...]]

    def values_for(self, category: str, key: str) -> tuple[TypedValue, ...]:
        return self.pools.get((category, key), ())

    def keys_for(self, category: str) -> list[str]:
        return sorted(k for (c, k) in self.pools if c == category)


@dataclass(frozen=True)
class MutationConfig:
    """Knobs of counterfactual creation; p is the per-row operation probability."""

    p: float = 0.3
    n_counterfactuals: int = 5
    max_attempts: int = 50
    seed: int = 0
    op_mode: str = "per-row"  # or "per-op": roll p once per (row, op) instead

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValueError("p must be in (0, 1]")
        if self.n_counterfactuals < 1:
            raise ValueError("n_counterfactuals must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.op_mode not in ("per-row", "per-op"):
            raise ValueError("op_mode must be 'per-row' or 'per-op'")


def build_pools(tables: Sequence[Table]) -> ValuePools:
    """Union all values per (category, key); dedupe on raw, sort on raw."""
    if not tables:
        raise ValueError("build_pools needs at least one table")
    acc: dict[tuple[str, str], dict[str, TypedValue]] = {}
    for t in tables:
        for row in t.rows:
            bucket = acc.setdefault((t.category, row.key), {})
            for v in row.values:
                bucket.setdefault(v.raw, v)
    return ValuePools(
        pools={
            ck: tuple(sorted(bucket.values(), key=lambda v: v.raw))
            for ck, bucket in sorted(acc.items())
        }
    )


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable per-task seed so parallel and serial runs draw identically."""
    text = f"{master_seed}|" + "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def _typed_pool_value(value: TypedValue, schema: CategorySchema | None, key: str) -> TypedValue:
    if schema is None:
        return value
    ks = schema.key_schema(key)
    if ks is None or value.kind == ks.value_kind:
        return value
    return infer_value(value.raw, ks.value_kind)


def mutate_row(
    table: Table,
    row_key: str,
    op: MutationOp,
    pools: ValuePools,
    schema: CategorySchema,
    rng: Random,
) -> Table:
    """Apply one operation to one row, returning a new table.

    Keep is the identity; AddValue appends a pool value not already present;
    Substitute replaces the whole values list with one distinct pool value;
    Delete drops the row; AddMissingKey appends a schema key the table lacks,
    with one pool value.
    """
    row = table.row(row_key)
    if op is MutationOp.ADD_MISSING_KEY:
        if row is not None:
            raise KeyAlreadyPresentError(f"key {row_key!r} already present in table {table.id!r}")
        if schema.key_schema(row_key) is None:
            raise KeyNotFoundError(f"key {row_key!r} not in schema {schema.category!r}")
    elif row is None:
        raise KeyNotFoundError(f"key {row_key!r} not in table {table.id!r}")

    if op is MutationOp.KEEP:
        return table

    if op is MutationOp.DELETE:
        return replace(table, rows=tuple(r for r in table.rows if r.key != row_key))

    pool = [_typed_pool_value(v, schema, row_key) for v in pools.values_for(table.category, row_key)]

    if op is MutationOp.ADD_VALUE:
        present = {v.raw for v in row.values}
        candidates = [v for v in pool if v.raw not in present]
        if not candidates:
            raise PoolExhaustedError(f"no new pool value for key {row_key!r}")
        new_row = Row(row_key, row.values + (rng.choice(candidates),))
        return replace(table, rows=tuple(new_row if r.key == row_key else r for r in table.rows))

    if op is MutationOp.SUBSTITUTE:
        original = [v.raw for v in row.values]
        candidates = [v for v in pool if [v.raw] != original]
        if not candidates:
            raise PoolExhaustedError(f"no distinct pool value for key {row_key!r}")
        new_row = Row(row_key, (rng.choice(candidates),))
        return replace(table, rows=tuple(new_row if r.key == row_key else r for r in table.rows))

    if op is MutationOp.ADD_MISSING_KEY:
        if not pool:
            raise PoolExhaustedError(f"empty pool for missing key {row_key!r}")
        return replace(table, rows=table.rows + (Row(row_key, (rng.choice(pool),)),))

    raise ValueError(f"unknown operation {op!r}")


def _applicable_ops(table: Table, row_key: str, pools: ValuePools) -> list[MutationOp]:
    row = table.row(row_key)
    pool = pools.values_for(table.category, row_key)
    present = {v.raw for v in row.values}
    ops = [MutationOp.DELETE]
    if any(v.raw not in present for v in pool):
        ops.append(MutationOp.ADD_VALUE)
    original = [v.raw for v in row.values]
    if any([v.raw] != original for v in pool):
        ops.append(MutationOp.SUBSTITUTE)
    return sorted(ops, key=lambda o: o.value)


def _mutate_once(
    table: Table,
    pools: ValuePools,
    schema: CategorySchema,
    cfg: MutationConfig,
    rng: Random,
) -> Table:
    out = table
    for row in table.rows:
        op = MutationOp.KEEP
        if cfg.op_mode == "per-row":
            if rng.random() < cfg.p:
                ops = _applicable_ops(out, row.key, pools)
                if ops:
                    op = rng.choice(ops)
        else:
            triggered = [o for o in _applicable_ops(out, row.key, pools) if rng.random() < cfg.p]
            if triggered:
                op = rng.choice(triggered)
        if op is not MutationOp.KEEP:
            out = mutate_row(out, row.key, op, pools, schema, rng)
    for key in schema.key_names:
        if out.row(key) is not None:
            continue
        if not pools.values_for(table.category, key):
            continue
        if rng.random() < cfg.p:
            out = mutate_row(out, key, MutationOp.ADD_MISSING_KEY, pools, schema, rng)
    return out


def generate_counterfactual(
    table: Table,
    pools: ValuePools,
    constraints: Sequence[Constraint],
    cfg: MutationConfig,
    rng: Random,
    *,
    schema: CategorySchema,
    new_id: str | None = None,
) -> Table:
    """One constraint-valid counterfactual differing from its parent.

    Whole-table resampling runs up to max_attempts; as a last resort the rows
    named by the violated constraints are reverted to the parent's state. The
    parent table object is never touched.
    """
    if table.is_counterfactual:
        raise ValueError(f"table {table.id!r} is already counterfactual")
    relevant = constraints_for(constraints, table.category)

    last_failed: Table | None = None
    for _ in range(cfg.max_attempts):
        candidate = _mutate_once(table, pools, schema, cfg, rng)
        if candidate.rows == table.rows:
            continue
        if check_all(candidate, relevant).ok:
            return _finalize(candidate, table, new_id)
        last_failed = candidate

    if last_failed is not None:
        repaired = _repair(last_failed, table, relevant)
        if repaired is not None and repaired.rows != table.rows and check_all(repaired, relevant).ok:
            return _finalize(repaired, table, new_id)

    raise DegenerateError(
        f"no constraint-satisfying counterfactual of {table.id!r} found in {cfg.max_attempts} attempts"
    )


def _repair(candidate: Table, parent: Table, constraints: Sequence[Constraint]) -> Table | None:
    """Revert the keys of violated constraints to the parent's rows."""
    report = check_all(candidate, constraints)
    offending = {k for c in report.violated() for k in c.keys}
    if not offending:
        return None
    parent_keys = set(parent.keys)
    rows = [r for r in candidate.rows if r.key not in offending]
    # re-insert parent rows for offending keys, preserving parent order
    rebuilt: list[Row] = []
    done = set()
    for pr in parent.rows:
        if pr.key in offending:
            rebuilt.append(pr)
            done.add(pr.key)
        else:
            nr = next((r for r in rows if r.key == pr.key), None)
            if nr is not None:
                rebuilt.append(nr)
                done.add(pr.key)
    for r in candidate.rows:  # keys added by the mutation, minus offenders
        if r.key not in parent_keys and r.key not in offending and r.key not in done:
            rebuilt.append(r)
    return replace(candidate, rows=tuple(rebuilt))


def _finalize(candidate: Table, parent: Table, new_id: str | None) -> Table:
    return replace(
        candidate,
        id=new_id or f"{parent.id}.cf",
        is_counterfactual=True,
        parent_id=parent.id,
    )


@dataclass(frozen=True)
class ExpansionReport:
    tables: tuple[Table, ...]
    degenerate_ids: tuple[str, ...]

    @property
    def skipped(self) -> int:
        return len(self.degenerate_ids)


def expand_corpus(
    tables: Sequence[Table],
    pools: ValuePools,
    constraints: Sequence[Constraint],
    cfg: MutationConfig,
    *,
    schemas: Mapping[str, CategorySchema],
) -> ExpansionReport:
    """Originals followed by n_counterfactuals per original.

    Each (table, i) task owns a seed derived from (cfg.seed, table id, i), so
    a parallel map would emit the identical corpus; degenerate tables are
    skipped with a warning and reported.
    """
    for t in tables:
        if t.is_counterfactual:
            raise ValueError(f"expand_corpus expects originals only, got {t.id!r}")
    out: list[Table] = list(tables)
    degenerate: list[str] = []
    for t in tables:
        schema = schemas[t.category]
        for i in range(1, cfg.n_counterfactuals + 1):
            rng = Random(derive_seed(cfg.seed, "counterfactual", t.id, i))
            try:
                out.append(
                    generate_counterfactual(
                        t, pools, constraints, cfg, rng, schema=schema, new_id=f"{t.id}.cf{i}"
                    )
                )
            except DegenerateError:
                log.warning("skipping degenerate counterfactual %s.cf%d", t.id, i)
                degenerate.append(f"{t.id}.cf{i}")
    return ExpansionReport(tables=tuple(out), degenerate_ids=tuple(degenerate))


def table_fingerprint(table: Table) -> str:
    """Canonical byte form, for parent-vs-counterfactual identity checks."""
    import json

    return json.dumps(serialize_table(table), sort_keys=True, ensure_ascii=False)
