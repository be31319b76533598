"""Hypothesis / premise-paraphrase template language.

Concrete syntax of a template body:

    <@Title>                    the subject entity (table title)
    <Key>  <Key[2]>  <Key:Year> value slots; optional 1-based index and
                                extractor (Year, Month, Day, Count, Number,
                                Location, Name)
    {a/b}                       choice between two surface alternatives;
                                an explicit comparison may follow:
                                {a/b ?? <Key:Year> < ~}
    {~TERM±W}                   pivot: an integer sampled uniformly from
                                [v-W, v+W] \\ {v} around the term's true
                                value v (also spelled {~TERM+-W})
    {THEN ?? COND :: ELSE}      conditional branch on a comparison
    BODY ?? COND                trailing condition turns the whole template
                                into a predicate (e.g. leap-year(<Born:Year>))

Conditions compare two terms with <, <=, =, !=, >=, >; terms are slot
references, numeric literals, differences (TERM - TERM), age(<Born>[, <Died>])
(floored years, month/day aware), months(<A>, <B>) (signed month gap), or ~
(the sampled pivot). leap-year(<Key:Year>) is the one unary predicate.

A choice of directional words (before/after, more/less, ...) next to a pivot
needs no explicit comparison: the first branch asserts "true value OP pivot"
with OP looked up from the word.

Note for template authors: a rule of the shape
"was released in <K[1]:Location> {before/after} ..." over two same-key rows
is expressed as a pivot over months(<K[1]>, <K[2]>).
"""

from __future__ import annotations

import calendar
import math
import re
from dataclasses import dataclass, replace
from datetime import date as _date
from pathlib import Path
from random import Random
from typing import Mapping, Sequence, Union

from .errors import (
    ExtractorFailedError,
    IncomparableKindsError,
    IndexOutOfRangeError,
    MissingBindingError,
    MissingKeyError,
    MultipleChoiceNodesError,
    TemplateSyntaxError,
    UncontrollableError,
    UnknownExtractorError,
)
from .table_model import CategorySchema, Table, TypedValue

EXTRACTORS = ("Year", "Month", "Day", "Count", "Number", "Location", "Name")

REASONING_TYPES = (
    "temporal",
    "numerical",
    "spatial",
    "kcs",
    "lookup",
    "multirow",
    "coreference",
    "lexical",
    "negation",
    "quantification",
    "named-entity",
    "syntactic",
    "subjective",
    "entity-type",
)

PURPOSES = ("hypothesis", "premise-paraphrase")

# first-branch word -> comparator of (true value, pivot) it asserts
_DIRECTION_WORDS = {
    "before": "<",
    "after": ">",
    "more": ">",
    "less": "<",
    "fewer": "<",
    "over": ">",
    "under": "<",
    "above": ">",
    "below": "<",
    "at least": ">=",
    "at most": "<=",
}

_FLIP_OP = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "=": "!=", "!=": "="}
_NEGATE_OP = {"<": ">=", ">": "<=", "<=": ">", ">=": "<", "=": "!=", "!=": "="}


# --- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    key: str
    index: int = 1
    extractor: str | None = None


@dataclass(frozen=True)
class TitleSlot:
    pass


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class NumberTerm:
    value: float


@dataclass(frozen=True)
class SlotTerm:
    slot: Slot


@dataclass(frozen=True)
class PivotRef:
    pass


@dataclass(frozen=True)
class DiffTerm:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class AgeTerm:
    born: Slot
    died: Slot | None = None


@dataclass(frozen=True)
class MonthsTerm:
    start: Slot
    end: Slot


Term = Union[NumberTerm, SlotTerm, PivotRef, DiffTerm, AgeTerm, MonthsTerm]


@dataclass(frozen=True)
class Comparison:
    left: Term
    op: str
    right: Term


@dataclass(frozen=True)
class LeapYear:
    slot: Slot


CondExpr = Union[Comparison, LeapYear]


@dataclass(frozen=True)
class Pivot:
    base: Term
    window: int


@dataclass(frozen=True)
class Choice:
    true_text: str
    false_text: str
    cond: CondExpr | None = None


@dataclass(frozen=True)
class Conditional:
    cond: CondExpr
    then_text: str
    else_text: str


Node = Union[Literal, TitleSlot, Slot, Pivot, Choice, Conditional]


@dataclass(frozen=True)
class TemplateAst:
    id: str
    category: str
    reasoning_tag: str
    purpose: str
    nodes: tuple[Node, ...]
    condition: CondExpr | None = None

    @property
    def choice(self) -> Choice | None:
        return next((n for n in self.nodes if isinstance(n, Choice)), None)

    @property
    def pivot(self) -> Pivot | None:
        return next((n for n in self.nodes if isinstance(n, Pivot)), None)

    @property
    def conditional(self) -> Conditional | None:
        return next((n for n in self.nodes if isinstance(n, Conditional)), None)

    def slots(self) -> list[Slot]:
        """Every slot the template touches: body, pivot base, conditions."""
        out = [n for n in self.nodes if isinstance(n, Slot)]
        for cond in self._conditions():
            out.extend(_cond_slots(cond))
        if self.pivot:
            out.extend(_term_slots(self.pivot.base))
        return out

    def keys_used(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for s in self.slots():
            seen.setdefault(s.key)
        return tuple(seen)

    def _conditions(self) -> list[CondExpr]:
        conds = []
        if self.condition:
            conds.append(self.condition)
        ch = self.choice
        if ch and ch.cond:
            conds.append(ch.cond)
        cd = self.conditional
        if cd:
            conds.append(cd.cond)
        return conds

    def effective_condition(self) -> CondExpr | None:
        """The single comparison that decides this template's truth."""
        cd = self.conditional
        if cd:
            return cd.cond
        ch = self.choice
        if ch:
            return ch.cond or self.condition
        return self.condition


def _term_slots(term: Term) -> list[Slot]:
    if isinstance(term, SlotTerm):
        return [term.slot]
    if isinstance(term, DiffTerm):
        return _term_slots(term.left) + _term_slots(term.right)
    if isinstance(term, AgeTerm):
        return [term.born] + ([term.died] if term.died else [])
    if isinstance(term, MonthsTerm):
        return [term.start, term.end]
    return []


def _cond_slots(cond: CondExpr) -> list[Slot]:
    if isinstance(cond, LeapYear):
        return [cond.slot]
    return _term_slots(cond.left) + _term_slots(cond.right)


# --- parsing ---------------------------------------------------------------

_SLOT_RE = re.compile(r"^(?P<key>[^\[\]:<>]+?)(?:\[(?P<index>\d+)\])?(?::(?P<ext>[A-Za-z]+))?$")
_NUM_RE = re.compile(r"^-?\d+(?:\.\d+)?$")


def _parse_slot(text: str, pos: int = 0) -> Slot:
    m = _SLOT_RE.match(text.strip())
    if not m or not m.group("key").strip():
        raise TemplateSyntaxError(f"malformed slot {text!r}", pos)
    ext = m.group("ext")
    if ext == "Date":  # alias for the full typed value, used in constraints
        ext = None
    if ext is not None and ext not in EXTRACTORS:
        raise UnknownExtractorError(f"unknown extractor {ext!r} in {text!r}", pos)
    index = int(m.group("index")) if m.group("index") else 1
    if index < 1:
        raise TemplateSyntaxError(f"slot index must be >= 1 in {text!r}", pos)
    return Slot(key=m.group("key").strip(), index=index, extractor=ext)


def _parse_angle_ref(text: str, pos: int) -> Slot:
    text = text.strip()
    if text.startswith("<") and text.endswith(">"):
        text = text[1:-1]
    return _parse_slot(text, pos)


def parse_term(text: str, pos: int = 0) -> Term:
    """Parse one condition term. Differences are left-associated."""
    s = text.strip()
    # split on a top-level " - " (not inside <...> or a function call)
    depth = 0
    split_at = -1
    for i, ch in enumerate(s):
        if ch in "<(":
            depth += 1
        elif ch in ">)":
            depth -= 1
        elif ch == "-" and depth == 0 and 0 < i < len(s) - 1 and s[i - 1] == " " and s[i + 1] == " ":
            split_at = i
    if split_at >= 0:
        return DiffTerm(parse_term(s[:split_at], pos), parse_term(s[split_at + 1 :], pos))
    if s == "~":
        return PivotRef()
    if _NUM_RE.match(s):
        return NumberTerm(float(s))
    lowered = s.lower()
    if lowered.startswith("age(") and s.endswith(")"):
        args = _split_args(s[4:-1], pos)
        if len(args) == 1:
            return AgeTerm(_parse_angle_ref(args[0], pos))
        if len(args) == 2:
            return AgeTerm(_parse_angle_ref(args[0], pos), _parse_angle_ref(args[1], pos))
        raise TemplateSyntaxError(f"age() takes 1 or 2 slots, got {len(args)}", pos)
    if lowered.startswith("months(") and s.endswith(")"):
        args = _split_args(s[7:-1], pos)
        if len(args) != 2:
            raise TemplateSyntaxError("months() takes exactly 2 slots", pos)
        return MonthsTerm(_parse_angle_ref(args[0], pos), _parse_angle_ref(args[1], pos))
    return SlotTerm(_parse_angle_ref(s, pos))


def _split_args(text: str, pos: int) -> list[str]:
    args = [a.strip() for a in text.split(",")]
    if any(not a for a in args):
        raise TemplateSyntaxError(f"empty argument in {text!r}", pos)
    return args


_CMP_RE = re.compile(r"(<=|>=|!=|==|=|<|>)")


def parse_condition(text: str, pos: int = 0) -> CondExpr:
    s = text.strip()
    lowered = s.lower()
    if lowered.startswith("leap-year(") and s.endswith(")"):
        return LeapYear(_parse_angle_ref(s[10:-1], pos))
    # find the comparator outside <...> (slot refs may not contain operators,
    # but key names could in principle contain '<'; scan at angle depth 0)
    depth = 0
    i = 0
    while i < len(s):
        ch = s[i]
        # '<' opens a slot ref unless it reads as a comparator ("< " or "<=")
        if ch == "<" and (i + 1 >= len(s) or s[i + 1] not in "= "):
            depth += 1
            i += 1
            continue
        if ch == ">" and depth > 0:
            depth -= 1
            i += 1
            continue
        if depth == 0:
            m = _CMP_RE.match(s, i)
            if m:
                op = "=" if m.group(1) == "==" else m.group(1)
                left = parse_term(s[: m.start()], pos)
                right = parse_term(s[m.end() :], pos)
                return Comparison(left, op, right)
        i += 1
    raise TemplateSyntaxError(f"no comparator in condition {text!r}", pos)


def _split_top_level(text: str, sep: str) -> list[str]:
    """Split on a separator that occurs outside { } and < >."""
    parts = []
    depth = 0
    start = 0
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "{<":
            depth += 1
        elif ch in "}>":
            depth -= 1
        elif depth == 0 and text.startswith(sep, i):
            parts.append(text[start:i])
            i += len(sep)
            start = i
            continue
        i += 1
    parts.append(text[start:])
    return parts


def _parse_brace(inner: str, pos: int) -> Node:
    if inner.startswith("~"):
        body = inner[1:]
        sep = "±" if "±" in body else "+-" if "+-" in body else None
        if sep is None:
            raise TemplateSyntaxError(f"pivot lacks ±W window in {{{inner}}}", pos)
        base_text, _, w_text = body.rpartition(sep)
        if not w_text.strip().isdigit():
            raise TemplateSyntaxError(f"pivot window must be a positive integer in {{{inner}}}", pos)
        window = int(w_text)
        if window < 1:
            raise TemplateSyntaxError(f"pivot window must be >= 1 in {{{inner}}}", pos)
        return Pivot(base=parse_term(base_text, pos), window=window)
    if "::" in inner:
        head, _, else_text = inner.partition("::")
        then_text, qq, cond_text = head.partition("??")
        if not qq:
            raise TemplateSyntaxError(f"conditional lacks '??' in {{{inner}}}", pos)
        return Conditional(
            cond=parse_condition(cond_text, pos),
            then_text=then_text.strip(),
            else_text=else_text.strip(),
        )
    body, qq, cond_text = inner.partition("??")
    cond = parse_condition(cond_text, pos) if qq else None
    true_text, slash, false_text = body.partition("/")
    if not slash:
        raise TemplateSyntaxError(f"brace group is neither pivot, choice nor conditional: {{{inner}}}", pos)
    return Choice(true_text=true_text.strip(), false_text=false_text.strip(), cond=cond)


def parse_template(
    source: str,
    *,
    id: str = "anonymous",
    category: str = "",
    reasoning_tag: str = "lookup",
    purpose: str = "hypothesis",
) -> TemplateAst:
    """Parse a template body (optionally with a trailing ' ?? COND')."""
    if not source or not source.strip():
        raise TemplateSyntaxError("empty template source", 0)
    if purpose not in PURPOSES:
        raise TemplateSyntaxError(f"unknown purpose {purpose!r}", 0)

    parts = _split_top_level(source, " ?? ")
    if len(parts) > 2:
        raise TemplateSyntaxError("more than one top-level '??' condition", source.find(" ?? "))
    body = parts[0]
    condition = parse_condition(parts[1], len(parts[0])) if len(parts) == 2 else None

    nodes: list[Node] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "<":
            end = body.find(">", i)
            if end < 0:
                raise TemplateSyntaxError("unclosed '<'", i)
            inner = body[i + 1 : end]
            if inner.strip() == "@Title":
                nodes.append(TitleSlot())
            else:
                nodes.append(_parse_slot(inner, i))
            i = end + 1
        elif ch == "{":
            end = body.find("}", i)
            if end < 0:
                raise TemplateSyntaxError("unclosed '{'", i)
            nodes.append(_parse_brace(body[i + 1 : end], i))
            i = end + 1
        elif ch in "}>":
            raise TemplateSyntaxError(f"unmatched {ch!r}", i)
        else:
            j = i
            while j < len(body) and body[j] not in "<{}>":
                j += 1
            nodes.append(Literal(body[i:j]))
            i = j

    tpl = TemplateAst(
        id=id,
        category=category,
        reasoning_tag=reasoning_tag,
        purpose=purpose,
        nodes=tuple(nodes),
        condition=condition,
    )
    _validate(tpl, source)
    return _attach_implicit_choice_cond(tpl)


def _validate(tpl: TemplateAst, source: str) -> None:
    choices = [n for n in tpl.nodes if isinstance(n, Choice)]
    if len(choices) > 1:
        raise MultipleChoiceNodesError(f"{len(choices)} choice nodes in one template", source.find("{"))
    pivots = [n for n in tpl.nodes if isinstance(n, Pivot)]
    if len(pivots) > 1:
        raise TemplateSyntaxError("at most one pivot per template", source.find("{~"))
    if pivots and isinstance(pivots[0].base, PivotRef):
        raise TemplateSyntaxError("pivot base cannot reference the pivot", 0)
    if tpl.purpose == "premise-paraphrase" and (choices or pivots):
        raise TemplateSyntaxError("premise paraphrases restate facts: no choice or pivot allowed", 0)
    if len([n for n in tpl.nodes if isinstance(n, Conditional)]) > 1:
        raise TemplateSyntaxError("at most one conditional per template", 0)


def _attach_implicit_choice_cond(tpl: TemplateAst) -> TemplateAst:
    """Give a bare directional choice next to a pivot its comparison."""
    ch = tpl.choice
    if ch is None or ch.cond is not None or tpl.condition is not None:
        return tpl
    pv = tpl.pivot
    op = _DIRECTION_WORDS.get(ch.true_text.lower())
    if pv is None or op is None:
        return tpl
    cond = Comparison(pv.base, op, PivotRef())
    nodes = tuple(replace(n, cond=cond) if n is ch else n for n in tpl.nodes)
    return replace(tpl, nodes=nodes)


# --- pretty printing --------------------------------------------------------


def print_term(term: Term) -> str:
    if isinstance(term, NumberTerm):
        v = term.value
        return str(int(v)) if float(v).is_integer() else str(v)
    if isinstance(term, SlotTerm):
        return _print_slot(term.slot)
    if isinstance(term, PivotRef):
        return "~"
    if isinstance(term, DiffTerm):
        return f"{print_term(term.left)} - {print_term(term.right)}"
    if isinstance(term, AgeTerm):
        if term.died:
            return f"age({_print_slot(term.born)}, {_print_slot(term.died)})"
        return f"age({_print_slot(term.born)})"
    if isinstance(term, MonthsTerm):
        return f"months({_print_slot(term.start)}, {_print_slot(term.end)})"
    raise TypeError(f"not a term: {term!r}")


def _print_slot(slot: Slot) -> str:
    text = slot.key
    if slot.index != 1:
        text += f"[{slot.index}]"
    if slot.extractor:
        text += f":{slot.extractor}"
    return f"<{text}>"


def print_condition(cond: CondExpr) -> str:
    if isinstance(cond, LeapYear):
        return f"leap-year({_print_slot(cond.slot)})"
    return f"{print_term(cond.left)} {cond.op} {print_term(cond.right)}"


def pretty_print(tpl: TemplateAst) -> str:
    """Reconstruct template source; parse(pretty_print(t)) == t."""
    out = []
    implicit = _has_implicit_choice_cond(tpl)
    for n in tpl.nodes:
        if isinstance(n, Literal):
            out.append(n.text)
        elif isinstance(n, TitleSlot):
            out.append("<@Title>")
        elif isinstance(n, Slot):
            out.append(_print_slot(n))
        elif isinstance(n, Pivot):
            out.append(f"{{~{print_term(n.base)}±{n.window}}}")
        elif isinstance(n, Choice):
            if n.cond is None or implicit:
                out.append(f"{{{n.true_text}/{n.false_text}}}")
            else:
                out.append(f"{{{n.true_text}/{n.false_text} ?? {print_condition(n.cond)}}}")
        elif isinstance(n, Conditional):
            out.append(f"{{{n.then_text} ?? {print_condition(n.cond)} :: {n.else_text}}}")
    if tpl.condition is not None:
        out.append(f" ?? {print_condition(tpl.condition)}")
    return "".join(out)


def _has_implicit_choice_cond(tpl: TemplateAst) -> bool:
    ch, pv = tpl.choice, tpl.pivot
    if ch is None or ch.cond is None or pv is None:
        return False
    op = _DIRECTION_WORDS.get(ch.true_text.lower())
    return op is not None and ch.cond == Comparison(pv.base, op, PivotRef())


# --- template files ---------------------------------------------------------


def load_templates(path: str | Path) -> list[TemplateAst]:
    """Read templates from a TSV: id, category, reasoning_tag, purpose, body."""
    path = Path(path)
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise TemplateSyntaxError(
                    f"{path.name}:{lineno}: expected 5 tab-separated fields, got {len(fields)}", 0
                )
            tpl_id, category, tag, purpose, body = (f.strip() for f in fields[:4] + [fields[4]])
            if tag not in REASONING_TYPES:
                raise TemplateSyntaxError(f"{path.name}:{lineno}: unknown reasoning tag {tag!r}", 0)
            try:
                out.append(parse_template(body, id=tpl_id, category=category, reasoning_tag=tag, purpose=purpose))
            except TemplateSyntaxError as exc:
                raise TemplateSyntaxError(f"{path.name}:{lineno}: {exc.reason}", exc.pos) from exc
    return out


def validate_against_schema(tpl: TemplateAst, schema: CategorySchema) -> list[str]:
    """Return one message per slot key that the category schema lacks."""
    problems = []
    for slot in tpl.slots():
        if schema.key_schema(slot.key) is None:
            problems.append(f"template {tpl.id!r} references key {slot.key!r} not in schema {schema.category!r}")
    return problems


# --- binding ----------------------------------------------------------------


@dataclass(frozen=True)
class Binding:
    """Resolved values for one (template, table) application.

    `values` maps (key, index) to the bound typed value, `counts` carries the
    per-key value counts for the Count extractor, `pivot` the sampled pivot
    literal, and `cond_holds` whether the template's comparison holds for the
    bound (true) values.
    """

    title: str
    values: Mapping[tuple[str, int], TypedValue]
    counts: Mapping[str, int]
    pivot: int | None = None
    cond_holds: bool | None = None
    reference_date: _date | None = None


def _leap_year(year: int) -> bool:
    return calendar.isleap(year)


def _extract(tv: TypedValue, extractor: str | None, counts: Mapping[str, int], key: str):
    """Evaluate a slot extraction to a tagged comparable value."""
    if extractor is None:
        if tv.kind == "date":
            return ("date", tv.date_tuple())
        if tv.kind == "number":
            return ("num", tv.magnitude)
        return ("text", tv.raw)
    if extractor == "Year":
        if tv.kind != "date":
            raise ExtractorFailedError(f"Year extractor on {tv.kind} value {tv.raw!r}")
        return ("num", float(tv.year))
    if extractor == "Month":
        if tv.kind != "date" or tv.month is None:
            raise ExtractorFailedError(f"Month extractor on {tv.raw!r}")
        return ("num", float(tv.month))
    if extractor == "Day":
        if tv.kind != "date" or tv.day is None:
            raise ExtractorFailedError(f"Day extractor on {tv.raw!r}")
        return ("num", float(tv.day))
    if extractor == "Count":
        return ("num", float(counts[key]))
    if extractor == "Number":
        if tv.kind == "number":
            return ("num", tv.magnitude)
        if tv.kind == "date":
            if tv.month is None and tv.day is None:  # a bare year cell still counts
                return ("num", float(tv.year))
            raise ExtractorFailedError(f"Number extractor on full date {tv.raw!r}")
        m = re.search(r"-?\d+(?:\.\d+)?", tv.raw.replace(",", ""))
        if not m:
            raise ExtractorFailedError(f"Number extractor on {tv.raw!r}")
        return ("num", float(m.group(0)))
    if extractor == "Location":
        m = re.search(r"\(([^)]+)\)", tv.raw)
        if m:
            return ("text", m.group(1).strip())
        if tv.kind in ("location", "entity-name"):
            return ("text", tv.raw)
        raise ExtractorFailedError(f"Location extractor on {tv.raw!r}")
    if extractor == "Name":
        return ("text", tv.raw)
    raise ExtractorFailedError(f"unknown extractor {extractor!r}")


def _resolve_slot(slot: Slot, table: Table) -> TypedValue:
    row = table.row(slot.key)
    if row is None:
        raise MissingKeyError(slot.key)
    if slot.index > len(row.values):
        raise IndexOutOfRangeError(
            f"index {slot.index} out of range for key {slot.key!r} ({len(row.values)} values)"
        )
    return row.values[slot.index - 1]


def _age_years(born: tuple, died: tuple) -> float:
    y1, m1, d1 = born
    y2, m2, d2 = died
    years = y2 - y1
    if m1 is not None and m2 is not None:
        if (m2, d2 or 1) < (m1, d1 or 1):
            years -= 1
    return float(years)


def _term_value(
    term: Term,
    values: Mapping[tuple[str, int], TypedValue],
    counts: Mapping[str, int],
    pivot: int | None,
    reference_date: _date | None,
):
    if isinstance(term, NumberTerm):
        return ("num", term.value)
    if isinstance(term, PivotRef):
        if pivot is None:
            raise MissingBindingError("condition references the pivot but none is bound")
        return ("num", float(pivot))
    if isinstance(term, SlotTerm):
        s = term.slot
        if (s.key, s.index) not in values:
            raise MissingBindingError(f"no bound value for {s.key!r}[{s.index}]")
        return _extract(values[(s.key, s.index)], s.extractor, counts, s.key)
    if isinstance(term, DiffTerm):
        lk, lv = _term_value(term.left, values, counts, pivot, reference_date)
        rk, rv = _term_value(term.right, values, counts, pivot, reference_date)
        if lk == "date" and rk == "date":
            return ("num", float(lv[0] - rv[0]))
        if lk == "num" and rk == "num":
            return ("num", lv - rv)
        raise IncomparableKindsError(f"cannot subtract {rk} from {lk}")
    if isinstance(term, AgeTerm):
        bk, bv = _term_value(SlotTerm(replace(term.born, extractor=None)), values, counts, pivot, reference_date)
        if bk != "date":
            raise ExtractorFailedError("age() needs a date for the first slot")
        if term.died is not None:
            dk, dv = _term_value(SlotTerm(replace(term.died, extractor=None)), values, counts, pivot, reference_date)
            if dk != "date":
                raise ExtractorFailedError("age() needs a date for the second slot")
        elif reference_date is not None:
            dv = (reference_date.year, reference_date.month, reference_date.day)
        else:
            raise ExtractorFailedError("age() with one slot needs a reference date")
        return ("num", _age_years(bv, dv))
    if isinstance(term, MonthsTerm):
        sk, sv = _term_value(SlotTerm(replace(term.start, extractor=None)), values, counts, pivot, reference_date)
        ek, ev = _term_value(SlotTerm(replace(term.end, extractor=None)), values, counts, pivot, reference_date)
        if sk != "date" or ek != "date" or sv[1] is None or ev[1] is None:
            raise ExtractorFailedError("months() needs two dates with months")
        return ("num", float((ev[0] - sv[0]) * 12 + (ev[1] - sv[1])))
    raise TypeError(f"not a term: {term!r}")


def _compare(left, op: str, right) -> bool:
    lk, lv = left
    rk, rv = right
    if lk == "date" and rk == "num" and float(rv).is_integer():
        lk, lv = "num", float(lv[0])
    if rk == "date" and lk == "num" and float(lv).is_integer():
        rk, rv = "num", float(rv[0])
    if lk == "date" and rk == "date":
        # mixed granularities compare at the coarsest common precision
        fields = 1
        if lv[1] is not None and rv[1] is not None:
            fields = 2
            if lv[2] is not None and rv[2] is not None:
                fields = 3
        lv, rv = lv[:fields], rv[:fields]
    elif lk != rk:
        raise IncomparableKindsError(f"cannot compare {lk} with {rk}")
    elif lk == "text" and op not in ("=", "!="):
        raise IncomparableKindsError(f"text values only support = and !=, not {op!r}")
    if op == "<":
        return lv < rv
    if op == "<=":
        return lv <= rv
    if op == "=":
        return lv == rv
    if op == "!=":
        return lv != rv
    if op == ">=":
        return lv >= rv
    if op == ">":
        return lv > rv
    raise ValueError(f"unknown comparator {op!r}")


def eval_condition(
    cond: CondExpr,
    values: Mapping[tuple[str, int], TypedValue],
    counts: Mapping[str, int],
    pivot: int | None = None,
    reference_date: _date | None = None,
) -> bool:
    if isinstance(cond, LeapYear):
        kind, v = _term_value(SlotTerm(replace(cond.slot, extractor="Year")), values, counts, pivot, reference_date)
        return _leap_year(int(v))
    left = _term_value(cond.left, values, counts, pivot, reference_date)
    right = _term_value(cond.right, values, counts, pivot, reference_date)
    return _compare(left, cond.op, right)


def pivot_candidates(tpl: TemplateAst, values, counts, reference_date=None) -> list[int]:
    """Integer pivot candidates: [v-W, v+W] minus the true value itself."""
    pv = tpl.pivot
    kind, v = _term_value(pv.base, values, counts, None, reference_date)
    if kind == "date":
        v = float(v[0])
    if kind == "text":
        raise ExtractorFailedError(f"pivot base of template {tpl.id!r} is not numeric")
    lo, hi = v - pv.window, v + pv.window
    base_slots = _term_slots(pv.base)
    if any(s.extractor == "Count" for s in base_slots) or isinstance(pv.base, (AgeTerm, MonthsTerm)):
        lo = max(lo, 0.0)  # negative counts and ages are not rational claims
    return [i for i in range(math.ceil(lo), math.floor(hi) + 1) if float(i) != v]


def bind(
    tpl: TemplateAst,
    table: Table,
    rng: Random,
    *,
    reference_date: _date | None = None,
    pivot_override: int | None = None,
) -> Binding:
    """Resolve every slot of the template against the table.

    A missing key or failing extraction raises, which callers treat as "this
    template does not apply to this table". The pivot, when present, is drawn
    uniformly from the candidate window (or pinned via pivot_override).
    """
    if tpl.category and tpl.category != table.category:
        raise MissingKeyError(f"template category {tpl.category!r} != table category {table.category!r}")

    values: dict[tuple[str, int], TypedValue] = {}
    counts: dict[str, int] = {}
    for slot in tpl.slots():
        tv = _resolve_slot(slot, table)
        values[(slot.key, slot.index)] = tv
        counts[slot.key] = len(table.row(slot.key).values)
        _extract(tv, slot.extractor, counts, slot.key)  # fail fast on inapplicable extractors

    pivot = None
    if tpl.pivot is not None:
        cands = pivot_candidates(tpl, values, counts, reference_date)
        if not cands:
            raise ExtractorFailedError(f"empty pivot window for template {tpl.id!r}")
        if pivot_override is not None:
            if pivot_override not in cands:
                raise ValueError(f"pivot override {pivot_override} outside window {cands[0]}..{cands[-1]}")
            pivot = pivot_override
        else:
            pivot = rng.choice(cands)

    cond = tpl.effective_condition()
    cond_holds = None
    if cond is not None:
        cond_holds = eval_condition(cond, values, counts, pivot, reference_date)

    return Binding(
        title=table.title,
        values=values,
        counts=counts,
        pivot=pivot,
        cond_holds=cond_holds,
        reference_date=reference_date,
    )


# --- truth ------------------------------------------------------------------


def truth_of(tpl: TemplateAst, binding: Binding, table: Table, reference_date: _date | None = None) -> bool:
    """Does the claim carried by this binding hold against the table?

    Slot values are re-resolved from the table so that a substituted binding
    (a value swapped in from a pool) correctly evaluates false; the binding
    contributes only the claim side: its pivot and its claimed slot values.
    """
    reference_date = reference_date or binding.reference_date
    fresh: dict[tuple[str, int], TypedValue] = {}
    counts: dict[str, int] = {}
    for slot in tpl.slots():
        fresh[(slot.key, slot.index)] = _resolve_slot(slot, table)
        counts[slot.key] = len(table.row(slot.key).values)

    cond = tpl.effective_condition()
    if cond is not None:
        return eval_condition(cond, fresh, counts, binding.pivot, reference_date)
    if tpl.pivot is not None:
        kind, v = _term_value(tpl.pivot.base, fresh, counts, None, reference_date)
        if kind == "date":
            v = float(v[0])
        return binding.pivot is not None and float(binding.pivot) == v
    # pure-slot: true iff the claimed values are the table's values
    for (key, index), claimed in binding.values.items():
        if fresh.get((key, index)) is None or fresh[(key, index)].raw != claimed.raw:
            return False
    return True


# --- rendering ---------------------------------------------------------------

_VOWEL_SOUND = re.compile(r"^[aeiou]", re.IGNORECASE)
_A_EXCEPTIONS = re.compile(r"^(uni|use|one|once|eu|ubiq|u[rst][aeiou])", re.IGNORECASE)
_AN_EXCEPTIONS = re.compile(r"^(hour|honest|honor|heir)", re.IGNORECASE)


def fix_surface(text: str) -> str:
    """Minimal grammar pass: whitespace, a/an agreement, sentence capital."""
    text = re.sub(r"\s+", " ", text).strip()
    text = re.sub(r"\s+([.,;:!?])", r"\1", text)

    def fix_article(m: re.Match) -> str:
        art, word = m.group(1), m.group(2)
        wants_an = bool(_VOWEL_SOUND.match(word) and not _A_EXCEPTIONS.match(word)) or bool(
            _AN_EXCEPTIONS.match(word)
        )
        right = ("an" if wants_an else "a") if art.islower() else ("An" if wants_an else "A")
        return f"{right} {word}"

    text = re.sub(r"\b([Aa]n?)\s+(\w+)", fix_article, text)
    if text and text[0].isalpha():
        text = text[0].upper() + text[1:]
    return text


def render_slot_text(tv: TypedValue, extractor: str | None, counts: Mapping[str, int], key: str) -> str:
    """Surface form of a slot: verbatim raw text unless an extractor narrows it."""
    if extractor is None:
        return tv.raw
    kind, v = _extract(tv, extractor, counts, key)
    if extractor == "Month":
        return calendar.month_name[int(v)]
    if kind == "num":
        return str(int(v)) if float(v).is_integer() else str(v)
    return str(v)


def render_values_text(values: Sequence[TypedValue]) -> str:
    """Join a row's values for premise sentences: 'a', 'a and b', 'a, b and c'."""
    raws = [v.raw for v in values]
    if len(raws) == 1:
        return raws[0]
    return ", ".join(raws[:-1]) + " and " + raws[-1]


@dataclass(frozen=True)
class Rendering:
    sentence: str
    label: str  # "E" or "C"
    branch_used: bool | None = None
    pivot_shown: int | None = None
    strategy: str = "Direct"


def realize(
    tpl: TemplateAst,
    binding: Binding,
    *,
    branch: bool | None = None,
    pivot_as_true_value: bool = False,
    value_overrides: Mapping[tuple[str, int], TypedValue] | None = None,
) -> str:
    """Concatenate the template with the binding into surface text."""
    values = dict(binding.values)
    if value_overrides:
        values.update(value_overrides)
    out = []
    for n in tpl.nodes:
        if isinstance(n, Literal):
            out.append(n.text)
        elif isinstance(n, TitleSlot):
            out.append(binding.title)
        elif isinstance(n, Slot):
            tv = values.get((n.key, n.index))
            if tv is None:
                raise MissingBindingError(f"no bound value for {n.key!r}[{n.index}]")
            out.append(render_slot_text(tv, n.extractor, binding.counts, n.key))
        elif isinstance(n, Pivot):
            if pivot_as_true_value:
                kind, v = _term_value(n.base, values, binding.counts, None, binding.reference_date)
                if kind == "date":
                    v = float(v[0])
                out.append(str(int(v)) if float(v).is_integer() else str(v))
            else:
                if binding.pivot is None:
                    raise MissingBindingError("template has a pivot but the binding has none")
                out.append(str(binding.pivot))
        elif isinstance(n, Choice):
            if branch is None:
                raise MissingBindingError("choice template rendered without a branch")
            out.append(n.true_text if branch else n.false_text)
        elif isinstance(n, Conditional):
            if branch is None:
                raise MissingBindingError("conditional template rendered without a branch")
            out.append(n.then_text if branch else n.else_text)
    return fix_surface("".join(out))


def render(tpl: TemplateAst, binding: Binding, target_label: str) -> Rendering:
    """Render the binding to surface text realizing the requested label.

    Entail realizes the true state; Contradict flips exactly one element
    (choice branch, conditional branch, or pivot-vs-true-value), so sibling
    renderings differ by at most two whitespace tokens.
    """
    if target_label not in ("E", "C"):
        raise ValueError(f"target label must be 'E' or 'C', got {target_label!r}")
    want_entail = target_label == "E"

    if tpl.conditional is not None or tpl.choice is not None:
        if binding.cond_holds is None:
            raise UncontrollableError(f"template {tpl.id!r} has a choice without a comparison")
        branch = binding.cond_holds if want_entail else not binding.cond_holds
        strategy = "ConditionalFlip" if tpl.conditional is not None else "ChoiceFlip"
        return Rendering(
            sentence=realize(tpl, binding, branch=branch),
            label=target_label,
            branch_used=branch,
            pivot_shown=binding.pivot,
            strategy=strategy,
        )

    if tpl.pivot is not None:
        sentence = realize(tpl, binding, pivot_as_true_value=want_entail)
        return Rendering(
            sentence=sentence,
            label=target_label,
            pivot_shown=None if want_entail else binding.pivot,
            strategy="PivotShift",
        )

    if tpl.condition is not None:
        # predicate template: the surface is fixed, only the truth varies
        if binding.cond_holds != want_entail:
            raise UncontrollableError(
                f"predicate template {tpl.id!r} is {'true' if binding.cond_holds else 'false'} here"
            )
        return Rendering(sentence=realize(tpl, binding), label=target_label, strategy="Direct")

    if not want_entail:
        raise UncontrollableError(
            f"pure-slot template {tpl.id!r} cannot contradict by itself (pool substitution lives in pair generation)"
        )
    return Rendering(sentence=realize(tpl, binding), label="E", strategy="Direct")
