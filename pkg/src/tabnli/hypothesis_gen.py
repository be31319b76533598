"""Balanced entail/contradict pair generation with paraphrased premises.

Each applicable template yields an Entail rendering plus a Contradict
sibling: templates with a controllable element (choice, pivot, conditional)
flip it; pure-slot templates get their contradiction by substituting one
slot value with a pool value of the same key. Predicate templates (a fixed
surface whose truth the table decides, e.g. "born in a leap year") emit a
single pair labeled by their truth.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from datetime import date as _date
from random import Random
from typing import Iterable, Mapping, Sequence

from .counterfactual import ValuePools, derive_seed
from .errors import (
    ExtractorFailedError,
    IncomparableKindsError,
    IndexOutOfRangeError,
    MissingKeyError,
    MissingParaphraseError,
    NoApplicableTemplatesError,
    PoolExhaustedError,
    SampleTooLargeError,
    UncontrollableError,
)
from .table_model import CategorySchema, Table, TypedValue
from .template_dsl import (
    Binding,
    Slot,
    TemplateAst,
    TitleSlot,
    bind,
    realize,
    render,
    render_values_text,
    truth_of,
)

log = logging.getLogger(__name__)

ENTAIL = "E"
CONTRADICT = "C"

FLIP_STRATEGIES = ("ChoiceFlip", "PivotShift", "ConditionalFlip")


@dataclass(frozen=True)
class GeneratedPair:
    """One premise/hypothesis pair with full provenance."""

    table_id: str
    premise: str
    hypothesis: str
    label: str  # "E" | "C"
    template_id: str
    keys_used: tuple[str, ...]
    strategy: str  # ChoiceFlip | PivotShift | ConditionalFlip | PoolSubstitute | Direct
    is_counterfactual: bool
    seed_trace: str

    def __post_init__(self):
        if self.label not in (ENTAIL, CONTRADICT):
            raise ValueError(f"label must be E or C, got {self.label!r}")
        if not self.premise or not self.hypothesis:
            raise ValueError("premise and hypothesis must be non-empty")


@dataclass(frozen=True)
class ParaphraseSet:
    """Premise paraphrase templates per (category, key)."""

    by_key: Mapping[tuple[str, str], tuple[TemplateAst, ...]]

    def for_key(self, category: str, key: str) -> tuple[TemplateAst, ...]:
        return self.by_key.get((category, key), ())

    @staticmethod
    def from_templates(templates: Iterable[TemplateAst]) -> "ParaphraseSet":
        acc: dict[tuple[str, str], list[TemplateAst]] = defaultdict(list)
        for tpl in templates:
            if tpl.purpose != "premise-paraphrase":
                continue
            keys = tpl.keys_used()
            if len(keys) != 1:
                raise ValueError(f"paraphrase {tpl.id!r} must reference exactly one key, got {keys}")
            acc[(tpl.category, keys[0])].append(tpl)
        return ParaphraseSet(by_key={k: tuple(sorted(v, key=lambda t: t.id)) for k, v in sorted(acc.items())})


def linearize_premise(
    table: Table,
    paraphrases: ParaphraseSet,
    rng: Random,
    *,
    allowed_ids: frozenset[str] | None = None,
    fixed_choice: bool = False,
) -> str:
    """One sentence per row, paraphrase drawn uniformly per row, in row order.

    `allowed_ids` restricts the paraphrase pool (cross-paraphrase splits);
    `fixed_choice` always takes the first paraphrase (no-paraphrase splits).
    Multi-valued rows bind the slot to the joined value list.
    """
    sentences = []
    for row in table.rows:
        options = paraphrases.for_key(table.category, row.key)
        if allowed_ids is not None:
            options = tuple(t for t in options if t.id in allowed_ids)
        if not options:
            raise MissingParaphraseError(row.key)
        tpl = options[0] if fixed_choice else rng.choice(options)
        joined = replace(row.values[0], raw=render_values_text(row.values)) if len(row.values) > 1 else row.values[0]
        binding = Binding(
            title=table.title,
            values={(s.key, s.index): joined for s in tpl.slots()},
            counts={row.key: len(row.values)},
        )
        sentences.append(realize(tpl, binding))
    return " ".join(sentences)


def pool_substitute_contradict(
    tpl: TemplateAst,
    table: Table,
    pools: ValuePools,
    rng: Random,
    *,
    binding: Binding | None = None,
    premise: str = "",
    reference_date: _date | None = None,
) -> GeneratedPair:
    """Contradict a pure-slot template by swapping one slot's value.

    The replacement comes from the key's pool, has the same kind, and always
    differs from the table's value, so key-specific type constraints hold.
    """
    if binding is None:
        binding = bind(tpl, table, rng, reference_date=reference_date)
    body_slots = [n for n in tpl.nodes if isinstance(n, Slot)]
    if not body_slots:
        raise UncontrollableError(f"template {tpl.id!r} has no substitutable slot")
    # deterministic slot choice: last body slot carries the claim's object
    target = body_slots[-1]
    true_value = binding.values[(target.key, target.index)]
    pool = pools.values_for(table.category, target.key)
    candidates = [v for v in pool if v.raw != true_value.raw and v.kind == true_value.kind]
    if not candidates:
        raise PoolExhaustedError(f"no distinct pool value of kind {true_value.kind!r} for key {target.key!r}")
    substitute = rng.choice(candidates)
    sub_binding = Binding(
        title=binding.title,
        values={**binding.values, (target.key, target.index): substitute},
        counts=binding.counts,
        pivot=binding.pivot,
        cond_holds=binding.cond_holds,
        reference_date=binding.reference_date,
    )
    sentence = realize(tpl, sub_binding)
    return GeneratedPair(
        table_id=table.id,
        premise=premise,
        hypothesis=sentence,
        label=CONTRADICT,
        template_id=tpl.id,
        keys_used=tpl.keys_used(),
        strategy="PoolSubstitute",
        is_counterfactual=table.is_counterfactual,
        seed_trace=f"sub={target.key}[{target.index}]:{substitute.raw}",
    )


def generate_for_table(
    table: Table,
    templates: Sequence[TemplateAst],
    pools: ValuePools,
    paraphrases: ParaphraseSet,
    rng: Random,
    balance_target: float | None = 1.0,
    *,
    reference_date: _date | None = None,
) -> list[GeneratedPair]:
    """All pairs one table yields under the given template inventory.

    Inapplicable templates (missing key, failing extraction) are skipped;
    if none applies the table is an error. With a balance_target the output
    is down-sampled to an entail:contradict ratio within ±5% of it.
    """
    hypothesis_templates = sorted(
        (t for t in templates if t.purpose == "hypothesis" and t.category == table.category),
        key=lambda t: t.id,
    )
    premise = linearize_premise(table, paraphrases, rng)
    pairs: list[GeneratedPair] = []
    applicable = 0
    for tpl in hypothesis_templates:
        try:
            binding = bind(tpl, table, rng, reference_date=reference_date)
        except (MissingKeyError, IndexOutOfRangeError, ExtractorFailedError, IncomparableKindsError):
            continue
        applicable += 1
        pairs.extend(
            _pairs_for_binding(tpl, table, binding, pools, premise, rng, reference_date)
        )
    if applicable == 0:
        raise NoApplicableTemplatesError(f"no template applies to table {table.id!r}")
    if balance_target is not None:
        pairs = balance_pairs(pairs, balance_target, rng)
    return pairs


def _pairs_for_binding(
    tpl: TemplateAst,
    table: Table,
    binding: Binding,
    pools: ValuePools,
    premise: str,
    rng: Random,
    reference_date: _date | None,
) -> list[GeneratedPair]:
    out = []
    trace = f"table={table.id};tpl={tpl.id};pivot={binding.pivot};cond={binding.cond_holds}"

    controllable = tpl.choice is not None or tpl.conditional is not None or tpl.pivot is not None
    if controllable:
        for label in (ENTAIL, CONTRADICT):
            r = render(tpl, binding, label)
            out.append(
                GeneratedPair(
                    table_id=table.id,
                    premise=premise,
                    hypothesis=r.sentence,
                    label=r.label,
                    template_id=tpl.id,
                    keys_used=tpl.keys_used(),
                    strategy=r.strategy,
                    is_counterfactual=table.is_counterfactual,
                    seed_trace=f"{trace};branch={r.branch_used};shown={r.pivot_shown}",
                )
            )
        return out

    if tpl.condition is not None:
        # predicate template: single emission, label is the evaluated truth
        label = ENTAIL if truth_of(tpl, binding, table, reference_date) else CONTRADICT
        r = render(tpl, binding, label)
        out.append(
            GeneratedPair(
                table_id=table.id,
                premise=premise,
                hypothesis=r.sentence,
                label=label,
                template_id=tpl.id,
                keys_used=tpl.keys_used(),
                strategy="Direct",
                is_counterfactual=table.is_counterfactual,
                seed_trace=trace,
            )
        )
        return out

    r = render(tpl, binding, ENTAIL)
    out.append(
        GeneratedPair(
            table_id=table.id,
            premise=premise,
            hypothesis=r.sentence,
            label=ENTAIL,
            template_id=tpl.id,
            keys_used=tpl.keys_used(),
            strategy="Direct",
            is_counterfactual=table.is_counterfactual,
            seed_trace=trace,
        )
    )
    try:
        out.append(
            pool_substitute_contradict(
                tpl, table, pools, rng, binding=binding, premise=premise, reference_date=reference_date
            )
        )
    except PoolExhaustedError:
        log.debug("no pool contradiction for template %s on table %s", tpl.id, table.id)
    return out


def balance_pairs(pairs: Sequence[GeneratedPair], target: float, rng: Random) -> list[GeneratedPair]:
    """Down-sample the majority label toward an E:C ratio of `target`.

    Tolerates ±5% around the target fraction before touching anything, and
    never removes a key's last remaining pair.
    """
    if target <= 0:
        raise ValueError("balance target must be positive")
    pairs = list(pairs)
    counts = Counter(p.label for p in pairs)
    e, c = counts[ENTAIL], counts[CONTRADICT]
    if e + c == 0:
        return pairs
    want_e_frac = target / (1.0 + target)
    if abs(e / (e + c) - want_e_frac) <= 0.05:
        return pairs

    majority = ENTAIL if e / (e + c) > want_e_frac else CONTRADICT
    minority_count = c if majority == ENTAIL else e
    # target majority size so the ratio lands exactly on target
    want_majority = round(minority_count * (target if majority == ENTAIL else 1.0 / target))
    excess = (e if majority == ENTAIL else c) - want_majority
    if excess <= 0:
        return pairs

    key_cover: Counter = Counter()
    for p in pairs:
        for k in p.keys_used:
            key_cover[k] += 1

    removable = [i for i, p in enumerate(pairs) if p.label == majority]
    rng.shuffle(removable)
    dropped: set[int] = set()
    for i in removable:
        if excess == 0:
            break
        p = pairs[i]
        if any(key_cover[k] <= 1 for k in p.keys_used):
            continue
        for k in p.keys_used:
            key_cover[k] -= 1
        dropped.add(i)
        excess -= 1
    if excess > 0:
        log.warning("balance stopped early: %d excess %s pairs kept for key coverage", excess, majority)
    return [p for i, p in enumerate(pairs) if i not in dropped]


def _keys_of_template(tpl: TemplateAst) -> tuple[str, ...]:
    return tpl.keys_used()


@dataclass(frozen=True)
class CoverageReport:
    hypothesis_counts: Mapping[tuple[str, str], int]
    paraphrase_counts: Mapping[tuple[str, str], int]
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def coverage_report(
    templates: Sequence[TemplateAst],
    paraphrases: ParaphraseSet,
    schemas: Mapping[str, CategorySchema],
) -> CoverageReport:
    """Per-key template counts; flags keys under the schema's minimums.

    A hypothesis template counts toward every key it references, matching
    how multi-key rules (age, hit/flop) cover their keys.
    """
    hyp: Counter = Counter()
    for tpl in templates:
        if tpl.purpose != "hypothesis":
            continue
        for key in _keys_of_template(tpl):
            hyp[(tpl.category, key)] += 1
    para = {ck: len(ts) for ck, ts in paraphrases.by_key.items()}

    violations = []
    for category, schema in sorted(schemas.items()):
        for ks in schema.keys:
            h = hyp.get((category, ks.key), 0)
            p = para.get((category, ks.key), 0)
            if h < ks.min_hypothesis_templates:
                violations.append(
                    f"{category}/{ks.key}: {h} hypothesis templates, need >= {ks.min_hypothesis_templates}"
                )
            if p < ks.min_premise_paraphrases:
                violations.append(
                    f"{category}/{ks.key}: {p} premise paraphrases, need >= {ks.min_premise_paraphrases}"
                )
    return CoverageReport(hypothesis_counts=dict(hyp), paraphrase_counts=para, violations=tuple(violations))


def export_hypothesis_only(pairs: Sequence[GeneratedPair]) -> list[tuple[str, str]]:
    """Project pairs to (hypothesis, label), for hypothesis-bias probing."""
    return [(p.hypothesis, p.label) for p in pairs]


@dataclass(frozen=True)
class AuditRow:
    index: int
    table_id: str
    premise: str
    hypothesis: str
    label: str
    verified_label: str = ""
    grammar: str = ""
    complexity: str = ""


def sample_audit(pairs: Sequence[GeneratedPair], k: int, rng: Random) -> list[AuditRow]:
    """Uniform sample without replacement, with blank human-verification fields."""
    if k > len(pairs):
        raise SampleTooLargeError(f"asked for {k} of {len(pairs)} pairs")
    chosen = sorted(rng.sample(range(len(pairs)), k))
    return [
        AuditRow(
            index=i,
            table_id=pairs[i].table_id,
            premise=pairs[i].premise,
            hypothesis=pairs[i].hypothesis,
            label=pairs[i].label,
        )
        for i in chosen
    ]


def sort_pairs(pairs: Iterable[GeneratedPair]) -> list[GeneratedPair]:
    """Canonical output order, so parallel generation never changes bytes."""
    return sorted(pairs, key=lambda p: (p.table_id, p.template_id, p.label, p.hypothesis))
