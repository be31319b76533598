"""tabnli: deterministic generation of tabular-NLI corpora.

Turns entity-centric key/value tables plus human-written templates and
constraints into constraint-valid counterfactual tables, balanced
entail/contradict hypothesis pairs with paraphrased premises, and
reproducible train/dev/test splits.
"""

from .table_model import (
    CategorySchema,
    CorpusStats,
    KeySchema,
    Row,
    Table,
    TypedValue,
    corpus_stats,
    infer_value,
    ingest_table,
    load_schemas,
    load_tables,
    serialize_table,
    write_tables,
)
from .template_dsl import (
    Binding,
    TemplateAst,
    bind,
    load_templates,
    parse_template,
    pretty_print,
    render,
    truth_of,
)
from .constraint_engine import Constraint, ConstraintReport, check, check_all, load_constraints, parse_constraint
from .counterfactual import (
    MutationConfig,
    MutationOp,
    ValuePools,
    build_pools,
    expand_corpus,
    generate_counterfactual,
    mutate_row,
)
from .hypothesis_gen import (
    GeneratedPair,
    ParaphraseSet,
    coverage_report,
    export_hypothesis_only,
    generate_for_table,
    linearize_premise,
    pool_substitute_contradict,
    sample_audit,
)
from .split_builder import (
    HardnessMatrix,
    SplitAssignment,
    SplitSpec,
    split_by_category,
    split_by_hardness,
    split_by_key_entity,
    split_by_key_random,
    split_paraphrase,
)

__version__ = "0.1.0"
