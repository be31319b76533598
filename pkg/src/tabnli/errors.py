"""Exception hierarchy for the whole engine.

Every error a caller is expected to catch programmatically has its own
class; anything else is a plain ValueError-style bug.
"""


class TabnliError(Exception):
    """Base class for all engine errors."""


# --- table model ---------------------------------------------------------


class MalformedRecordError(TabnliError):
    """Input record is missing title, category, or the rows list."""


class DuplicateKeyError(TabnliError):
    """Two rows of one table share a key."""


class EmptyTableError(TabnliError):
    """Table record contains no rows."""


class UnknownTableIdError(TabnliError):
    """A pair references a table id absent from the corpus."""


# --- template DSL --------------------------------------------------------


class TemplateSyntaxError(TabnliError):
    """Template or constraint source failed to parse."""

    def __init__(self, message: str, pos: int = 0):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos
        self.reason = message


class MultipleChoiceNodesError(TemplateSyntaxError):
    """More than one {a/b} choice in a single template."""


class UnknownExtractorError(TemplateSyntaxError):
    """Slot names an extractor that does not exist."""


class MissingKeyError(TabnliError):
    """Template references a key the table does not have."""

    def __init__(self, key: str):
        super().__init__(f"table has no key {key!r}")
        self.key = key


class ExtractorFailedError(TabnliError):
    """Extractor cannot be applied to the bound value."""


class IndexOutOfRangeError(TabnliError):
    """Slot index exceeds the row's value count."""


class IncomparableKindsError(TabnliError):
    """Condition compares values of incompatible kinds."""


class UncontrollableError(TabnliError):
    """Template cannot realize the requested label."""


class MissingBindingError(TabnliError):
    """Binding lacks a value the renderer needs."""


# --- constraints ---------------------------------------------------------


class UnknownKeyError(TabnliError):
    """Constraint or template references a key outside the category schema."""


# --- counterfactual generation -------------------------------------------


class KeyNotFoundError(TabnliError):
    """Mutation targets a key the table does not contain."""


class KeyAlreadyPresentError(TabnliError):
    """AddMissingKey targets a key the table already contains."""


class PoolExhaustedError(TabnliError):
    """No pool value distinct from the current one exists."""


class DegenerateError(TabnliError):
    """No constraint-satisfying table differing from the parent was found."""


# --- pair generation ------------------------------------------------------


class NoApplicableTemplatesError(TabnliError):
    """No template binds to the table."""


class MissingParaphraseError(TabnliError):
    """Table row's key has no premise paraphrase."""

    def __init__(self, key: str):
        super().__init__(f"no premise paraphrase for key {key!r}")
        self.key = key


class SampleTooLargeError(TabnliError):
    """Audit sample size exceeds the pair count."""


# --- splits ---------------------------------------------------------------


class TooFewUnitsError(TabnliError):
    """Not enough units to fill three splits."""


class MissingUnitError(TabnliError):
    """Hardness matrix lacks a unit present in the pairs."""


class UnmappedKeyError(TabnliError):
    """Key has no entity type in the schema."""


class InsufficientParaphrasesError(TabnliError):
    """A key has fewer paraphrases than splits to fill."""
