"""Exception hierarchy shared across the package."""
from __future__ import annotations


class GuidedDecodeError(Exception):
    """Base class for all package errors."""


class VocabularyError(GuidedDecodeError):
    """Malformed vocabulary file or inconsistent special ids."""


class UnknownTokenError(GuidedDecodeError):
    """A token id is outside the vocabulary."""


class ContextTooLongError(GuidedDecodeError):
    """Context exceeds the model's maximum context length."""


class ModelConfigError(GuidedDecodeError):
    """Malformed mock-model configuration (bad rule, bad distribution)."""


class BridgeError(GuidedDecodeError):
    """Remote bridge request failed."""


class KnowledgeBaseError(GuidedDecodeError):
    """Base class for knowledge-base problems."""


class KBFormatError(KnowledgeBaseError):
    """Malformed knowledge-base file."""


class UnknownEntityError(KnowledgeBaseError):
    """Entity reference does not resolve against the knowledge base."""


class KBTooSmallError(KnowledgeBaseError):
    """Knowledge base cannot support the requested sampling."""


class InsufficientDataError(GuidedDecodeError):
    """Not enough instances or templates to build the requested splits."""


class GuidanceUnavailableError(GuidedDecodeError):
    """No guidance could be constructed and fallbacks are disabled."""


class MissingYesNoError(GuidedDecodeError):
    """The vocabulary lacks the yes/no tokens needed by the binary verifier."""


class NonFiniteLogitsError(GuidedDecodeError):
    """Logits contain NaN or infinity."""


class MisalignedIdsError(GuidedDecodeError):
    """Generations do not align 1:1 with dataset instances."""


class EmptyDatasetError(GuidedDecodeError):
    """Metric requested over an empty result set."""


class EmptyTextError(GuidedDecodeError):
    """Text tokenizes to nothing, so the metric is undefined."""


class TooShortError(GuidedDecodeError):
    """Token sequence shorter than the requested n-gram order."""
