"""Exception hierarchy shared across the engine.

Every error carries a ``stage`` tag so the CLI and the HTTP service can
report which pipeline phase failed (parse, validate, ground, infer, io).
"""

from __future__ import annotations


class MebnError(Exception):
    """Base class for all engine errors."""

    stage = "engine"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# ---------------------------------------------------------------------------
# core model


class ModelError(MebnError):
    stage = "model"


class DuplicateIdentifier(ModelError):
    pass


class UnknownType(ModelError):
    pass


class ArityMismatch(ModelError):
    pass


class UnboundParameter(ModelError):
    pass


class TypeViolation(ModelError):
    pass


# ---------------------------------------------------------------------------
# local distributions


class LdlError(MebnError):
    stage = "ldl"


class IncompleteWorld(LdlError):
    pass


class NegativeResidual(LdlError):
    pass


class MassError(LdlError):
    pass


# ---------------------------------------------------------------------------
# parsing / evidence


class EvidenceError(MebnError):
    stage = "parse"


# ---------------------------------------------------------------------------
# grounding


class GroundingError(MebnError):
    stage = "ground"


class UnresolvableContext(GroundingError):
    pass


class LimitExceeded(GroundingError):
    def __init__(self, which: str, message: str):
        super().__init__(message)
        self.which = which  # max_depth | max_nodes | max_parent_product


class ParentProductExceeded(LimitExceeded):
    def __init__(self, message: str):
        super().__init__("max_parent_product", message)


class EmptyDomain(GroundingError):
    pass


# ---------------------------------------------------------------------------
# inference


class InferenceError(MebnError):
    stage = "infer"


class InconsistentEvidence(InferenceError):
    def __init__(self, message: str, findings=()):
        super().__init__(message)
        self.findings = tuple(findings)


class StateSpaceTooLarge(InferenceError):
    pass
