"""Multi-entity Bayesian network engine.

Declare MFrags/MTheories in a textual language, validate them, ground
query-specific situation-specific Bayesian networks (SSBNs) and compute
exact posteriors, verified against a brute-force oracle.
"""

from .errors import MebnError
from .model import (
    ABSURD,
    ContextValue,
    EntityRegistry,
    Finding,
    MFrag,
    MTheory,
    RVInstance,
    RVTemplate,
    StateSpace,
)
from .parser import Evidence, ParseError, SourceText, parse_evidence, parse_mtheory, parse_target
from .serializer import serialize_mtheory
from .validation import ValidatedMTheory, ValidationReport, validate
from .grounding import GroundingLimits, SSBN, build_ssbn, export_dot, prune_ssbn, ssbn_to_json
from .inference import Posterior, Query, answer_query, brute_force_posterior, eliminate

__version__ = "0.1.0"

__all__ = [
    "ABSURD",
    "ContextValue",
    "EntityRegistry",
    "Evidence",
    "Finding",
    "GroundingLimits",
    "MFrag",
    "MTheory",
    "MebnError",
    "ParseError",
    "Posterior",
    "Query",
    "RVInstance",
    "RVTemplate",
    "SSBN",
    "SourceText",
    "StateSpace",
    "ValidatedMTheory",
    "ValidationReport",
    "answer_query",
    "brute_force_posterior",
    "build_ssbn",
    "eliminate",
    "export_dot",
    "parse_evidence",
    "parse_mtheory",
    "parse_target",
    "prune_ssbn",
    "serialize_mtheory",
    "ssbn_to_json",
    "validate",
]
