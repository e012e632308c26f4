"""Core vocabulary: entities, types, RV templates/instances, MFrags, MTheories.

Everything here is immutable after construction. The registry and the theory
are built once (by the parser or programmatically) and then shared freely
between validation, grounding and inference.

Conventions baked into the engine:

* entity identifiers start with ``!`` followed by capitals/digits
  (``!ST0``, ``!T1``); no two entities share an identifier;
* every state space is implicitly extended with the distinguished value
  ``Absurd``, which marks category-nonsensical propositions and is never
  user-declared;
* context values are three-valued: ``True``, ``False``, ``Absurd``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Union

from .errors import (
    ArityMismatch,
    DuplicateIdentifier,
    TypeViolation,
    UnboundParameter,
    UnknownType,
)

ABSURD = "Absurd"
TRUE = "True"
FALSE = "False"

IDENTIFIER_RE = re.compile(r"!(?:[A-Z0-9]+)\Z")
NAME_RE = re.compile(r"[A-Z][A-Za-z0-9]*\Z")
VAR_RE = re.compile(r"[a-z][a-z0-9]*\Z")


def is_identifier(text: str) -> bool:
    return bool(IDENTIFIER_RE.match(text))


class ContextValue:
    """Three-valued truth: True, False or Absurd.

    Absurd is not "unknown": it means the proposition is category-nonsensical
    (asking whether a zone is one's own starship). Connectives over context
    values are strict in Absurd: any Absurd operand makes the result Absurd.
    """

    __slots__ = ("value",)

    def __init__(self, value: str):
        if value not in (TRUE, FALSE, ABSURD):
            raise ValueError(f"not a context value: {value!r}")
        self.value = value

    def __eq__(self, other):
        return isinstance(other, ContextValue) and self.value == other.value

    def __hash__(self):
        return hash(("ContextValue", self.value))

    def __repr__(self):
        return f"ContextValue({self.value})"

    def is_true(self) -> bool:
        return self.value == TRUE

    def is_false(self) -> bool:
        return self.value == FALSE

    def is_absurd(self) -> bool:
        return self.value == ABSURD

    @staticmethod
    def from_bool(b: bool) -> "ContextValue":
        return CV_TRUE if b else CV_FALSE


CV_TRUE = ContextValue(TRUE)
CV_FALSE = ContextValue(FALSE)
CV_ABSURD = ContextValue(ABSURD)


# ---------------------------------------------------------------------------
# entity registry


class EntityRegistry:
    """Immutable map from unique identifiers to their declared types.

    Per-type identifier lists are kept sorted lexicographically so that
    enumeration order is total, deterministic and identical on every run.
    That order also serves as the well-founded chain behind ``Prev(...)``
    recursion (the predecessor of ``!T2`` among TimeSteps is ``!T1``).
    """

    def __init__(self, types: Iterable[str] = (), entries: Mapping[str, str] = ()):
        self._types: tuple[str, ...] = tuple(types)
        self._by_id: dict[str, str] = {}
        self._by_type: dict[str, list[str]] = {t: [] for t in self._types}
        for ident, type_name in dict(entries).items():
            self._insert(ident, type_name)

    def _insert(self, ident: str, type_name: str) -> None:
        if not is_identifier(ident):
            raise ValueError(f"malformed unique identifier: {ident!r}")
        if type_name not in self._by_type:
            raise UnknownType(f"type {type_name} is not declared")
        if ident in self._by_id:
            raise DuplicateIdentifier(
                f"{ident} is already registered as {self._by_id[ident]}"
            )
        self._by_id[ident] = type_name
        self._by_type[type_name].append(ident)
        self._by_type[type_name].sort()

    # -- construction ------------------------------------------------------

    def register(self, ident: str, type_name: str) -> "EntityRegistry":
        """Return a new registry with ``ident`` registered under ``type_name``."""
        out = EntityRegistry(self._types)
        out._by_id = dict(self._by_id)
        out._by_type = {t: list(ids) for t, ids in self._by_type.items()}
        out._insert(ident, type_name)
        return out

    # -- lookups -----------------------------------------------------------

    @property
    def types(self) -> tuple[str, ...]:
        return self._types

    def has_type(self, type_name: str) -> bool:
        return type_name in self._by_type

    def type_of(self, ident: str) -> Optional[str]:
        """Declared type of ``ident``, or None when unregistered."""
        return self._by_id.get(ident)

    def identifiers(self, type_name: str) -> tuple[str, ...]:
        """All identifiers of one type, lexicographically sorted."""
        if type_name not in self._by_type:
            raise UnknownType(f"type {type_name} is not declared")
        return tuple(self._by_type[type_name])

    def predecessor(self, ident: str) -> Optional[str]:
        """Previous identifier of the same type, or None at the chain floor."""
        type_name = self._by_id.get(ident)
        if type_name is None:
            return None
        ids = self._by_type[type_name]
        pos = ids.index(ident)
        return ids[pos - 1] if pos > 0 else None

    # -- builtin random variables -----------------------------------------

    def eval_identity(self, ident: str) -> str:
        """The identity RV: an identifier maps to itself, or to Absurd."""
        return ident if ident in self._by_id else ABSURD

    def eval_isa(self, type_name: str, ident: str) -> ContextValue:
        """Type-membership: True / False for registered ids, Absurd otherwise."""
        if type_name not in self._by_type:
            raise UnknownType(f"type {type_name} is not declared")
        actual = self._by_id.get(ident)
        if actual is None:
            return CV_ABSURD
        return CV_TRUE if actual == type_name else CV_FALSE

    def eval_type(self, ident: str) -> str:
        """The Type RV: an identifier maps to its type label, or to Absurd."""
        return self._by_id.get(ident, ABSURD)


def register_entity(registry: EntityRegistry, ident: str, type_name: str) -> EntityRegistry:
    return registry.register(ident, type_name)


def eval_identity(registry: EntityRegistry, ident: str) -> str:
    return registry.eval_identity(ident)


def eval_isa(registry: EntityRegistry, type_name: str, ident: str) -> ContextValue:
    return registry.eval_isa(type_name, ident)


# ---------------------------------------------------------------------------
# state spaces


@dataclass(frozen=True)
class StateSpace:
    """Finite list of declared values, implicitly extended with Absurd.

    ``kind`` is one of:

    * ``enum`` -- explicit value list (``{ Unacceptable, High, ... }``);
    * ``bool`` -- True/False;
    * ``ref``  -- identifier-valued: the states of an *instance* are entity
      identifiers of ``ref_type``, optionally gated down to an explicit
      candidate list supplied with the evidence.
    """

    kind: str
    values: tuple[str, ...] = ()
    ref_type: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("enum", "bool", "ref"):
            raise ValueError(f"bad state-space kind {self.kind!r}")
        if self.kind == "enum":
            if not self.values:
                raise ValueError("enum state space must be non-empty")
            if len(set(self.values)) != len(self.values):
                raise ValueError("duplicate states")
            if ABSURD in self.values:
                raise ValueError("Absurd is implicit and may not be declared")

    @staticmethod
    def boolean() -> "StateSpace":
        return StateSpace("bool", (TRUE, FALSE))

    @staticmethod
    def enum(values: Iterable[str]) -> "StateSpace":
        return StateSpace("enum", tuple(values))

    @staticmethod
    def ref(type_name: str) -> "StateSpace":
        return StateSpace("ref", (), type_name)

    def declared(self, registry: Optional[EntityRegistry] = None,
                 candidates: Optional[tuple[str, ...]] = None) -> tuple[str, ...]:
        """Declared (non-Absurd) states; ref spaces need the registry."""
        if self.kind == "ref":
            if candidates is not None:
                return tuple(candidates)
            if registry is None:
                raise ValueError("ref state space needs a registry or candidates")
            return registry.identifiers(self.ref_type)
        return self.values

    def with_absurd(self, registry: Optional[EntityRegistry] = None,
                    candidates: Optional[tuple[str, ...]] = None) -> tuple[str, ...]:
        """Full instance state list: declared values then Absurd, always last."""
        return self.declared(registry, candidates) + (ABSURD,)


# ---------------------------------------------------------------------------
# templates and instances

DOMAIN = "domain"
BUILTIN_IDENTITY = "builtin-identity"
BUILTIN_ISA = "builtin-isa"
BUILTIN_TYPE = "builtin-type"
LOGICAL = "logical"


@dataclass(frozen=True)
class RVTemplate:
    """Named RV pattern: ``HarmPotential(st: Starship, t: TimeStep)``."""

    name: str
    params: tuple[tuple[str, str], ...]  # (argument name, type name)
    states: StateSpace
    kind: str = DOMAIN

    def __post_init__(self):
        names = [p for p, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.name}: parameter names must be distinct")

    @property
    def arity(self) -> int:
        return len(self.params)


# An instance argument is an identifier, a nested instance (function
# composition, e.g. OpSpec(Subject(!SR4))) or a constant state symbol
# (second operand of Eq).
InstanceArg = Union[str, "RVInstance"]


@dataclass(frozen=True)
class RVInstance:
    """A template with every argument bound; equality is structural."""

    name: str
    args: tuple[InstanceArg, ...] = ()

    @property
    def text(self) -> str:
        if not self.args:
            return self.name
        parts = [a.text if isinstance(a, RVInstance) else a for a in self.args]
        return f"{self.name}({','.join(parts)})"

    def __str__(self):
        return self.text

    def simple_args(self) -> tuple[str, ...]:
        """Arguments as plain identifiers; raises on nested instances."""
        for a in self.args:
            if not isinstance(a, str):
                raise ValueError(f"{self.text} has a non-identifier argument")
        return self.args  # type: ignore[return-value]


def instantiate_rv(template: RVTemplate, bindings: Mapping[str, str]) -> RVInstance:
    """Substitute identifiers for every template parameter."""
    extra = set(bindings) - {p for p, _ in template.params}
    if extra:
        raise ArityMismatch(
            f"{template.name}: unexpected bindings {sorted(extra)}"
        )
    args = []
    for param, _ in template.params:
        if param not in bindings:
            raise UnboundParameter(f"{template.name}: parameter {param} unbound")
        args.append(bindings[param])
    return RVInstance(template.name, tuple(args))


# ---------------------------------------------------------------------------
# terms appearing inside MFrag declarations


@dataclass(frozen=True)
class Arg:
    """One argument position in a declared RV term.

    ``kind``:
      var   -- an MFrag variable (``st``)
      prev  -- the variable's predecessor along its type chain (``Prev(t)``);
               this is the ordering annotation that makes recursion legal
      ident -- a literal identifier (``!ST0``)
      name  -- a literal capitalized symbol (type label in ``Isa(Starship, st)``)
    """

    kind: str
    value: str

    @property
    def text(self) -> str:
        return f"Prev({self.value})" if self.kind == "prev" else self.value

    @staticmethod
    def var(name: str) -> "Arg":
        return Arg("var", name)

    @staticmethod
    def prev(name: str) -> "Arg":
        return Arg("prev", name)

    @staticmethod
    def ident(ident: str) -> "Arg":
        return Arg("ident", ident)

    @staticmethod
    def name(symbol: str) -> "Arg":
        return Arg("name", symbol)


@dataclass(frozen=True)
class RVTerm:
    """An RV applied to argument expressions: ``ZoneMD(z, Prev(t))``."""

    name: str
    args: tuple[Arg, ...] = ()

    @property
    def text(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({','.join(a.text for a in self.args)})"

    def __str__(self):
        return self.text

    def free_vars(self) -> tuple[str, ...]:
        out = []
        for a in self.args:
            if a.kind in ("var", "prev") and a.value not in out:
                out.append(a.value)
        return tuple(out)

    def is_recursive_reference(self) -> bool:
        return any(a.kind == "prev" for a in self.args)


# Context terms: either a plain RV term (three-valued), an equality between
# an RV term and an argument expression (``Subject(sr) = st``), a literal
# equality between argument expressions (``st != s``), or a logical
# combination of context terms.


@dataclass(frozen=True)
class EqContext:
    rv: RVTerm
    rhs: Arg
    negated: bool = False

    @property
    def text(self) -> str:
        op = "!=" if self.negated else "="
        return f"{self.rv.text} {op} {self.rhs.text}"


@dataclass(frozen=True)
class LexEqContext:
    lhs: Arg
    rhs: Arg
    negated: bool = False

    @property
    def text(self) -> str:
        op = "!=" if self.negated else "="
        return f"{self.lhs.text} {op} {self.rhs.text}"


@dataclass(frozen=True)
class ConnectiveContext:
    op: str  # and | or | not | implies | iff
    operands: tuple["ContextTerm", ...]

    @property
    def text(self) -> str:
        return f"{self.op}({', '.join(t.text for t in self.operands)})"


@dataclass(frozen=True)
class QuantifiedContext:
    quantifier: str  # forall | exists
    var: str
    type_name: str
    body: "ContextTerm"

    @property
    def text(self) -> str:
        return f"{self.quantifier} {self.var}: {self.type_name} . {self.body.text}"


ContextTerm = Union[RVTerm, EqContext, LexEqContext, ConnectiveContext, QuantifiedContext]


# ---------------------------------------------------------------------------
# MFrag / MTheory


@dataclass(frozen=True)
class ResidentDecl:
    term: RVTerm
    states: StateSpace


@dataclass(frozen=True)
class MFrag:
    """One reusable network fragment.

    ``context`` gates applicability (three-valued), ``inputs`` import RVs
    whose distributions live elsewhere, ``residents`` are defined here, and
    ``arcs`` is the fragment graph over input/resident terms. ``locals_``
    maps each resident RV name to its local expression (an LDL body, a
    uniform reference distribution, or a compiled logical definition --
    see :mod:`mebn.ldl`).

    Input terms may reference a resident template of the same fragment with
    a ``Prev(...)`` argument; that is the declared recursion and the only
    sanctioned way an RV may influence later instances of itself.
    """

    name: str
    vars: tuple[tuple[str, str], ...]  # (variable, type name), declaration order
    context: tuple[ContextTerm, ...]
    inputs: tuple[RVTerm, ...]
    residents: tuple[ResidentDecl, ...]
    arcs: tuple[tuple[RVTerm, RVTerm], ...]
    locals_: Mapping[str, object] = field(default_factory=dict)

    def var_type(self, var: str) -> Optional[str]:
        for v, t in self.vars:
            if v == var:
                return t
        return None

    def resident_names(self) -> tuple[str, ...]:
        return tuple(r.term.name for r in self.residents)

    def resident_decl(self, name: str) -> ResidentDecl:
        for r in self.residents:
            if r.term.name == name:
                return r
        raise KeyError(name)

    def parent_terms(self, resident_name: str) -> tuple[RVTerm, ...]:
        """Fragment-graph parents of a resident, in declaration order."""
        ordered: list[RVTerm] = []
        for parent, child in self.arcs:
            if child.name == resident_name and parent not in ordered:
                ordered.append(parent)
        # keep declaration order: inputs first (as declared), then residents
        decl_order = {t.text: i for i, t in enumerate(self.inputs)}
        base = len(decl_order)
        for i, r in enumerate(self.residents):
            decl_order.setdefault(r.term.text, base + i)
        ordered.sort(key=lambda t: decl_order.get(t.text, len(decl_order)))
        return tuple(ordered)


@dataclass(frozen=True)
class MFragInstance:
    """An MFrag with some variables bound; the rest stay free for grounding."""

    mfrag: MFrag
    binding: Mapping[str, str]
    free: tuple[str, ...]

    def resident_instance(self, resident_name: str) -> RVInstance:
        decl = self.mfrag.resident_decl(resident_name)
        args = []
        for a in decl.term.args:
            if a.kind != "var" or a.value not in self.binding:
                raise UnboundParameter(
                    f"{decl.term.text}: argument {a.text} is not bound"
                )
            args.append(self.binding[a.value])
        return RVInstance(resident_name, tuple(args))


def instantiate_mfrag(mfrag: MFrag, binding: Mapping[str, str],
                      registry: Optional[EntityRegistry] = None) -> MFragInstance:
    """Bind a subset of an MFrag's variables, checking declared types.

    Unknown variables raise; when a registry is supplied, a bound identifier
    whose registered type contradicts the variable's declared type raises
    TypeViolation. Remaining variables are reported free, to be enumerated
    at grounding time.
    """
    declared = dict(mfrag.vars)
    for var, ident in binding.items():
        if var not in declared:
            raise ArityMismatch(f"{mfrag.name} has no variable {var!r}")
        if registry is not None:
            actual = registry.type_of(ident)
            if actual is not None and actual != declared[var]:
                raise TypeViolation(
                    f"{ident} is a {actual}, but {mfrag.name}.{var} expects {declared[var]}"
                )
    free = tuple(v for v, _ in mfrag.vars if v not in binding)
    return MFragInstance(mfrag, dict(binding), free)


@dataclass(frozen=True)
class Finding:
    """An asserted value for one RV instance: the evidence mechanism.

    A finding plays the role of a tiny two-node fragment that pins its
    subject node to the declared value; the engine applies findings as
    evidence during inference and never restructures the theory.
    """

    subject: RVInstance
    value: str

    @property
    def text(self) -> str:
        return f"{self.subject.text} = {self.value}"


@dataclass(frozen=True)
class MTheory:
    """A named, finite, ordered collection of MFrags plus entity declarations."""

    name: str
    types: tuple[str, ...]
    entities: tuple[tuple[str, str], ...]  # (identifier, type name)
    mfrags: tuple[MFrag, ...]

    def registry(self, extra: Iterable[tuple[str, str]] = ()) -> EntityRegistry:
        reg = EntityRegistry(self.types)
        for ident, type_name in tuple(self.entities) + tuple(extra):
            reg = reg.register(ident, type_name)
        return reg

    def mfrag(self, name: str) -> MFrag:
        for f in self.mfrags:
            if f.name == name:
                return f
        raise KeyError(name)

    def templates(self) -> dict[str, RVTemplate]:
        """Domain templates derived from resident declarations (first home wins)."""
        out: dict[str, RVTemplate] = {}
        for frag in self.mfrags:
            var_types = dict(frag.vars)
            for decl in frag.residents:
                if decl.term.name in out:
                    continue  # duplicate homes are a validation matter
                params = tuple(
                    (a.value, var_types.get(a.value, ""))
                    for a in decl.term.args
                )
                kind = LOGICAL if getattr(frag.locals_.get(decl.term.name), "is_logic", False) else DOMAIN
                out[decl.term.name] = RVTemplate(decl.term.name, params, decl.states, kind)
        return out

    def homes(self, name: str) -> tuple[str, ...]:
        """Names of every MFrag in which ``name`` is resident."""
        return tuple(f.name for f in self.mfrags if name in f.resident_names())

    def home_mfrag(self, name: str) -> MFrag:
        homes = self.homes(name)
        if len(homes) != 1:
            raise KeyError(f"{name} has {len(homes)} home MFrags")
        return self.mfrag(homes[0])
