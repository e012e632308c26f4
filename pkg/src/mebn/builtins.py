"""Built-in logical machinery: three-valued connectives, Isa/Identity/Type,
equality over value nodes, and finite-domain quantifiers.

All connectives are *strict* in Absurd: one category-nonsensical operand
makes the whole formula category-nonsensical. On the {True, False} fragment
they are the classical tables, so De Morgan and the usual equivalences hold
everywhere (an Absurd operand collapses both sides to Absurd).

Quantifiers range over the registered identifiers of a type and compile to
chains of binary connective nodes: ForAll folds the body instances under
And, Exists under Or.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .errors import EmptyDomain, UnknownType
from .ldl import TableLocal
from .model import (
    ABSURD,
    FALSE,
    TRUE,
    Arg,
    ContextValue,
    CV_ABSURD,
    EntityRegistry,
    LexEqContext,
    MFrag,
    ResidentDecl,
    RVInstance,
    RVTerm,
    StateSpace,
)

CONNECTIVES = ("And", "Or", "Not", "Implies", "Iff")
BUILTIN_RV_NAMES = ("Isa", "Identity", "Type", "Eq") + CONNECTIVES


# ---------------------------------------------------------------------------
# strict three-valued tables


def _classical(op: str, values: Sequence[bool]) -> bool:
    if op == "and":
        return all(values)
    if op == "or":
        return any(values)
    if op == "not":
        return not values[0]
    if op == "implies":
        return (not values[0]) or values[1]
    if op == "iff":
        return values[0] == values[1]
    raise ValueError(f"unknown connective {op!r}")


def apply_connective(op: str, values: Sequence[ContextValue]) -> ContextValue:
    if any(v.is_absurd() for v in values):
        return CV_ABSURD
    return ContextValue.from_bool(_classical(op, [v.is_true() for v in values]))


def connective_value(op: str, states: Sequence[str]) -> str:
    """Same tables over raw state symbols, for CPT rows."""
    if any(s == ABSURD for s in states):
        return ABSURD
    return TRUE if _classical(op.lower(), [s == TRUE for s in states]) else FALSE


def equality_value(a: str, b: str) -> str:
    """Eq over two resolved values: True iff equal and neither is Absurd."""
    if a == ABSURD or b == ABSURD:
        return ABSURD
    return TRUE if a == b else FALSE


# ---------------------------------------------------------------------------
# builtin RVs over the registry


def is_builtin_name(name: str) -> bool:
    return name in BUILTIN_RV_NAMES


def is_builtin_context(term: RVTerm) -> bool:
    return term.name in ("Isa", "Identity", "Type")


def resolve_arg(arg: Arg, binding: Mapping[str, str]) -> str:
    if arg.kind == "var":
        return binding[arg.value]
    if arg.kind == "prev":
        raise ValueError("Prev() is only meaningful inside input terms")
    return arg.value


def eval_builtin_context(term: RVTerm, binding: Mapping[str, str],
                         registry: EntityRegistry) -> ContextValue:
    """Direct evaluation of Isa in context position (boolean builtins only)."""
    if term.name == "Isa":
        type_name = resolve_arg(term.args[0], binding)
        ident = resolve_arg(term.args[1], binding)
        return registry.eval_isa(type_name, ident)
    raise ValueError(f"{term.name} is not boolean and cannot gate a context")


def eval_lex_equality(term: LexEqContext, binding: Mapping[str, str],
                      registry: EntityRegistry) -> ContextValue:
    a = resolve_arg(term.lhs, binding)
    b = resolve_arg(term.rhs, binding)
    if registry.type_of(a) is None or registry.type_of(b) is None:
        return CV_ABSURD
    same = a == b
    return ContextValue.from_bool(not same if term.negated else same)


def argument_type_check(term: RVTerm, args: Sequence[str],
                        registry: EntityRegistry, mfrag: MFrag) -> Optional[ContextValue]:
    """Absurd when an argument is unregistered or of a contradicting type.

    Type labels (the first argument of Isa) are exempt. Returns None when
    every argument fits, so the caller proceeds to evaluate the proposition.
    """
    for arg, ident in zip(term.args, args):
        if term.name == "Isa" and arg is term.args[0]:
            continue
        if arg.kind == "name":
            continue
        actual = registry.type_of(ident)
        if actual is None:
            return CV_ABSURD
        expected = None
        if arg.kind in ("var", "prev"):
            expected = mfrag.var_type(arg.value)
        if expected is not None and actual != expected:
            return CV_ABSURD
    return None


def builtin_prior(inst: RVInstance, registry: EntityRegistry) -> tuple[tuple[str, ...], str]:
    """(state list, deterministic value) for a ground builtin RV node."""
    if inst.name == "Isa":
        type_name, ident = inst.simple_args()
        if not registry.has_type(type_name):
            raise UnknownType(f"type {type_name} is not declared")
        return (TRUE, FALSE, ABSURD), registry.eval_isa(type_name, ident).value
    if inst.name == "Identity":
        (ident,) = inst.simple_args()
        value = registry.eval_identity(ident)
        states = (ident, ABSURD) if value == ident else (ABSURD,)
        return states, value
    if inst.name == "Type":
        (ident,) = inst.simple_args()
        return tuple(registry.types) + (ABSURD,), registry.eval_type(ident)
    raise ValueError(f"{inst.name} is not a deterministic builtin")


# ---------------------------------------------------------------------------
# builtin MFrags


def _connective_table(kind: str) -> TableLocal:
    op = kind.lower()
    return TableLocal(lambda row, _op=op: connective_value(_op, row))


def connective_mfrag(kind: str) -> MFrag:
    """Deterministic fragment for one connective; strict three-valued CPT."""
    if kind not in CONNECTIVES:
        raise ValueError(f"unknown connective {kind!r}")
    arity = 1 if kind == "Not" else 2
    params = ("p", "q")[:arity]
    operand_terms = tuple(RVTerm(f"Operand{i + 1}", (Arg.var(p),))
                          for i, p in enumerate(params))
    resident = RVTerm(kind, tuple(Arg.var(p) for p in params))
    return MFrag(
        name=f"Builtin{kind}",
        vars=tuple((p, "Proposition") for p in params),
        context=(),
        inputs=operand_terms,
        residents=(ResidentDecl(resident, StateSpace.boolean()),),
        arcs=tuple((t, resident) for t in operand_terms),
        locals_={kind: _connective_table(kind)},
    )


def equality_mfrag() -> MFrag:
    """Eq(a, b): True iff both operands resolve to one non-Absurd value."""
    operands = (RVTerm("Operand1", (Arg.var("a"),)), RVTerm("Operand2", (Arg.var("b"),)))
    resident = RVTerm("Eq", (Arg.var("a"), Arg.var("b")))
    return MFrag(
        name="BuiltinEq",
        vars=(("a", "Proposition"), ("b", "Proposition")),
        context=(),
        inputs=operands,
        residents=(ResidentDecl(resident, StateSpace.boolean()),),
        arcs=tuple((t, resident) for t in operands),
        locals_={"Eq": TableLocal(lambda row: equality_value(row[0], row[1]))},
    )


def builtin_mfrags() -> tuple[MFrag, ...]:
    return tuple(connective_mfrag(k) for k in CONNECTIVES) + (equality_mfrag(),)


# ---------------------------------------------------------------------------
# quantifiers


@dataclass(frozen=True)
class QuantifierSpec:
    quantifier: str  # forall | exists
    var: str
    type_name: str
    body: RVTerm  # the bound variable occurs among the body's arguments

    @property
    def text(self) -> str:
        return f"{self.quantifier} {self.var}: {self.type_name} . {self.body.text}"


def fold_connective(kind: str, operands: Sequence[RVInstance]) -> RVInstance:
    """Left fold into binary connective instances; singletons pass through."""
    if not operands:
        raise EmptyDomain("cannot fold a connective over nothing")
    acc = operands[0]
    for nxt in operands[1:]:
        acc = RVInstance(kind, (acc, nxt))
    return acc


def expand_quantifier(spec: QuantifierSpec, registry: EntityRegistry) -> RVInstance:
    """Ground the body once per registered identifier and fold the results."""
    idents = registry.identifiers(spec.type_name)
    if not idents:
        raise EmptyDomain(f"no registered identifiers of type {spec.type_name}")
    instances = []
    for ident in idents:
        args = []
        for a in spec.body.args:
            if a.kind == "var" and a.value == spec.var:
                args.append(ident)
            elif a.kind in ("ident", "name"):
                args.append(a.value)
            else:
                raise ValueError(f"{spec.body.text}: unbound variable {a.text}")
        instances.append(RVInstance(spec.body.name, tuple(args)))
    kind = "And" if spec.quantifier == "forall" else "Or"
    return fold_connective(kind, instances)


def quantifier_mfrag(spec: QuantifierSpec, registry: EntityRegistry) -> MFrag:
    """Wrap a quantifier expansion as a fragment with a logic-defined resident."""
    from .ldl import LogicLocal
    from .parser import LTAtom, LTQuant

    term = LTQuant(spec.quantifier, spec.var, spec.type_name, LTAtom(spec.body))
    expand_quantifier(spec, registry)  # validates non-empty domain up front
    name = f"Quantified{spec.quantifier.capitalize()}{spec.body.name}"
    resident = RVTerm(name, ())
    return MFrag(
        name=f"Builtin{name}",
        vars=(),
        context=(),
        inputs=(),
        residents=(ResidentDecl(resident, StateSpace.boolean()),),
        arcs=(),
        locals_={name: LogicLocal(term)},
    )
