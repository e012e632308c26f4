"""Serializer for MTheories: parse(serialize(t)) is structurally equal to t.

Declaration order is preserved, never canonicalized: two semantically equal
theories with different MFrag order serialize to different text, and both
parse back as valid.
"""

from __future__ import annotations

from .ldl import (
    Assignment,
    ConstTerm,
    CountCmp,
    GuardBool,
    GuardNot,
    LocalExpression,
    LogicLocal,
    Pattern,
    SatLinearTerm,
    TableLocal,
    UniformLocal,
)
from .model import (
    ConnectiveContext,
    EqContext,
    LexEqContext,
    MFrag,
    MTheory,
    QuantifiedContext,
    RVTerm,
    StateSpace,
)
from .parser import SourceText


def _term(t: RVTerm) -> str:
    if not t.args:
        return t.name
    return f"{t.name}({', '.join(a.text for a in t.args)})"


def _context(ct) -> str:
    if isinstance(ct, RVTerm):
        return _term(ct)
    if isinstance(ct, EqContext):
        op = "!=" if ct.negated else "="
        return f"{_term(ct.rv)} {op} {ct.rhs.text}"
    if isinstance(ct, LexEqContext):
        op = "!=" if ct.negated else "="
        return f"{ct.lhs.text} {op} {ct.rhs.text}"
    if isinstance(ct, ConnectiveContext):
        return f"{ct.op}(" + ", ".join(_context(o) for o in ct.operands) + ")"
    if isinstance(ct, QuantifiedContext):
        return f"{ct.quantifier} {ct.var}: {ct.type_name} . {_context(ct.body)}"
    raise TypeError(f"not a context term: {ct!r}")


def _pattern(p: Pattern) -> str:
    return " & ".join(f"{n} = {v.text}" for n, v in p.constraints)


def _guard(g) -> str:
    if isinstance(g, CountCmp):
        return f"count({_pattern(g.pattern)}) {g.op} {g.k}"
    if isinstance(g, GuardNot):
        return f"not({_guard(g.operand)})"
    if isinstance(g, GuardBool):
        return f"{g.op}(" + ", ".join(_guard(o) for o in g.operands) + ")"
    raise TypeError(f"not a guard: {g!r}")


def _states(s: StateSpace) -> str:
    if s.kind == "bool":
        return "bool"
    if s.kind == "ref":
        return f"ref {s.ref_type}"
    return "{ " + ", ".join(s.values) + " }"


def _assignment(a: Assignment) -> str:
    if a.is_remainder:
        return f"{a.state}: *"
    if isinstance(a.term, ConstTerm):
        return f"{a.state}: {a.term.text}"
    if isinstance(a.term, SatLinearTerm):
        t = a.term
        cap = t.literals[0] or repr(t.cap)
        base = t.literals[1] or repr(t.base)
        slope_lit = t.literals[2] or repr(t.slope)
        sign = "-" if slope_lit.startswith("-") else "+"
        slope_lit = slope_lit.lstrip("-")
        return (f"{a.state}: min({cap}, {base} {sign} {slope_lit} * "
                f"sat({_pattern(t.pattern)}, {t.bound}))")
    raise TypeError(f"not a probability term: {a.term!r}")


def _local(rv: str, decl, out: list[str]) -> None:
    if isinstance(decl, UniformLocal):
        out.append(f"  local {rv} {{ uniform }}")
        return
    if isinstance(decl, LogicLocal):
        return  # emitted as a logic declaration alongside residents
    if isinstance(decl, TableLocal):
        raise ValueError(f"builtin table local for {rv} is not serializable")
    assert isinstance(decl, LocalExpression)
    out.append(f"  local {rv} {{")
    for clause in decl.clauses:
        out.append(f"    when {_guard(clause.guard)} {{")
        for a in clause.assignments:
            out.append(f"      {_assignment(a)}")
        out.append("    }")
    out.append("    default {")
    for a in decl.default:
        out.append(f"      {_assignment(a)}")
    out.append("    }")
    out.append("  }")


def _mfrag(frag: MFrag, out: list[str]) -> None:
    out.append(f"mfrag {frag.name} {{")
    if frag.vars:
        out.append("  vars { " + ", ".join(f"{v}: {t}" for v, t in frag.vars) + " }")
    if frag.context:
        out.append("  context {")
        for ct in frag.context:
            out.append(f"    {_context(ct)}")
        out.append("  }")
    if frag.inputs:
        out.append("  input {")
        for t in frag.inputs:
            out.append(f"    {_term(t)}")
        out.append("  }")
    plain = [d for d in frag.residents
             if not getattr(frag.locals_.get(d.term.name), "is_logic", False)]
    logic = [d for d in frag.residents
             if getattr(frag.locals_.get(d.term.name), "is_logic", False)]
    if plain:
        out.append("  resident {")
        for d in plain:
            out.append(f"    {_term(d.term)} : {_states(d.states)}")
        out.append("  }")
    if frag.arcs:
        out.append("  graph {")
        for parent, child in frag.arcs:
            out.append(f"    {_term(parent)} -> {_term(child)}")
        out.append("  }")
    for d in logic:
        body = frag.locals_[d.term.name].term
        out.append(f"  logic {_term(d.term)} = {body.text}")
    for d in plain:
        _local(d.term.name, frag.locals_[d.term.name], out)
    out.append("}")


def serialize_mtheory(theory: MTheory) -> SourceText:
    out: list[str] = [f"theory {theory.name}", ""]
    out.append("types { " + ", ".join(theory.types) + " }")
    out.append("")
    if theory.entities:
        out.append("entities {")
        # one run per consecutive same-type group, preserving declaration order
        run_type = None
        run: list[str] = []
        for ident, type_name in theory.entities:
            if type_name != run_type and run:
                out.append(f"  {run_type}: " + " ".join(run))
                run = []
            run_type = type_name
            run.append(ident)
        if run:
            out.append(f"  {run_type}: " + " ".join(run))
        out.append("}")
        out.append("")
    for frag in theory.mfrags:
        _mfrag(frag, out)
        out.append("")
    return SourceText("\n".join(out).rstrip() + "\n", f"<serialized {theory.name}>")
