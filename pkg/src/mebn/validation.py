"""Theory-level consistency checks, run before any grounding.

A theory is accepted only when, over the registered finite domain:

* every RV template is resident in exactly one MFrag (its home);
* no RV instance is an ancestor of itself, and every ancestor chain is
  shorter than the depth bound (checked on the instance-level dependency
  graph formed from all type-correct instances, context-blind, with
  recursion edges following the declared ``Prev`` chains);
* fragments are structurally sound (declared parents exist, input terms
  are roots, argument types line up);
* every local expression passes the static LDL checks.

Acceptance is constructive: the checker records a topological order over
all formable instances and the maximum observed ancestor-chain depth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

from . import builtins as bi
from .ldl import (
    LocalExpression,
    LogicLocal,
    check_ldl_wellformed,
    enumerate_bindings,
    instantiate_term_args,
)
from .model import (
    EntityRegistry,
    EqContext,
    ConnectiveContext,
    MTheory,
    QuantifiedContext,
    RVInstance,
    RVTemplate,
    RVTerm,
)
from .parser import LTApp, LTAtom, LTConn, LTEq, LTQuant, LogicalTerm

DEFAULT_DEPTH_BOUND = 1000

NO_CYCLES = "NoCycles"
BOUNDED_DEPTH = "BoundedDepth"
UNIQUE_HOME = "UniqueHome"
TYPE_CHECK = "TypeCheck"


@dataclass(frozen=True)
class Violation:
    tag: str
    witnesses: tuple[str, ...]
    message: str

    def to_json(self) -> dict:
        return {"tag": self.tag, "witnesses": list(self.witnesses),
                "message": self.message}


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, tag: str, witnesses, message: str) -> None:
        self.violations.append(Violation(tag, tuple(witnesses), message))

    def extend(self, other: "ValidationReport") -> None:
        self.violations.extend(other.violations)

    def tags(self) -> tuple[str, ...]:
        return tuple(v.tag for v in self.violations)

    def render(self) -> str:
        if self.ok:
            return "theory accepted"
        lines = [f"{len(self.violations)} violation(s):"]
        for v in self.violations:
            lines.append(f"  [{v.tag}] {v.message}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_json() for v in self.violations]}


@dataclass(frozen=True)
class ValidatedMTheory:
    """A theory plus the evidence that every consistency check passed."""

    theory: MTheory
    registry: EntityRegistry
    depth_certificate: dict[str, int]  # template name -> longest chain (nodes)
    topo_order: tuple[str, ...]        # instance texts, parents first
    depth_bound: int

    @property
    def max_depth(self) -> int:
        return max(self.depth_certificate.values(), default=0)

    def templates(self) -> dict[str, RVTemplate]:
        cache = getattr(self, "_templates_cache", None)
        if cache is None:
            cache = self.theory.templates()
            object.__setattr__(self, "_templates_cache", cache)
        return cache


# ---------------------------------------------------------------------------
# unique home


def _used_rv_names(theory: MTheory) -> dict[str, str]:
    """Non-builtin RV names used as inputs/context/logic atoms -> one use site."""
    used: dict[str, str] = {}

    def note(name: str, where: str):
        if not bi.is_builtin_name(name):
            used.setdefault(name, where)

    def walk_logic(term: LogicalTerm, where: str):
        if isinstance(term, LTAtom):
            _walk_app(term.app, where)
        elif isinstance(term, LTEq):
            _walk_app(term.app, where)
        elif isinstance(term, LTConn):
            for o in term.operands:
                walk_logic(o, where)
        elif isinstance(term, LTQuant):
            walk_logic(term.body, where)

    def _walk_app(app: LTApp, where: str):
        note(app.name, where)
        for a in app.args:
            if isinstance(a, LTApp):
                _walk_app(a, where)

    def walk_context(ct, where: str):
        if isinstance(ct, RVTerm):
            note(ct.name, where)
        elif isinstance(ct, EqContext):
            note(ct.rv.name, where)
        elif isinstance(ct, ConnectiveContext):
            for o in ct.operands:
                walk_context(o, where)
        elif isinstance(ct, QuantifiedContext):
            walk_context(ct.body, where)

    for frag in theory.mfrags:
        for term in frag.inputs:
            note(term.name, f"input of {frag.name}")
        for ct in frag.context:
            walk_context(ct, f"context of {frag.name}")
        for rv, decl in frag.locals_.items():
            if isinstance(decl, LogicLocal):
                walk_logic(decl.term, f"logic body of {rv} in {frag.name}")
    return used


def check_unique_home(theory: MTheory) -> ValidationReport:
    """Every RV template must be resident in exactly one MFrag."""
    report = ValidationReport()
    homes_of: dict[str, list[str]] = {}
    for frag in theory.mfrags:
        for decl in frag.residents:
            homes_of.setdefault(decl.term.name, []).append(frag.name)
    for name, homes in sorted(homes_of.items()):
        if len(homes) > 1:
            report.add(UNIQUE_HOME, tuple(homes),
                       f"{name} is resident in {len(homes)} MFrags: "
                       f"{', '.join(homes)}")
    for name, where in sorted(_used_rv_names(theory).items()):
        if name not in homes_of:
            report.add(UNIQUE_HOME, (name,),
                       f"{name} (used as {where}) has no home MFrag")
    return report


# ---------------------------------------------------------------------------
# structural / type checks


def _template_for(theory: MTheory, name: str) -> Optional[RVTemplate]:
    return theory.templates().get(name)


def check_structure(theory: MTheory, registry: EntityRegistry) -> ValidationReport:
    report = ValidationReport()
    templates = theory.templates()
    for type_name in theory.types:
        if not registry.has_type(type_name):
            report.add(TYPE_CHECK, (type_name,), f"type {type_name} missing in registry")

    for frag in theory.mfrags:
        input_texts = {t.text for t in frag.inputs}
        context_texts = set()
        for ct in frag.context:
            if isinstance(ct, RVTerm):
                context_texts.add(ct.text)
        resident_texts = {r.term.text for r in frag.residents}
        overlap = context_texts & (input_texts | resident_texts)
        for text in sorted(overlap):
            report.add(TYPE_CHECK, (frag.name, text),
                       f"{frag.name}: {text} appears both as context and as "
                       f"input/resident; the sets must be disjoint")
        for parent, child in frag.arcs:
            if child.text in input_texts:
                report.add(TYPE_CHECK, (frag.name, child.text),
                           f"{frag.name}: input term {child.text} must be a root")

        var_types = dict(frag.vars)

        def check_term_against_home(term: RVTerm, where: str):
            if bi.is_builtin_name(term.name):
                if term.name == "Isa":
                    if len(term.args) != 2 or term.args[0].kind != "name" \
                            or term.args[0].value not in theory.types:
                        report.add(TYPE_CHECK, (frag.name, term.text),
                                   f"{frag.name}: Isa takes a declared type and an "
                                   f"entity argument, got {term.text}")
                return
            tpl = templates.get(term.name)
            if tpl is None:
                return  # reported by unique-home
            if len(term.args) != tpl.arity:
                report.add(TYPE_CHECK, (frag.name, term.text),
                           f"{frag.name}: {where} {term.text} has {len(term.args)} "
                           f"arguments, template declares {tpl.arity}")
                return
            for a, (pname, ptype) in zip(term.args, tpl.params):
                if a.kind in ("var", "prev"):
                    vtype = var_types.get(a.value)
                    if vtype and ptype and vtype != ptype:
                        report.add(TYPE_CHECK, (frag.name, term.text),
                                   f"{frag.name}: {term.text} binds {a.value}: "
                                   f"{vtype} to parameter {pname}: {ptype}")
                elif a.kind == "ident":
                    actual = registry.type_of(a.value)
                    if actual is not None and ptype and actual != ptype:
                        report.add(TYPE_CHECK, (frag.name, term.text),
                                   f"{frag.name}: {term.text} binds {a.value} "
                                   f"({actual}) to parameter {pname}: {ptype}")

        for term in frag.inputs:
            check_term_against_home(term, "input")
        for ct in frag.context:
            if isinstance(ct, RVTerm):
                check_term_against_home(ct, "context")
            elif isinstance(ct, EqContext):
                check_term_against_home(ct.rv, "context")

        # Prev() only on input terms referring to a resident of this fragment,
        # and only on arguments whose variable also parameterizes the resident
        for term in frag.inputs:
            if term.is_recursive_reference() and term.name not in frag.resident_names():
                report.add(TYPE_CHECK, (frag.name, term.text),
                           f"{frag.name}: Prev() is only allowed on recursive "
                           f"references to this fragment's residents")

    report.extend(check_locals(theory))
    return report


def check_locals(theory: MTheory) -> ValidationReport:
    """LDL well-formedness for every resident, folded into TypeCheck."""
    report = ValidationReport()
    templates = theory.templates()
    for frag in theory.mfrags:
        for decl in frag.residents:
            rv = decl.term.name
            local = frag.locals_.get(rv)
            if local is None:
                continue
            parents = []
            missing_parent = False
            for pterm in frag.parent_terms(rv):
                tpl = templates.get(pterm.name)
                if tpl is None:
                    missing_parent = True
                    continue
                parents.append(tpl)
            if missing_parent:
                continue  # unique-home already complains
            if isinstance(local, LocalExpression):
                own_vars = {a.value for a in decl.term.args if a.kind == "var"}
                for pattern in local.patterns():
                    for _, value in pattern.constraints:
                        if value.kind == "var" and value.value not in own_vars:
                            report.add(
                                TYPE_CHECK, (frag.name, rv),
                                f"{frag.name}: local {rv} compares against "
                                f"{value.value}, which is not an argument of "
                                f"{decl.term.text}")
            for diag in check_ldl_wellformed(local, decl.states, parents):
                report.add(TYPE_CHECK, (frag.name, rv, diag.code),
                           f"{frag.name}: local {rv}: {diag.message}")
    return report


# ---------------------------------------------------------------------------
# instance-level acyclicity and causal depth


def _logic_atom_instances(term: LogicalTerm, binding: dict[str, str],
                          registry: EntityRegistry) -> list[RVInstance]:
    """Ground atoms a logic-defined resident depends on, all bindings expanded."""
    out: list[RVInstance] = []

    def app_instance(app: LTApp, b: dict[str, str]) -> RVInstance:
        args = []
        for a in app.args:
            if isinstance(a, LTApp):
                inner = app_instance(a, b)
                out.append(inner)
                args.append(inner)
            elif a.kind == "var":
                args.append(b[a.value])
            else:
                args.append(a.value)
        return RVInstance(app.name, tuple(args))

    def walk(t: LogicalTerm, b: dict[str, str]):
        if isinstance(t, (LTAtom, LTEq)):
            out.append(app_instance(t.app, b))
        elif isinstance(t, LTConn):
            for o in t.operands:
                walk(o, b)
        elif isinstance(t, LTQuant):
            for ident in registry.identifiers(t.type_name):
                inner = dict(b)
                inner[t.var] = ident
                walk(t.body, inner)

    walk(term, binding)
    return out


def _all_instances(theory: MTheory, registry: EntityRegistry) -> list[RVInstance]:
    instances = []
    for name, tpl in sorted(theory.templates().items()):
        domains = [registry.identifiers(ptype) if ptype else ()
                   for _, ptype in tpl.params]
        for combo in itertools.product(*domains):
            instances.append(RVInstance(name, combo))
    return instances


def _instance_parents(theory: MTheory, registry: EntityRegistry,
                      inst: RVInstance) -> list[RVInstance]:
    """Context-blind dependency edges used for the acyclicity check."""
    frag = theory.home_mfrag(inst.name)
    decl = frag.resident_decl(inst.name)
    local = frag.locals_.get(inst.name)
    bound = {a.value: ident for a, ident in zip(decl.term.args, inst.simple_args())}
    parents: list[RVInstance] = []
    if isinstance(local, LogicLocal):
        return _logic_atom_instances(local.term, bound, registry)
    parent_terms = frag.parent_terms(inst.name)
    selector_terms = [ct.rv for ct in frag.context if isinstance(ct, EqContext)
                      and not bi.is_builtin_name(ct.rv.name)]
    for binding in enumerate_bindings(frag, bound, registry):
        for pterm in parent_terms + tuple(selector_terms):
            if bi.is_builtin_name(pterm.name):
                continue
            args = instantiate_term_args(pterm, binding, registry)
            if args is None:
                continue  # recursion floor
            parents.append(RVInstance(pterm.name, args))
    return parents


def check_instance_acyclicity(theory: MTheory, registry: EntityRegistry,
                              depth_bound: int = DEFAULT_DEPTH_BOUND
                              ) -> tuple[ValidationReport, dict[str, int], tuple[str, ...]]:
    """Reject self-ancestors; certify every ancestor chain within the bound.

    Returns the report plus, when acyclic, the per-template maximum chain
    length (counted in nodes) and a parents-first topological order.
    """
    report = ValidationReport()
    instances = _all_instances(theory, registry)
    texts = {i.text: i for i in instances}
    edges: dict[str, list[str]] = {t: [] for t in texts}
    for inst in instances:
        for parent in _instance_parents(theory, registry, inst):
            if parent.text not in texts:
                texts[parent.text] = parent
                edges[parent.text] = []
            edges[inst.text].append(parent.text)

    # iterative DFS over parent edges: cycle detection with a concrete witness
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {t: WHITE for t in texts}
    stack_path: list[str] = []

    def find_cycle(start: str) -> Optional[list[str]]:
        stack = [(start, iter(edges[start]))]
        color[start] = GRAY
        stack_path.append(start)
        while stack:
            node, it = stack[-1]
            advanced = False
            for parent in it:
                if color[parent] == GRAY:
                    pos = stack_path.index(parent)
                    return stack_path[pos:] + [parent]
                if color[parent] == WHITE:
                    color[parent] = GRAY
                    stack_path.append(parent)
                    stack.append((parent, iter(edges[parent])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                stack_path.pop()
                stack.pop()
        return None

    for text in sorted(texts):
        if color[text] == WHITE:
            cycle = find_cycle(text)
            if cycle:
                report.add(NO_CYCLES, tuple(cycle),
                           "instance dependency cycle: " + " <- ".join(cycle))
                return report, {}, ()

    # longest ancestor chain per instance (nodes), via parents-first order
    order: list[str] = []
    state = {t: 0 for t in texts}
    for text in sorted(texts):
        if state[text]:
            continue
        stack = [(text, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                state[node] = 2
                order.append(node)
                continue
            if state[node]:
                continue
            state[node] = 1
            stack.append((node, True))
            for parent in edges[node]:
                if not state[parent]:
                    stack.append((parent, False))
    depth: dict[str, int] = {}
    for text in order:
        parents = edges[text]
        depth[text] = 1 + max((depth[p] for p in parents), default=0)
    over = [t for t in order if depth[t] > depth_bound]
    if over:
        worst = max(over, key=lambda t: depth[t])
        report.add(BOUNDED_DEPTH, (worst,),
                   f"ancestor chain of length {depth[worst]} at {worst} exceeds "
                   f"the depth bound {depth_bound} (no cycle found)")
    cert: dict[str, int] = {}
    for text, d in depth.items():
        name = text.split("(", 1)[0]
        cert[name] = max(cert.get(name, 0), d)
    return report, cert, tuple(order)


# ---------------------------------------------------------------------------
# entry point


def validate(theory: MTheory, registry: Optional[EntityRegistry] = None,
             depth_bound: int = DEFAULT_DEPTH_BOUND
             ) -> Union[ValidatedMTheory, ValidationReport]:
    """Run every check; return a certified theory or the aggregated report."""
    if registry is None:
        registry = theory.registry()
    report = ValidationReport()
    report.extend(check_unique_home(theory))
    unique_home_ok = report.ok
    report.extend(check_structure(theory, registry))
    cert: dict[str, int] = {}
    topo: tuple[str, ...] = ()
    if unique_home_ok:
        acyc, cert, topo = check_instance_acyclicity(theory, registry, depth_bound)
        report.extend(acyc)
    if not report.ok:
        return report
    return ValidatedMTheory(theory, registry, cert, topo, depth_bound)
