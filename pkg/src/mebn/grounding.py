"""SSBN construction: backward-chain from targets and findings, resolve
contexts, enumerate bindings, compile CPTs, prune to the minimal network.

The grounder works a queue seeded with the query targets and every finding
subject. For each instance it binds the home MFrag, enumerates the remaining
free variables over the registry and resolves each context term:

* builtin terms (Isa, literal equality) evaluate directly;
* finding-fixed terms read the finding;
* equality over an identifier-valued RV without a finding becomes an
  uncertain reference: the selector instance joins the node's parents and
  the binding only counts in CPT rows where the selector takes the
  required value;
* anything else is unresolvable and rejected.

Bindings whose context resolves False or Absurd contribute nothing; True
bindings contribute their parent instances, which are enqueued in turn.
Recursive inputs follow the declared decreasing argument until the chain
floor. Construction stops when the graph closes, or fails at the limits.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import builtins as bi
from .errors import (
    GroundingError,
    LimitExceeded,
    ParentProductExceeded,
    TypeViolation,
    UnresolvableContext,
)
from .ldl import (
    ABSENT,
    InfluenceCounts,
    LocalExpression,
    LogicLocal,
    TableLocal,
    UniformLocal,
    eval_local_distribution,
    enumerate_bindings,
    instantiate_term_args,
)
from .model import (
    ABSURD,
    FALSE,
    TRUE,
    Arg,
    ContextValue,
    CV_ABSURD,
    CV_FALSE,
    ConnectiveContext,
    EntityRegistry,
    EqContext,
    Finding,
    LexEqContext,
    QuantifiedContext,
    RVInstance,
    RVTerm,
)
from .parser import Evidence, LTApp, LTAtom, LTConn, LTEq, LTQuant, LogicalTerm
from .validation import ValidatedMTheory


@dataclass(frozen=True)
class GroundingLimits:
    max_depth: int = 64
    max_nodes: int = 20000
    max_parent_product: int = 1_000_000

    def __post_init__(self):
        if self.max_depth <= 0 or self.max_nodes <= 0 or self.max_parent_product <= 0:
            raise ValueError("grounding limits must be positive")


# ---------------------------------------------------------------------------
# context resolution


@dataclass(frozen=True)
class ContextResolution:
    """Resolved(value) or an uncertain reference through a selector node."""

    kind: str  # resolved | uncertain
    value: Optional[ContextValue] = None
    selector: Optional[RVInstance] = None
    candidates: tuple[str, ...] = ()
    required: Optional[str] = None
    negated: bool = False

    @staticmethod
    def resolved(value: ContextValue) -> "ContextResolution":
        return ContextResolution("resolved", value=value)

    @staticmethod
    def uncertain(selector: RVInstance, candidates: tuple[str, ...],
                  required: str, negated: bool) -> "ContextResolution":
        return ContextResolution("uncertain", selector=selector,
                                 candidates=candidates, required=required,
                                 negated=negated)

    @property
    def is_uncertain(self) -> bool:
        return self.kind == "uncertain"


def _check_instance_types(inst: RVInstance, v: ValidatedMTheory) -> Optional[ContextValue]:
    """Absurd when any argument is unregistered or of a contradicting type."""
    tpl = v.templates().get(inst.name)
    if tpl is None:
        return None
    for ident, (_, ptype) in zip(inst.simple_args(), tpl.params):
        actual = v.registry.type_of(ident)
        if actual is None:
            return CV_ABSURD
        if ptype and actual != ptype:
            return CV_ABSURD
    return None


def resolve_context(ctx, v: ValidatedMTheory,
                    findings: Union[Evidence, Sequence[Finding]],
                    binding: Optional[Mapping[str, str]] = None) -> ContextResolution:
    """Resolve one context term instance (or a term under a binding).

    Accepts a ground RVInstance, or any context term together with the
    binding that grounds it. Raises UnresolvableContext for context RVs that
    are neither builtin, finding-fixed, nor enumerated references.
    """
    if isinstance(findings, Evidence):
        evidence = findings
    else:
        evidence = Evidence(findings=tuple(findings))
    finding_map = {f.subject.text: f.value for f in evidence.findings}
    candidates = evidence.candidate_map()
    binding = dict(binding or {})
    return _resolve(ctx, v, finding_map, candidates, binding)


def _resolve(ctx, v: ValidatedMTheory, finding_map: dict[str, str],
             candidates: dict[str, tuple[str, ...]],
             binding: Mapping[str, str]) -> ContextResolution:
    registry = v.registry

    if isinstance(ctx, RVInstance):
        ctx = RVTerm(ctx.name, tuple(Arg.ident(a) for a in ctx.simple_args()))

    if isinstance(ctx, RVTerm):
        if ctx.name == "Isa":
            type_name = bi.resolve_arg(ctx.args[0], binding)
            ident = bi.resolve_arg(ctx.args[1], binding)
            return ContextResolution.resolved(registry.eval_isa(type_name, ident))
        if bi.is_builtin_name(ctx.name):
            raise UnresolvableContext(
                f"{ctx.name} is not boolean and cannot gate a context")
        args = instantiate_term_args(ctx, binding, registry)
        if args is None:
            return ContextResolution.resolved(CV_ABSURD)
        inst = RVInstance(ctx.name, args)
        absurd = _check_instance_types(inst, v)
        if absurd is not None:
            return ContextResolution.resolved(absurd)
        value = finding_map.get(inst.text)
        if value is None:
            raise UnresolvableContext(
                f"context {inst.text} has no finding and is not a builtin or "
                f"an enumerated reference")
        if value not in (TRUE, FALSE, ABSURD):
            raise UnresolvableContext(
                f"context {inst.text} has non-boolean finding {value}")
        return ContextResolution.resolved(ContextValue(value))

    if isinstance(ctx, EqContext):
        rhs = bi.resolve_arg(ctx.rhs, binding)
        if ctx.rv.name in ("Identity", "Type"):
            args = instantiate_term_args(ctx.rv, binding, registry)
            inst = RVInstance(ctx.rv.name, args)
            value = (registry.eval_identity(args[0]) if ctx.rv.name == "Identity"
                     else registry.eval_type(args[0]))
            if value == ABSURD:
                return ContextResolution.resolved(CV_ABSURD)
            same = value == rhs
            return ContextResolution.resolved(
                ContextValue.from_bool(not same if ctx.negated else same))
        args = instantiate_term_args(ctx.rv, binding, registry)
        if args is None:
            return ContextResolution.resolved(CV_ABSURD)
        inst = RVInstance(ctx.rv.name, args)
        absurd = _check_instance_types(inst, v)
        if absurd is not None:
            return ContextResolution.resolved(absurd)
        value = finding_map.get(inst.text)
        if value is not None:
            if value == ABSURD:
                return ContextResolution.resolved(CV_ABSURD)
            same = value == rhs
            return ContextResolution.resolved(
                ContextValue.from_bool(not same if ctx.negated else same))
        tpl = v.templates().get(inst.name)
        if tpl is None or tpl.states.kind != "ref":
            raise UnresolvableContext(
                f"context {inst.text} = {rhs} is uncertain and {inst.name} is "
                f"not identifier-valued; only enumerated references may stay "
                f"unresolved")
        cands = tpl.states.declared(registry, candidates.get(inst.text))
        if not ctx.negated and rhs not in cands:
            return ContextResolution.resolved(CV_FALSE)
        return ContextResolution.uncertain(inst, cands, rhs, ctx.negated)

    if isinstance(ctx, LexEqContext):
        return ContextResolution.resolved(bi.eval_lex_equality(ctx, binding, registry))

    if isinstance(ctx, (ConnectiveContext, QuantifiedContext)):
        if isinstance(ctx, QuantifiedContext):
            values = []
            for ident in registry.identifiers(ctx.type_name):
                inner = dict(binding)
                inner[ctx.var] = ident
                sub = _resolve(ctx.body, v, finding_map, candidates, inner)
                if sub.is_uncertain:
                    raise UnresolvableContext(
                        f"uncertain reference under a quantifier: {ctx.text}")
                values.append(sub.value)
            op = "and" if ctx.quantifier == "forall" else "or"
            return ContextResolution.resolved(bi.apply_connective(op, values))
        values = []
        for operand in ctx.operands:
            sub = _resolve(operand, v, finding_map, candidates, binding)
            if sub.is_uncertain:
                raise UnresolvableContext(
                    f"uncertain reference under a connective: {ctx.text}")
            values.append(sub.value)
        return ContextResolution.resolved(bi.apply_connective(ctx.op, values))

    raise UnresolvableContext(f"unsupported context term {ctx!r}")


# ---------------------------------------------------------------------------
# ground nodes


@dataclass(frozen=True)
class Contribution:
    """One context-satisfying binding's footprint on a node's CPT."""

    binding: tuple[tuple[str, str], ...]
    parents: tuple[tuple[str, Optional[RVInstance]], ...]  # (term name, instance)
    gates: tuple[tuple[RVInstance, str, bool], ...]  # (selector, required, negated)


@dataclass
class CPT:
    """Rows over the full parent-state product, row-major, numpy-backed.

    ``table[i]`` is the child distribution for the i-th parent combination in
    ``itertools.product(*parent_states)`` order.
    """

    parent_states: tuple[tuple[str, ...], ...]
    child_states: tuple[str, ...]
    table: np.ndarray

    def row_index(self, parent_values: Sequence[str]) -> int:
        idx = 0
        for states, value in zip(self.parent_states, parent_values):
            idx = idx * len(states) + states.index(value)
        return idx

    def row(self, parent_values: Sequence[str]) -> tuple[float, ...]:
        return tuple(float(x) for x in self.table[self.row_index(parent_values)])

    def combos(self):
        return itertools.product(*self.parent_states)


def make_cpt(parent_states: tuple[tuple[str, ...], ...],
             child_states: tuple[str, ...], rows: Iterable) -> CPT:
    n = 1
    for states in parent_states:
        n *= len(states)
    table = np.empty((n, len(child_states)), dtype=float)
    count = 0
    for i, row in enumerate(rows):
        table[i] = row
        count += 1
    if count != n:
        raise GroundingError(f"CPT expects {n} rows, got {count}")
    return CPT(parent_states, child_states, table)


@dataclass
class GroundNode:
    instance: RVInstance
    states: tuple[str, ...]
    parents: tuple[RVInstance, ...]
    cpt: CPT
    kind: str  # domain | logical | builtin | mux
    home: Optional[str] = None
    binding: tuple[tuple[str, str], ...] = ()
    contributions: tuple[Contribution, ...] = ()

    @property
    def text(self) -> str:
        return self.instance.text


@dataclass
class SSBN:
    nodes: dict[str, GroundNode]
    targets: tuple[str, ...]
    evidence: tuple[Finding, ...]
    limits: GroundingLimits

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {t: [] for t in self.nodes}
        for node in self.nodes.values():
            for p in node.parents:
                out[p.text].append(node.text)
        return {t: sorted(c) for t, c in out.items()}

    def node(self, text: str) -> GroundNode:
        return self.nodes[text]

    def sorted_nodes(self) -> list[GroundNode]:
        return [self.nodes[t] for t in sorted(self.nodes)]


# ---------------------------------------------------------------------------
# logical terms -> instance trees


def lt_to_instance(term: LogicalTerm, registry: EntityRegistry,
                   binding: Optional[Mapping[str, str]] = None) -> RVInstance:
    """Compile a logical term into a (possibly nested) instance tree."""
    binding = dict(binding or {})

    def app_instance(app: LTApp) -> RVInstance:
        args: list = []
        for a in app.args:
            if isinstance(a, LTApp):
                args.append(app_instance(a))
            elif a.kind == "var":
                if a.value not in binding:
                    raise GroundingError(f"{app.text}: unbound variable {a.value}")
                args.append(binding[a.value])
            elif a.kind == "prev":
                raise GroundingError("Prev() is not allowed in logical terms")
            else:
                args.append(a.value)
        return RVInstance(app.name, tuple(args))

    if isinstance(term, LTAtom):
        return app_instance(term.app)
    if isinstance(term, LTEq):
        value = (binding[term.value.value] if term.value.kind == "var"
                 else term.value.value)
        return RVInstance("Eq", (app_instance(term.app), value))
    if isinstance(term, LTConn):
        operands = [lt_to_instance(o, registry, binding) for o in term.operands]
        if term.op == "not":
            return RVInstance("Not", (operands[0],))
        if term.op in ("implies", "iff"):
            if len(operands) != 2:
                raise GroundingError(f"{term.op} takes exactly two operands")
            return RVInstance(term.op.capitalize(), tuple(operands))
        return bi.fold_connective(term.op.capitalize(), operands)
    if isinstance(term, LTQuant):
        idents = registry.identifiers(term.type_name)
        if not idents:
            from .errors import EmptyDomain
            raise EmptyDomain(f"no registered identifiers of type {term.type_name}")
        operands = []
        for ident in idents:
            inner = dict(binding)
            inner[term.var] = ident
            operands.append(lt_to_instance(term.body, registry, inner))
        kind = "And" if term.quantifier == "forall" else "Or"
        return bi.fold_connective(kind, operands)
    raise GroundingError(f"unsupported logical term {term!r}")


# ---------------------------------------------------------------------------
# grounder


CONNECTIVE_ARITY = {"And": 2, "Or": 2, "Not": 1, "Implies": 2, "Iff": 2}


def _point_mass(states: Sequence[str], value: str) -> tuple[float, ...]:
    return tuple(1.0 if s == value else 0.0 for s in states)


class Grounder:
    def __init__(self, v: ValidatedMTheory, evidence: Evidence,
                 limits: GroundingLimits):
        self.v = v
        self.registry = v.registry
        self.templates = v.templates()
        self.evidence = evidence
        self.finding_map = {f.subject.text: f.value for f in evidence.findings}
        self.candidates = evidence.candidate_map()
        self.limits = limits
        self.nodes: dict[str, GroundNode] = {}
        self.queue: deque[tuple[RVInstance, int]] = deque()

    # -- state spaces --------------------------------------------------------

    def instance_states(self, inst: RVInstance) -> tuple[str, ...]:
        if inst.name in ("Isa", "Eq") or inst.name in CONNECTIVE_ARITY:
            return (TRUE, FALSE, ABSURD)
        if inst.name in ("Identity", "Type"):
            states, _ = bi.builtin_prior(inst, self.registry)
            return states
        tpl = self.templates.get(inst.name)
        if tpl is None:
            raise GroundingError(f"unknown RV {inst.name}")
        gate = self.candidates.get(inst.text) if all(
            isinstance(a, str) for a in inst.args) else None
        return tpl.states.with_absurd(self.registry, gate)

    # -- queue ---------------------------------------------------------------

    def enqueue(self, inst: RVInstance, depth: int) -> None:
        if inst.text in self.nodes:
            return
        if depth > self.limits.max_depth:
            raise LimitExceeded(
                "max_depth",
                f"grounding depth {depth} exceeds max_depth "
                f"{self.limits.max_depth} at {inst.text}")
        self.queue.append((inst, depth))

    def build(self, targets: Sequence[RVInstance]) -> SSBN:
        for t in targets:
            self.enqueue(t, 0)
        for f in self.evidence.findings:
            self.enqueue(f.subject, 0)
        while self.queue:
            inst, depth = self.queue.popleft()
            if inst.text in self.nodes:
                continue
            if len(self.nodes) >= self.limits.max_nodes:
                raise LimitExceeded(
                    "max_nodes",
                    f"SSBN exceeds max_nodes {self.limits.max_nodes}")
            self.ground(inst, depth)
        target_texts = tuple(t.text for t in targets)
        for t in target_texts:
            if t not in self.nodes:
                raise GroundingError(f"target {t} was never grounded")
        return SSBN(self.nodes, target_texts, self.evidence.findings, self.limits)

    # -- node constructors ----------------------------------------------------

    def ground(self, inst: RVInstance, depth: int) -> None:
        if inst.name in CONNECTIVE_ARITY:
            self.ground_connective(inst, depth)
        elif inst.name == "Eq":
            self.ground_equality(inst, depth)
        elif inst.name in ("Isa", "Identity", "Type"):
            self.ground_builtin(inst)
        elif any(isinstance(a, RVInstance) for a in inst.args):
            self.ground_mux(inst, depth)
        else:
            self.ground_domain(inst, depth)

    def _add(self, node: GroundNode, depth: int) -> None:
        self.nodes[node.text] = node
        for p in sorted(node.parents, key=lambda i: i.text):
            self.enqueue(p, depth + 1)

    def _check_parent_product(self, inst: RVInstance,
                              parent_states: Sequence[tuple[str, ...]]) -> None:
        product = 1
        for states in parent_states:
            product *= len(states)
            if product > self.limits.max_parent_product:
                raise ParentProductExceeded(
                    f"{inst.text}: parent state product exceeds "
                    f"{self.limits.max_parent_product}")

    def ground_builtin(self, inst: RVInstance) -> None:
        states, value = bi.builtin_prior(inst, self.registry)
        cpt = make_cpt((), states, [_point_mass(states, value)])
        self._add(GroundNode(inst, states, (), cpt, "builtin"), 0)

    def ground_connective(self, inst: RVInstance, depth: int) -> None:
        arity = CONNECTIVE_ARITY[inst.name]
        if len(inst.args) != arity or not all(
                isinstance(a, RVInstance) for a in inst.args):
            raise GroundingError(f"{inst.text}: connective operands must be RV terms")
        operands: tuple[RVInstance, ...] = inst.args  # type: ignore[assignment]
        parent_states = tuple(self.instance_states(o) for o in operands)
        self._check_parent_product(inst, parent_states)
        states = (TRUE, FALSE, ABSURD)
        op = inst.name.lower()
        cpt = make_cpt(parent_states, states,
                       (_point_mass(states, bi.connective_value(op, combo))
                        for combo in itertools.product(*parent_states)))
        self._add(GroundNode(inst, states, operands, cpt, "logical"), depth)

    def ground_equality(self, inst: RVInstance, depth: int) -> None:
        if len(inst.args) != 2:
            raise GroundingError(f"{inst.text}: Eq takes two operands")
        operands = [a for a in inst.args if isinstance(a, RVInstance)]
        constants = [a for a in inst.args if isinstance(a, str)]
        if not operands:
            raise GroundingError(f"{inst.text}: Eq needs at least one RV operand")
        parent_states = tuple(self.instance_states(o) for o in operands)
        self._check_parent_product(inst, parent_states)
        states = (TRUE, FALSE, ABSURD)

        def rows():
            for combo in itertools.product(*parent_states):
                values = list(combo) + constants
                yield _point_mass(states, bi.equality_value(values[0], values[1]))

        cpt = make_cpt(parent_states, states, rows())
        self._add(GroundNode(inst, states, tuple(operands), cpt, "logical"), depth)

    def ground_mux(self, inst: RVInstance, depth: int) -> None:
        """Function composition: inner values select which instance to copy."""
        tpl = self.templates.get(inst.name)
        if tpl is None:
            raise GroundingError(f"unknown RV {inst.name}")
        selector_positions = [i for i, a in enumerate(inst.args)
                              if isinstance(a, RVInstance)]
        selectors: list[RVInstance] = [inst.args[i] for i in selector_positions]
        selector_states = []
        for sel in selectors:
            states = self.instance_states(sel)
            if not all(s == ABSURD or self.registry.type_of(s) is not None
                       for s in states):
                raise GroundingError(
                    f"{inst.text}: {sel.text} is not identifier-valued and "
                    f"cannot be composed")
            selector_states.append(states)
        inner_map: dict[tuple[str, ...], RVInstance] = {}
        for combo in itertools.product(*(tuple(s for s in states if s != ABSURD)
                                         for states in selector_states)):
            args = list(inst.args)
            for pos, value in zip(selector_positions, combo):
                args[pos] = value
            inner_map[combo] = RVInstance(inst.name, tuple(args))
        child_states = tpl.states.with_absurd(self.registry)
        parents = tuple(selectors) + tuple(
            inner_map[c] for c in sorted(inner_map))
        parent_states = tuple(self.instance_states(p) for p in parents)
        self._check_parent_product(inst, parent_states)
        n_sel = len(selectors)
        inner_index = {inner_map[c].text: n_sel + i
                       for i, c in enumerate(sorted(inner_map))}

        def rows():
            for combo in itertools.product(*parent_states):
                chosen = combo[:n_sel]
                if any(v == ABSURD for v in chosen):
                    value = ABSURD
                else:
                    value = combo[inner_index[inner_map[chosen].text]]
                if value not in child_states:
                    raise GroundingError(
                        f"{inst.text}: selected value {value} is outside the "
                        f"state space of {inst.name}")
                yield _point_mass(child_states, value)

        cpt = make_cpt(parent_states, child_states, rows())
        self._add(GroundNode(inst, child_states, parents, cpt, "mux"), depth)

    # -- domain nodes ----------------------------------------------------------

    def ground_domain(self, inst: RVInstance, depth: int) -> None:
        tpl = self.templates.get(inst.name)
        if tpl is None:
            raise GroundingError(f"unknown RV {inst.name}")
        for ident, (pname, ptype) in zip(inst.simple_args(), tpl.params):
            actual = self.registry.type_of(ident)
            if actual is None:
                raise GroundingError(
                    f"{inst.text}: identifier {ident} is not registered")
            if ptype and actual != ptype:
                raise TypeViolation(
                    f"{inst.text}: {ident} is a {actual}, parameter {pname} "
                    f"expects {ptype}")
        home = self.v.theory.home_mfrag(inst.name)
        local = home.locals_[inst.name]
        decl = home.resident_decl(inst.name)
        binding0 = {a.value: ident
                    for a, ident in zip(decl.term.args, inst.simple_args())}
        states = self.instance_states(inst)

        if isinstance(local, LogicLocal):
            root = lt_to_instance(local.term, self.registry, binding0)
            parent_states = (self.instance_states(root),)
            cpt = make_cpt(parent_states, states,
                           (_point_mass(states, value)
                            for (value,) in itertools.product(*parent_states)))
            self._add(GroundNode(inst, states, (root,), cpt, "domain",
                                 home=home.name,
                                 binding=tuple(sorted(binding0.items()))), depth)
            return

        if isinstance(local, UniformLocal):
            declared = [s for s in states if s != ABSURD]
            row = tuple(1.0 / len(declared) if s != ABSURD else 0.0 for s in states)
            cpt = make_cpt((), states, [row])
            self._add(GroundNode(inst, states, (), cpt, "domain",
                                 home=home.name,
                                 binding=tuple(sorted(binding0.items()))), depth)
            return

        if isinstance(local, TableLocal):
            raise GroundingError(f"{inst.text}: table locals are builtin-only")

        assert isinstance(local, LocalExpression)
        contributions = []
        parent_set: dict[str, RVInstance] = {}
        parent_terms = home.parent_terms(inst.name)
        for binding in enumerate_bindings(home, binding0, self.registry):
            gates: list[tuple[RVInstance, str, bool]] = []
            keep = True
            for ctx in home.context:
                res = _resolve(ctx, self.v, self.finding_map, self.candidates, binding)
                if res.is_uncertain:
                    gates.append((res.selector, res.required, res.negated))
                elif not res.value.is_true():
                    keep = False
                    break
            if not keep:
                continue
            pairs: list[tuple[str, Optional[RVInstance]]] = []
            for pterm in parent_terms:
                args = instantiate_term_args(pterm, binding, self.registry)
                if args is None:
                    pairs.append((pterm.name, None))
                    continue
                pinst = RVInstance(pterm.name, args)
                pairs.append((pterm.name, pinst))
                parent_set.setdefault(pinst.text, pinst)
            for sel, _, _ in gates:
                parent_set.setdefault(sel.text, sel)
            contributions.append(Contribution(
                tuple(sorted(binding.items())), tuple(pairs), tuple(gates)))

        parents = tuple(parent_set[t] for t in sorted(parent_set))
        expr = local.substitute(binding0)
        cpt = self.compile_cpt(inst, states, parents, expr, contributions)
        self._add(GroundNode(inst, states, parents, cpt, "domain",
                             home=home.name,
                             binding=tuple(sorted(binding0.items())),
                             contributions=tuple(contributions)), depth)

    def compile_cpt(self, inst: RVInstance, states: tuple[str, ...],
                    parents: tuple[RVInstance, ...], expr: LocalExpression,
                    contributions: Sequence[Contribution]) -> CPT:
        parent_states = tuple(self.instance_states(p) for p in parents)
        self._check_parent_product(inst, parent_states)
        absurd_aware = expr.mentions_absurd_pattern()
        absurd_row = _point_mass(states, ABSURD)
        index = {p.text: i for i, p in enumerate(parents)}
        # precompiled contribution footprints: column indices into the row
        compiled = []
        for contrib in contributions:
            gates = tuple((index[sel.text], required, negated)
                          for sel, required, negated in contrib.gates)
            cols = tuple((name, index[p.text] if p is not None else None)
                         for name, p in contrib.parents)
            compiled.append((gates, cols))
        # distributions depend on the row only through the count tallies, so
        # rows sharing a tally signature share their distribution
        cache: dict[tuple, tuple[float, ...]] = {}

        def rows():
            for combo in itertools.product(*parent_states):
                if not absurd_aware and ABSURD in combo:
                    yield absurd_row
                    continue
                tallies: dict[tuple, int] = {}
                for gates, cols in compiled:
                    active = True
                    for col, required, negated in gates:
                        value = combo[col]
                        if value == ABSURD:
                            active = False
                        elif negated:
                            active = value != required
                        else:
                            active = value == required
                        if not active:
                            break
                    if not active:
                        continue
                    config = tuple((name, combo[col] if col is not None else ABSENT)
                                   for name, col in cols)
                    tallies[config] = tallies.get(config, 0) + 1
                key = tuple(sorted(tallies.items()))
                row = cache.get(key)
                if row is None:
                    probs = eval_local_distribution(
                        expr, InfluenceCounts(tallies), states)
                    row = tuple(probs[s] for s in states)
                    cache[key] = row
                yield row

        return make_cpt(parent_states, states, rows())


def build_ssbn(v: ValidatedMTheory, findings: Union[Evidence, Sequence[Finding]],
               targets: Sequence[Union[RVInstance, LogicalTerm]],
               limits: Optional[GroundingLimits] = None) -> SSBN:
    """Ground the minimal closure of targets and finding subjects."""
    limits = limits or GroundingLimits()
    evidence = findings if isinstance(findings, Evidence) \
        else Evidence(findings=tuple(findings))
    grounder = Grounder(v, evidence, limits)
    instances = []
    for t in targets:
        if isinstance(t, RVInstance):
            instances.append(t)
        else:
            instances.append(lt_to_instance(t, v.registry))
    return grounder.build(instances)


# ---------------------------------------------------------------------------
# pruning


def _bayes_ball(ssbn: SSBN, targets: Sequence[str],
                observed: set[str]) -> tuple[set[str], set[str]]:
    """Requisite-probability nodes and visited evidence, via ball passing."""
    parents = {t: [p.text for p in n.parents] for t, n in ssbn.nodes.items()}
    children = ssbn.children()
    top: set[str] = set()
    bottom: set[str] = set()
    visited: set[str] = set()
    schedule = deque((t, "child") for t in targets)
    while schedule:
        node, direction = schedule.popleft()
        visited.add(node)
        if direction == "child":
            if node in observed:
                continue
            if node not in top:
                top.add(node)
                schedule.extend((p, "child") for p in parents[node])
            if node not in bottom:
                bottom.add(node)
                schedule.extend((c, "parent") for c in children[node])
        else:
            if node in observed:
                if node not in top:
                    top.add(node)
                    schedule.extend((p, "child") for p in parents[node])
            elif node not in bottom:
                bottom.add(node)
                schedule.extend((c, "parent") for c in children[node])
    return top, visited & observed


def prune_ssbn(ssbn: SSBN) -> SSBN:
    """Drop barren leaves and everything d-separated from the targets.

    The kept set is the ancestral closure of the targets, the requisite
    nodes found by ball passing, and the evidence nodes the ball reached;
    target posteriors are provably unchanged.
    """
    observed = {f.subject.text for f in ssbn.evidence if f.subject.text in ssbn.nodes}
    top, visited_evidence = _bayes_ball(ssbn, ssbn.targets, observed)
    keep = set(ssbn.targets) | top | visited_evidence
    parents = {t: [p.text for p in n.parents] for t, n in ssbn.nodes.items()}
    stack = list(keep)
    while stack:
        node = stack.pop()
        for p in parents[node]:
            if p not in keep:
                keep.add(p)
                stack.append(p)
    nodes = {t: n for t, n in ssbn.nodes.items() if t in keep}
    evidence = tuple(f for f in ssbn.evidence if f.subject.text in keep)
    return SSBN(nodes, ssbn.targets, evidence, ssbn.limits)


# ---------------------------------------------------------------------------
# exports


def export_dot(ssbn: SSBN) -> str:
    """Deterministic DOT rendering; targets double-ringed, evidence filled."""
    observed = {f.subject.text for f in ssbn.evidence}
    lines = ["digraph ssbn {", "  rankdir=TB;", "  node [shape=ellipse];"]
    for node in ssbn.sorted_nodes():
        attrs = []
        if node.text in ssbn.targets:
            attrs.append("peripheries=2")
        if node.text in observed:
            attrs.append("style=filled")
            attrs.append("fillcolor=lightgray")
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        lines.append(f'  "{node.text}"{suffix};')
    arcs = []
    for node in ssbn.sorted_nodes():
        for p in node.parents:
            arcs.append(f'  "{p.text}" -> "{node.text}";')
    lines.extend(sorted(arcs))
    lines.append("}")
    return "\n".join(lines) + "\n"


def ssbn_to_json(ssbn: SSBN) -> dict:
    """Full SSBN dump: nodes, arcs and CPT rows, deterministically ordered."""
    observed = {f.subject.text: f.value for f in ssbn.evidence}
    nodes = []
    for node in ssbn.sorted_nodes():
        rows = []
        for i, combo in enumerate(node.cpt.combos()):
            rows.append({"parents": list(combo),
                         "probs": [float(x) for x in node.cpt.table[i]]})
        nodes.append({
            "id": node.text,
            "kind": node.kind,
            "states": list(node.states),
            "parents": [p.text for p in node.parents],
            "home_mfrag": node.home,
            "binding": [list(b) for b in node.binding],
            "target": node.text in ssbn.targets,
            "evidence": observed.get(node.text),
            "cpt": rows,
        })
    arcs = sorted((p.text, n.text) for n in ssbn.nodes.values() for p in n.parents)
    return {
        "nodes": nodes,
        "arcs": [list(a) for a in arcs],
        "targets": list(ssbn.targets),
        "evidence": [[f.subject.text, f.value] for f in ssbn.evidence],
        "limits": {"max_depth": ssbn.limits.max_depth,
                   "max_nodes": ssbn.limits.max_nodes,
                   "max_parent_product": ssbn.limits.max_parent_product},
    }
