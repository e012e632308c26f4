"""Local distribution language: influence counts, guards, saturated terms.

A resident RV's distribution may depend on *any number* of parent instances,
one set per context-satisfying binding of its home MFrag. The only channel
from those bindings into the distribution is the influence counts: a tally,
per configuration of parent values, of how many bindings exhibit it.

The expression language (LDL) is deliberately small so its key property --
the distribution becomes constant once counts exceed every saturation
bound -- holds by construction:

    local DangerToSelf {
      when count(HarmPotential = True & OpSpec = Klingon) >= 1 {
        Unacceptable: min(0.98, 0.20 + 0.20 * sat(HarmPotential = True & OpSpec = Klingon, 4))
        High: *
        Medium: 0.01
        Low: 0.01
      }
      default { Absurd: 1 }
    }

Clauses are tried in order; the first guard that holds supplies the
distribution; ``default`` (mandatory) covers the no-satisfying-binding case.
``*`` marks the remainder state absorbing whatever mass is left. ``sat(p, m)``
is ``min(count(p), m)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from .errors import IncompleteWorld, LdlError, MassError, NegativeResidual
from .model import (
    ABSURD,
    Arg,
    ContextValue,
    EntityRegistry,
    EqContext,
    ConnectiveContext,
    LexEqContext,
    QuantifiedContext,
    MFrag,
    RVInstance,
    RVTemplate,
    RVTerm,
    StateSpace,
)

MASS_TOL = 1e-9

# Marks a fragment parent that has no instance under a binding (the
# recursion floor: Prev() of the first identifier in the chain).
ABSENT = "<absent>"


# ---------------------------------------------------------------------------
# patterns


@dataclass(frozen=True)
class Pattern:
    """Conjunction of parent-value constraints; empty matches everything.

    Constraint values are symbols (states, True/False/Absurd), literal
    identifiers, or MFrag variables. Variable constraints are substituted
    with bound identifiers before any counting happens.
    """

    constraints: tuple[tuple[str, Arg], ...] = ()

    @property
    def text(self) -> str:
        return " & ".join(f"{n} = {v.text}" for n, v in self.constraints)

    def key(self) -> str:
        return self.text

    def parent_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.constraints)

    def is_concrete(self) -> bool:
        return all(v.kind != "var" for _, v in self.constraints)

    def substitute(self, binding: Mapping[str, str]) -> "Pattern":
        out = []
        for name, value in self.constraints:
            if value.kind == "var":
                if value.value not in binding:
                    raise LdlError(f"pattern variable {value.value} is unbound")
                out.append((name, Arg.ident(binding[value.value])))
            else:
                out.append((name, value))
        return Pattern(tuple(out))

    def mentions_absurd(self) -> bool:
        return any(v.kind == "name" and v.value == ABSURD for _, v in self.constraints)

    def matches(self, config: Mapping[str, str]) -> bool:
        for name, value in self.constraints:
            if value.kind == "var":
                raise LdlError(f"pattern variable {value.value} not substituted")
            got = config.get(name, ABSENT)
            if got == ABSENT or got != value.value:
                return False
        return True

    def subsumes(self, other: "Pattern") -> bool:
        """True when this pattern's constraints are a subset of ``other``'s."""
        mine = set(self.constraints)
        theirs = set(other.constraints)
        return mine <= theirs


# ---------------------------------------------------------------------------
# influence counts


class CountSource:
    """Anything that can answer count(pattern) queries."""

    def count(self, pattern: Pattern) -> int:
        raise NotImplementedError


class InfluenceCounts(CountSource):
    """Tallies of parent-value configurations over context-satisfying bindings."""

    def __init__(self, tallies: Mapping[tuple[tuple[str, str], ...], int] = ()):
        self.tallies: dict[tuple[tuple[str, str], ...], int] = dict(tallies)

    def add(self, config: tuple[tuple[str, str], ...]) -> None:
        self.tallies[config] = self.tallies.get(config, 0) + 1

    @property
    def total(self) -> int:
        return sum(self.tallies.values())

    def count(self, pattern: Pattern) -> int:
        return sum(
            n for config, n in self.tallies.items()
            if pattern.matches(dict(config))
        )

    def __eq__(self, other):
        return isinstance(other, InfluenceCounts) and self.tallies == other.tallies

    def __repr__(self):
        return f"InfluenceCounts({self.tallies!r})"


class SyntheticCounts(CountSource):
    """Direct pattern -> count map, for well-formedness sweeps and tests."""

    def __init__(self, by_pattern: Mapping[str, int], default: int = 0):
        self.by_pattern = dict(by_pattern)
        self.default = default

    def count(self, pattern: Pattern) -> int:
        return self.by_pattern.get(pattern.key(), self.default)


EMPTY_COUNTS = InfluenceCounts()


# ---------------------------------------------------------------------------
# guards


@dataclass(frozen=True)
class CountCmp:
    pattern: Pattern
    op: str  # = != < <= > >=
    k: int

    _OPS = {
        "=": lambda a, b: a == b,
        "!=": lambda a, b: a != b,
        "<": lambda a, b: a < b,
        "<=": lambda a, b: a <= b,
        ">": lambda a, b: a > b,
        ">=": lambda a, b: a >= b,
    }

    def holds(self, counts: CountSource) -> bool:
        return self._OPS[self.op](counts.count(self.pattern), self.k)

    @property
    def text(self) -> str:
        return f"count({self.pattern.text}) {self.op} {self.k}"


@dataclass(frozen=True)
class GuardNot:
    operand: "Guard"

    def holds(self, counts: CountSource) -> bool:
        return not self.operand.holds(counts)

    @property
    def text(self) -> str:
        return f"not({self.operand.text})"


@dataclass(frozen=True)
class GuardBool:
    op: str  # and | or
    operands: tuple["Guard", ...]

    def holds(self, counts: CountSource) -> bool:
        if self.op == "and":
            return all(g.holds(counts) for g in self.operands)
        return any(g.holds(counts) for g in self.operands)

    @property
    def text(self) -> str:
        return f"{self.op}(" + ", ".join(g.text for g in self.operands) + ")"


Guard = Union[CountCmp, GuardNot, GuardBool]


# ---------------------------------------------------------------------------
# probability terms


@dataclass(frozen=True)
class ConstTerm:
    value: float
    literal: str = field(default="", compare=False)

    def evaluate(self, counts: CountSource) -> float:
        return self.value

    @property
    def text(self) -> str:
        return self.literal or format_probability(self.value)


def format_probability(value: float) -> str:
    text = repr(float(value))
    return text


@dataclass(frozen=True)
class SatLinearTerm:
    """min(cap, base + slope * sat(pattern, bound)); constant past the bound."""

    cap: float
    base: float
    slope: float
    pattern: Pattern
    bound: int
    literals: tuple[str, str, str] = field(default=("", "", ""), compare=False)

    def evaluate(self, counts: CountSource) -> float:
        saturated = min(counts.count(self.pattern), self.bound)
        return min(self.cap, self.base + self.slope * saturated)

    @property
    def text(self) -> str:
        cap = self.literals[0] or format_probability(self.cap)
        base = self.literals[1] or format_probability(self.base)
        slope = self.literals[2] or format_probability(self.slope)
        return f"min({cap}, {base} + {slope} * sat({self.pattern.text}, {self.bound}))"


ProbTerm = Union[ConstTerm, SatLinearTerm]

REMAINDER = "*"


@dataclass(frozen=True)
class Assignment:
    state: str
    term: Optional[ProbTerm]  # None marks the remainder state

    @property
    def is_remainder(self) -> bool:
        return self.term is None


@dataclass(frozen=True)
class Clause:
    guard: Guard
    assignments: tuple[Assignment, ...]


@dataclass(frozen=True)
class LocalExpression:
    """Ordered guarded clauses plus the mandatory default distribution."""

    clauses: tuple[Clause, ...]
    default: tuple[Assignment, ...]
    is_logic = False
    is_table = False
    is_uniform = False

    def all_assignment_groups(self) -> list[tuple[Assignment, ...]]:
        return [c.assignments for c in self.clauses] + [self.default]

    def patterns(self) -> list[Pattern]:
        seen: dict[str, Pattern] = {}

        def visit_guard(g: Guard):
            if isinstance(g, CountCmp):
                seen.setdefault(g.pattern.key(), g.pattern)
            elif isinstance(g, GuardNot):
                visit_guard(g.operand)
            elif isinstance(g, GuardBool):
                for o in g.operands:
                    visit_guard(o)

        for clause in self.clauses:
            visit_guard(clause.guard)
        for group in self.all_assignment_groups():
            for a in group:
                if isinstance(a.term, SatLinearTerm):
                    seen.setdefault(a.term.pattern.key(), a.term.pattern)
        return list(seen.values())

    def mentions_absurd_pattern(self) -> bool:
        return any(p.mentions_absurd() for p in self.patterns())

    def finality_bound(self) -> int:
        """Counts beyond this bound can no longer change the distribution."""
        bound = 0

        def visit_guard(g: Guard):
            nonlocal bound
            if isinstance(g, CountCmp):
                bound = max(bound, g.k)
            elif isinstance(g, GuardNot):
                visit_guard(g.operand)
            elif isinstance(g, GuardBool):
                for o in g.operands:
                    visit_guard(o)

        for clause in self.clauses:
            visit_guard(clause.guard)
        for group in self.all_assignment_groups():
            for a in group:
                if isinstance(a.term, SatLinearTerm):
                    bound = max(bound, a.term.bound)
        return bound

    def substitute(self, binding: Mapping[str, str]) -> "LocalExpression":
        """Replace variable-valued pattern constraints with bound identifiers."""

        def sub_pattern(p: Pattern) -> Pattern:
            return p.substitute(binding)

        def sub_guard(g: Guard) -> Guard:
            if isinstance(g, CountCmp):
                return CountCmp(sub_pattern(g.pattern), g.op, g.k)
            if isinstance(g, GuardNot):
                return GuardNot(sub_guard(g.operand))
            return GuardBool(g.op, tuple(sub_guard(o) for o in g.operands))

        def sub_assignments(group: tuple[Assignment, ...]) -> tuple[Assignment, ...]:
            out = []
            for a in group:
                if isinstance(a.term, SatLinearTerm):
                    term = SatLinearTerm(a.term.cap, a.term.base, a.term.slope,
                                         sub_pattern(a.term.pattern), a.term.bound,
                                         a.term.literals)
                    out.append(Assignment(a.state, term))
                else:
                    out.append(a)
            return tuple(out)

        return LocalExpression(
            tuple(Clause(sub_guard(c.guard), sub_assignments(c.assignments))
                  for c in self.clauses),
            sub_assignments(self.default),
        )


@dataclass(frozen=True)
class UniformLocal:
    """Uniform distribution over an instance's (possibly gated) state list.

    The only local expression available to identifier-valued residents such
    as Subject(sr): their state list varies per instance, so no fixed
    constant list can describe them.
    """

    is_logic = False
    is_table = False
    is_uniform = True


@dataclass(frozen=True)
class TableLocal:
    """Deterministic row -> state function; used by builtin logical RVs."""

    fn: object  # callable(tuple[str, ...]) -> str
    is_logic = False
    is_table = True
    is_uniform = False


@dataclass(frozen=True)
class LogicLocal:
    """Resident defined by a logical term, compiled structurally at grounding."""

    term: object  # parser.TargetTerm
    is_logic = True
    is_table = False
    is_uniform = False


LocalDecl = Union[LocalExpression, UniformLocal, TableLocal, LogicLocal]


# ---------------------------------------------------------------------------
# evaluation


def eval_assignments(assignments: Sequence[Assignment], counts: CountSource,
                     states: Sequence[str]) -> dict[str, float]:
    probs = {s: 0.0 for s in states}
    remainder_state = None
    total = 0.0
    for a in assignments:
        if a.state not in probs:
            raise LdlError(f"state {a.state} is not in the resident state space")
        if a.is_remainder:
            if remainder_state is not None:
                raise LdlError("more than one remainder state")
            remainder_state = a.state
            continue
        v = a.term.evaluate(counts)
        if v < -MASS_TOL:
            raise MassError(f"negative probability {v} for state {a.state}")
        probs[a.state] = max(v, 0.0)
        total += probs[a.state]
    if remainder_state is not None:
        residual = 1.0 - total
        if residual < -MASS_TOL:
            raise NegativeResidual(
                f"remainder state {remainder_state} would get {residual}"
            )
        probs[remainder_state] = max(residual, 0.0)
    else:
        if abs(total - 1.0) > MASS_TOL:
            raise MassError(f"distribution sums to {total}, expected 1")
    mass = sum(probs.values())
    if mass <= 0.0:
        raise MassError("distribution has no mass")
    probs = {s: p / mass for s, p in probs.items()}
    return _pin_unit_sum(probs)


def _pin_unit_sum(probs: dict[str, float]) -> dict[str, float]:
    """Absorb rounding slack so the state-order float sum is exactly 1.

    The last positive entry is recomputed as 1 minus the running prefix;
    entries after it are zero, so the final additions are exact. Point
    masses pass through untouched.
    """
    if sum(probs.values()) == 1.0:
        return probs
    ordered = list(probs)
    pivot = None
    for _ in range(len(ordered)):
        nonzero = [s for s in ordered if probs[s] > 0.0]
        pivot = nonzero[-1]
        prefix = 0.0
        for s in ordered:
            if s == pivot:
                break
            prefix += probs[s]
        residual = 1.0 - prefix
        if residual < 0.0:
            probs[pivot] = 0.0  # vanishing entry swallowed by rounding
            continue
        probs[pivot] = residual
        break
    for _ in range(64):
        total = sum(probs.values())
        if total == 1.0:
            break
        nudged = probs[pivot] + (1.0 - total)
        if nudged == probs[pivot]:
            nudged = math.nextafter(probs[pivot],
                                    math.inf if total < 1.0 else -math.inf)
        if nudged < 0.0:
            break
        probs[pivot] = nudged
    return probs


def eval_local_distribution(expr: LocalExpression, counts: CountSource,
                            states: Sequence[str]) -> dict[str, float]:
    """First clause whose guard holds wins; otherwise the default applies."""
    for clause in expr.clauses:
        if clause.guard.holds(counts):
            return eval_assignments(clause.assignments, counts, states)
    return eval_assignments(expr.default, counts, states)


def default_distribution(expr: LocalExpression, states: Sequence[str]) -> dict[str, float]:
    """The distribution used when no binding satisfies the context constraints."""
    return eval_local_distribution(expr, EMPTY_COUNTS, states)


# ---------------------------------------------------------------------------
# partial world states and influence-count computation


@dataclass(frozen=True)
class PartialWorldState:
    """Values for every parent instance and context instance of one resident.

    Keys are canonical instance texts (``HarmPotential(!ST1,!T0)``); context
    terms that are not plain RV applications are keyed by their canonical
    term-instance text. Builtin terms (Isa, Identity, Type, literal
    equalities) are evaluated from the registry and need not appear.
    """

    assignments: Mapping[str, str]

    def value_of(self, key: str) -> str:
        try:
            return self.assignments[key]
        except KeyError:
            raise IncompleteWorld(f"partial world has no value for {key}") from None


def instantiate_term_args(term: RVTerm, binding: Mapping[str, str],
                          registry: EntityRegistry) -> Optional[tuple[str, ...]]:
    """Arguments of a term under a binding; None when Prev() hits the floor."""
    args: list[str] = []
    for a in term.args:
        if a.kind == "var":
            args.append(binding[a.value])
        elif a.kind == "prev":
            prev = registry.predecessor(binding[a.value])
            if prev is None:
                return None
            args.append(prev)
        elif a.kind == "ident":
            args.append(a.value)
        else:  # bare name: type label used as an argument (Isa)
            args.append(a.value)
    return tuple(args)


def context_value_in_world(term, binding: Mapping[str, str], world: PartialWorldState,
                           registry: EntityRegistry, mfrag: MFrag) -> ContextValue:
    """Three-valued evaluation of one context term against a partial world."""
    from . import builtins as bi  # local import; builtins imports ldl

    if isinstance(term, RVTerm):
        if bi.is_builtin_context(term):
            return bi.eval_builtin_context(term, binding, registry)
        args = instantiate_term_args(term, binding, registry)
        if args is None:
            return ContextValue(ABSURD)
        # declared-type check: binding a zone where a starship is expected
        # makes the proposition absurd, not false
        tv = bi.argument_type_check(term, args, registry, mfrag)
        if tv is not None:
            return tv
        inst = RVInstance(term.name, args)
        raw = world.value_of(inst.text)
        if raw in (ABSURD, "True", "False"):
            return ContextValue(raw)
        raise LdlError(f"context {inst.text} has non-boolean value {raw}")
    if isinstance(term, EqContext):
        args = instantiate_term_args(term.rv, binding, registry)
        if args is None:
            return ContextValue(ABSURD)
        inst = RVInstance(term.rv.name, args)
        raw = world.value_of(inst.text)
        if raw == ABSURD:
            return ContextValue(ABSURD)
        rhs = bi.resolve_arg(term.rhs, binding)
        same = raw == rhs
        if term.negated:
            same = not same
        return ContextValue.from_bool(same)
    if isinstance(term, LexEqContext):
        return bi.eval_lex_equality(term, binding, registry)
    if isinstance(term, ConnectiveContext):
        vals = [context_value_in_world(o, binding, world, registry, mfrag)
                for o in term.operands]
        return bi.apply_connective(term.op, vals)
    if isinstance(term, QuantifiedContext):
        vals = []
        for ident in registry.identifiers(term.type_name):
            inner = dict(binding)
            inner[term.var] = ident
            vals.append(context_value_in_world(term.body, inner, world, registry, mfrag))
        op = "and" if term.quantifier == "forall" else "or"
        return bi.apply_connective(op, vals)
    raise LdlError(f"unsupported context term {term!r}")


def enumerate_bindings(mfrag: MFrag, bound: Mapping[str, str],
                       registry: EntityRegistry) -> list[dict[str, str]]:
    """All type-correct completions of ``bound``, in deterministic order."""
    free = [(v, t) for v, t in mfrag.vars if v not in bound]
    domains = [registry.identifiers(t) for _, t in free]
    out = []
    for combo in itertools.product(*domains):
        b = dict(bound)
        b.update({v: ident for (v, _), ident in zip(free, combo)})
        out.append(b)
    return out


def compute_influence_counts(resident: RVInstance, world: PartialWorldState,
                             mfrag: MFrag, registry: EntityRegistry) -> InfluenceCounts:
    """Tally parent configurations over context-satisfying bindings.

    For every completion of the free variables: when all context terms
    evaluate True, the tuple of parent values under that binding (read from
    the world) increments its tally. Bindings with any False or Absurd
    context contribute nothing.
    """
    decl = mfrag.resident_decl(resident.name)
    if len(decl.term.args) != len(resident.args):
        raise IncompleteWorld(f"{resident.text} does not match {decl.term.text}")
    bound = {a.value: ident for a, ident in zip(decl.term.args, resident.simple_args())}
    parent_terms = mfrag.parent_terms(resident.name)
    counts = InfluenceCounts()
    for binding in enumerate_bindings(mfrag, bound, registry):
        ok = True
        for term in mfrag.context:
            if not context_value_in_world(term, binding, world, registry, mfrag).is_true():
                ok = False
                break
        if not ok:
            continue
        config = []
        for pterm in parent_terms:
            args = instantiate_term_args(pterm, binding, registry)
            if args is None:
                config.append((pterm.name, ABSENT))
            else:
                config.append((pterm.name, world.value_of(RVInstance(pterm.name, args).text)))
        counts.add(tuple(config))
    return counts


# ---------------------------------------------------------------------------
# static well-formedness


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str


def _value_ok(value: Arg, parent: RVTemplate) -> bool:
    if value.kind == "var":
        return parent.states.kind == "ref"
    if value.kind == "ident":
        return parent.states.kind == "ref"
    if value.value == ABSURD:
        return True
    if parent.states.kind == "ref":
        return False
    return value.value in parent.states.values


def lattice_vectors(expr: LocalExpression) -> list[dict[str, int]]:
    """Count vectors to sweep: every pattern up to one past its own bound,
    filtered so that a more specific pattern never outcounts a subsuming one."""
    patterns = expr.patterns()
    bounds = {}
    for p in patterns:
        b = 0
        for clause in expr.clauses:
            def guard_bound(g, key):
                if isinstance(g, CountCmp) and g.pattern.key() == key:
                    return g.k
                if isinstance(g, GuardNot):
                    return guard_bound(g.operand, key)
                if isinstance(g, GuardBool):
                    return max((guard_bound(o, key) for o in g.operands), default=0)
                return 0
            b = max(b, guard_bound(clause.guard, p.key()))
        for group in expr.all_assignment_groups():
            for a in group:
                if isinstance(a.term, SatLinearTerm) and a.term.pattern.key() == p.key():
                    b = max(b, a.term.bound)
        bounds[p.key()] = b + 1
    keys = [p.key() for p in patterns]
    out = []
    for combo in itertools.product(*(range(bounds[k] + 1) for k in keys)):
        vec = dict(zip(keys, combo))
        consistent = True
        for p in patterns:
            for q in patterns:
                if p.key() != q.key() and p.subsumes(q) and vec[q.key()] > vec[p.key()]:
                    consistent = False
                    break
            if not consistent:
                break
        if consistent:
            out.append(vec)
    return out


def check_ldl_wellformed(expr: LocalDecl, states: StateSpace,
                         parents: Sequence[RVTemplate]) -> list[Diagnostic]:
    """Static checks: state membership, parent references, mass conditions.

    Mass is verified by sweeping the finite lattice of count vectors up to
    each pattern's saturation/threshold bound; eventual constancy makes the
    sweep sufficient. Diagnostics are returned, never raised.
    """
    diags: list[Diagnostic] = []
    if isinstance(expr, (UniformLocal, TableLocal, LogicLocal)):
        return diags
    if states.kind == "ref":
        return [Diagnostic("UnsupportedStates",
                           "identifier-valued residents must use a uniform local")]

    state_list = states.with_absurd()
    by_name = {p.name: p for p in parents}

    for group in expr.all_assignment_groups():
        remainders = [a for a in group if a.is_remainder]
        if len(remainders) > 1:
            diags.append(Diagnostic("MultipleRemainders", "more than one '*' state"))
        for a in group:
            if a.state not in state_list:
                diags.append(Diagnostic(
                    "UnknownState", f"state {a.state} not in the resident state space"))

    for pattern in expr.patterns():
        for name, value in pattern.constraints:
            parent = by_name.get(name)
            if parent is None:
                diags.append(Diagnostic(
                    "UnknownParent", f"pattern references {name}, not a fragment parent"))
                continue
            if not _value_ok(value, parent):
                diags.append(Diagnostic(
                    "UnknownState", f"{name} has no state {value.text}"))

    if any(d.code in ("UnknownState", "UnknownParent", "MultipleRemainders") for d in diags):
        return diags

    concrete = all(p.is_concrete() for p in expr.patterns())
    if not concrete:
        # variable-valued constraints: sweep with a placeholder substitution
        expr = expr.substitute({v.value: "!LATTICEPROBE"
                                for p in expr.patterns()
                                for _, v in p.constraints if v.kind == "var"})

    for vec in lattice_vectors(expr):
        counts = SyntheticCounts(vec)
        try:
            eval_local_distribution(expr, counts, state_list)
        except NegativeResidual as e:
            diags.append(Diagnostic("NegativeResidual", f"{e.message} at counts {vec}"))
            break
        except (MassError, LdlError) as e:
            diags.append(Diagnostic("MassError", f"{e.message} at counts {vec}"))
            break
    return diags
