import random

import pytest

from mebn.errors import IncompleteWorld, MassError, NegativeResidual
from mebn.ldl import (
    ABSENT,
    Assignment,
    Clause,
    ConstTerm,
    CountCmp,
    EMPTY_COUNTS,
    InfluenceCounts,
    LocalExpression,
    Pattern,
    PartialWorldState,
    SatLinearTerm,
    SyntheticCounts,
    check_ldl_wellformed,
    compute_influence_counts,
    default_distribution,
    eval_local_distribution,
)
from mebn.model import Arg, RVInstance, RVTemplate, StateSpace

BOOL = StateSpace.boolean()

KLINGON_PATTERN = Pattern((("HarmPotential", Arg.name("True")),
                           ("OpSpec", Arg.name("Klingon"))))

PARENTS = [
    RVTemplate("HarmPotential", (("st", "Starship"), ("t", "TimeStep")), BOOL),
    RVTemplate("OpSpec", (("st", "Starship"),),
               StateSpace.enum(["Friend", "Klingon", "Romulan", "Unknown"])),
]


def counts_of(*configs):
    c = InfluenceCounts()
    for config in configs:
        c.add(config)
    return c


class TestInfluenceCounts:
    def test_pattern_counting(self):
        c = counts_of(
            (("HarmPotential", "True"), ("OpSpec", "Klingon")),
            (("HarmPotential", "True"), ("OpSpec", "Klingon")),
            (("HarmPotential", "False"), ("OpSpec", "Klingon")),
        )
        assert c.count(KLINGON_PATTERN) == 2
        assert c.count(Pattern()) == 3

    def test_absent_parent_never_matches(self):
        c = counts_of((("ZoneMD", ABSENT), ("CloakMode", "True")))
        assert c.count(Pattern((("ZoneMD", Arg.name("High")),))) == 0
        assert c.count(Pattern((("CloakMode", Arg.name("True")),))) == 1
        assert c.count(Pattern()) == 1


# the corpus DangerToSelf expression in miniature
DANGER_EXPR = LocalExpression(
    clauses=(
        Clause(CountCmp(KLINGON_PATTERN, ">=", 1), (
            Assignment("Unacceptable",
                       SatLinearTerm(0.98, 0.2, 0.2, KLINGON_PATTERN, 4)),
            Assignment("High", None),
            Assignment("Medium", ConstTerm(0.01)),
            Assignment("Low", ConstTerm(0.01)),
        )),
    ),
    default=(Assignment("Absurd", ConstTerm(1.0)),),
)

DANGER_STATES = ("Unacceptable", "High", "Medium", "Low", "Absurd")


class TestEvaluation:
    def test_constant_expression_ignores_counts(self):
        expr = LocalExpression((), (Assignment("True", ConstTerm(0.8)),
                                    Assignment("False", ConstTerm(0.2))))
        for c in (EMPTY_COUNTS, counts_of((("X", "True"),))):
            probs = eval_local_distribution(expr, c, BOOL.with_absurd())
            assert probs == {"True": 0.8, "False": 0.2, "Absurd": 0.0}

    def test_zero_tally_falls_to_default(self):
        # guard references a pattern whose count is zero
        c = counts_of((("HarmPotential", "False"), ("OpSpec", "Friend")))
        probs = eval_local_distribution(DANGER_EXPR, c, DANGER_STATES)
        assert probs["Absurd"] == 1.0

    def test_saturated_linear_arithmetic(self):
        # min(0.98, 0.2 + 0.2*sat(P,4)) at count 3 -> 0.2 + 0.2*3 = 0.8
        config = (("HarmPotential", "True"), ("OpSpec", "Klingon"))
        probs = eval_local_distribution(DANGER_EXPR, counts_of(*[config] * 3),
                                        DANGER_STATES)
        assert probs["Unacceptable"] == pytest.approx(0.8, abs=1e-12)
        # saturation: counts 4 and 400 agree, capped at 0.98
        p4 = eval_local_distribution(DANGER_EXPR, counts_of(*[config] * 4),
                                     DANGER_STATES)
        p400 = eval_local_distribution(DANGER_EXPR, counts_of(*[config] * 400),
                                       DANGER_STATES)
        assert p4 == p400
        assert p4["Unacceptable"] == pytest.approx(0.98, abs=1e-12)

    def test_remainder_absorbs_residual(self):
        config = (("HarmPotential", "True"), ("OpSpec", "Klingon"))
        probs = eval_local_distribution(DANGER_EXPR, counts_of(config),
                                        DANGER_STATES)
        assert probs["High"] == pytest.approx(1.0 - 0.4 - 0.02, abs=1e-12)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)

    def test_default_distribution_equals_empty_counts(self):
        assert default_distribution(DANGER_EXPR, DANGER_STATES) == \
            eval_local_distribution(DANGER_EXPR, EMPTY_COUNTS, DANGER_STATES)
        assert default_distribution(DANGER_EXPR, DANGER_STATES)["Absurd"] == 1.0

    def test_mass_error_without_remainder(self):
        expr = LocalExpression((), (Assignment("True", ConstTerm(0.6)),
                                    Assignment("False", ConstTerm(0.6))))
        with pytest.raises(MassError):
            eval_local_distribution(expr, EMPTY_COUNTS, BOOL.with_absurd())

    def test_negative_residual(self):
        expr = LocalExpression((), (Assignment("True", ConstTerm(1.2)),
                                    Assignment("False", None)))
        with pytest.raises(NegativeResidual):
            eval_local_distribution(expr, EMPTY_COUNTS, BOOL.with_absurd())

    def test_decreasing_saturated_term(self):
        # a negative slope decays with the count and bottoms out at the bound
        from mebn.parser import SourceText, parse_mtheory

        text = """
theory Decay

types { Item }

entities { Item: !I0 !I1 !I2 }

mfrag HomeA {
  vars { x: Item }
  context { Isa(Item, x) }
  resident { A(x) : bool }
  local A { default { True: 0.5, False: * } }
}

mfrag HomeFresh {
  vars { y: Item, x: Item }
  context { Isa(Item, y), Isa(Item, x) }
  input { A(x) }
  resident { Fresh(y) : bool }
  graph { A(x) -> Fresh(y) }
  local Fresh {
    when count(A = True) >= 1 {
      True: min(0.9, 0.9 - 0.2 * sat(A = True, 3))
      False: *
    }
    default { True: 0.9, False: * }
  }
}
"""
        theory = parse_mtheory(SourceText(text, "<decay>"))
        expr = theory.mfrag("HomeFresh").locals_["Fresh"]
        states = ("True", "False", "Absurd")
        pattern_key = "A = True"
        for count, expected in [(1, 0.7), (2, 0.5), (3, 0.3), (50, 0.3)]:
            probs = eval_local_distribution(
                expr, SyntheticCounts({pattern_key: count, "": count}), states)
            assert probs["True"] == pytest.approx(expected, abs=1e-12)
        # round-trips through the serializer with its sign intact
        from mebn.serializer import serialize_mtheory
        assert parse_mtheory(serialize_mtheory(theory)) == theory

    def test_exact_renormalization(self):
        expr = LocalExpression((), (
            Assignment("Friend", ConstTerm(0.5)),
            Assignment("Klingon", ConstTerm(0.2)),
            Assignment("Romulan", ConstTerm(0.2)),
            Assignment("Unknown", ConstTerm(0.1)),
        ))
        probs = eval_local_distribution(
            expr, EMPTY_COUNTS, PARENTS[1].states.with_absurd())
        assert sum(probs.values()) == 1.0


class TestChecker:
    def test_mass_error_diagnostic(self):
        expr = LocalExpression((), (Assignment("True", ConstTerm(0.6)),
                                    Assignment("False", ConstTerm(0.6))))
        diags = check_ldl_wellformed(expr, BOOL, PARENTS)
        assert any(d.code == "MassError" for d in diags)

    def test_unknown_parent_diagnostic(self):
        expr = LocalExpression(
            (Clause(CountCmp(Pattern((("Mystery", Arg.name("True")),)), ">=", 1),
                    (Assignment("True", ConstTerm(1.0)),)),),
            (Assignment("False", ConstTerm(1.0)),))
        diags = check_ldl_wellformed(expr, BOOL, PARENTS)
        assert any(d.code == "UnknownParent" for d in diags)

    def test_unknown_state_diagnostic(self):
        expr = LocalExpression((), (Assignment("Maybe", ConstTerm(1.0)),))
        diags = check_ldl_wellformed(expr, BOOL, PARENTS)
        assert any(d.code == "UnknownState" for d in diags)

    def test_corpus_style_expression_clean(self):
        assert check_ldl_wellformed(
            DANGER_EXPR, StateSpace.enum(DANGER_STATES[:-1]), PARENTS) == []

    def test_negative_residual_found_on_lattice(self):
        # saturated term plus the constant exceed 1 once count(K) >= 3
        expr = LocalExpression(
            (Clause(CountCmp(KLINGON_PATTERN, ">=", 1), (
                Assignment("True", SatLinearTerm(0.99, 0.5, 0.2, KLINGON_PATTERN, 4)),
                Assignment("Absurd", ConstTerm(0.05)),
                Assignment("False", None),
            )),),
            (Assignment("False", ConstTerm(1.0)),))
        diags = check_ldl_wellformed(expr, BOOL, PARENTS)
        assert any(d.code == "NegativeResidual" for d in diags)

    def test_subsumption_filter_avoids_false_positive(self):
        # True gets count(K)*0.2 and False the rest; adding count(HP=True)*0.2
        # would only break mass at vectors with count(K) > count(HP=True),
        # which subsumption rules out
        hp = Pattern((("HarmPotential", Arg.name("True")),))
        expr = LocalExpression(
            (Clause(CountCmp(KLINGON_PATTERN, ">=", 1), (
                Assignment("True", SatLinearTerm(0.5, 0.0, 0.1, KLINGON_PATTERN, 4)),
                Assignment("False", SatLinearTerm(0.5, 0.0, 0.1, hp, 4)),
                Assignment("Absurd", None),
            )),),
            (Assignment("False", ConstTerm(1.0)),))
        assert check_ldl_wellformed(expr, BOOL, PARENTS) == []


class TestPartialWorlds:
    """Hand-tallied influence counts over the corpus DangerAssessment MFrag."""

    @pytest.fixture()
    def setting(self, corpus_validated):
        frag = corpus_validated.theory.mfrag("DangerAssessment")
        resident = RVInstance("DangerToSelf", ("!ST0", "!T0"))
        return corpus_validated.registry, frag, resident

    def world(self, harm, spec, own="!ST0", contexts=True):
        ships = ["!ST0", "!ST1", "!ST2", "!ST3", "!ST4"]
        values = {}
        for ship in ships:
            values[f"IsOwnStarship({ship})"] = "True" if ship == own else "False"
            values[f"Exists({ship})"] = "True" if contexts else "False"
            values[f"HarmPotential({ship},!T0)"] = harm.get(ship, "False")
            values[f"OpSpec({ship})"] = spec.get(ship, "Friend")
        return PartialWorldState(values)

    def test_single_klingon_binding(self, setting):
        registry, frag, resident = setting
        world = self.world({"!ST1": "True"}, {"!ST1": "Klingon"})
        counts = compute_influence_counts(resident, world, frag, registry)
        assert counts.count(KLINGON_PATTERN) == 1
        assert counts.total == 5  # every existing starship binds

    def test_context_false_excludes_binding(self, setting):
        registry, frag, resident = setting
        world = self.world({"!ST1": "True"}, {"!ST1": "Klingon"}, contexts=False)
        counts = compute_influence_counts(resident, world, frag, registry)
        assert counts.tallies == {}

    def test_two_klingon_bindings(self, setting):
        registry, frag, resident = setting
        world = self.world({"!ST1": "True", "!ST2": "True"},
                           {"!ST1": "Klingon", "!ST2": "Klingon"})
        counts = compute_influence_counts(resident, world, frag, registry)
        assert counts.count(KLINGON_PATTERN) == 2

    def test_incomplete_world(self, setting):
        registry, frag, resident = setting
        with pytest.raises(IncompleteWorld):
            compute_influence_counts(resident, PartialWorldState({}), frag, registry)

    def test_count_functionality_under_renaming(self, setting):
        # Def 2d: permuting which identifiers carry the values leaves the
        # counts (hence the distribution) unchanged
        registry, frag, resident = setting
        rng = random.Random(7)
        ships = ["!ST1", "!ST2", "!ST3", "!ST4"]
        expr = frag.locals_["DangerToSelf"]
        for _ in range(25):
            harm_ships = rng.sample(ships, rng.randint(0, 4))
            spec_values = {s: rng.choice(["Friend", "Klingon", "Romulan"])
                           for s in ships}
            base = self.world({s: "True" for s in harm_ships}, spec_values)
            sigma = dict(zip(ships, rng.sample(ships, 4)))
            renamed = self.world(
                {sigma[s]: "True" for s in harm_ships},
                {sigma[s]: v for s, v in spec_values.items()})
            c1 = compute_influence_counts(resident, base, frag, registry)
            c2 = compute_influence_counts(resident, renamed, frag, registry)
            assert c1.tallies == c2.tallies
            d1 = eval_local_distribution(expr, c1, DANGER_STATES)
            d2 = eval_local_distribution(expr, c2, DANGER_STATES)
            assert d1 == d2


class TestNormalization:
    def test_checked_expressions_sum_to_one_on_whole_lattice(self, corpus_theory):
        # every expression that passes the checker evaluates to an exactly
        # unit-mass vector at every reachable count vector
        from mebn.ldl import LocalExpression as LE, lattice_vectors
        for frag in corpus_theory.mfrags:
            for decl in frag.residents:
                expr = frag.locals_[decl.term.name]
                if not isinstance(expr, LE):
                    continue
                if not all(p.is_concrete() for p in expr.patterns()):
                    expr = expr.substitute({"st": "!PROBE"})
                states = decl.states.with_absurd()
                for vec in lattice_vectors(expr):
                    probs = eval_local_distribution(
                        expr, SyntheticCounts(vec), states)
                    assert sum(probs.values()) == 1.0
                    assert all(p >= 0.0 for p in probs.values())


class TestFinality:
    def test_corpus_expressions_stable_beyond_bound(self, corpus_theory):
        # Def 2e over the shipped corpus: evaluating at B, B+1, B+10, B+1000
        # (every pattern at the same level) yields identical vectors
        from mebn.ldl import LocalExpression as LE
        checked = 0
        for frag in corpus_theory.mfrags:
            for decl in frag.residents:
                expr = frag.locals_[decl.term.name]
                if not isinstance(expr, LE):
                    continue
                if not all(p.is_concrete() for p in expr.patterns()):
                    expr = expr.substitute({"st": "!PROBE"})
                bound = expr.finality_bound()
                states = decl.states.with_absurd()
                reference = None
                for extra in (0, 1, 10, 1000):
                    counts = SyntheticCounts(
                        {p.key(): bound + extra for p in expr.patterns()},
                        default=bound + extra)
                    vec = eval_local_distribution(expr, counts, states)
                    if reference is None:
                        reference = vec
                    else:
                        assert vec == reference, (frag.name, decl.term.name, extra)
                checked += 1
        assert checked >= 8
