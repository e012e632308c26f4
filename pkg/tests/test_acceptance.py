"""Acceptance gate: one test per criterion, one printed line each.

Run with ``pytest -s tests/test_acceptance.py`` to see the pass/fail matrix.
"""

import random
import re
import time
from pathlib import Path

from mebn import corpus
from mebn.grounding import build_ssbn, prune_ssbn, resolve_context
from mebn.inference import Query, answer_query, brute_force_posterior, eliminate
from mebn.ldl import LocalExpression, SyntheticCounts, eval_local_distribution
from mebn.model import CV_ABSURD, CV_FALSE, CV_TRUE, Finding, RVInstance
from mebn.parser import Evidence, SourceText, parse_evidence, parse_mtheory, parse_target
from mebn.serializer import serialize_mtheory
from mebn.validation import (
    NO_CYCLES,
    UNIQUE_HOME,
    ValidatedMTheory,
    ValidationReport,
    validate,
)

from .randgen import random_boolean_net, random_theory

FIXTURES = Path(__file__).parent / "fixtures"
TOL = 1e-9


def report(number: int, ok: bool, text: str) -> None:
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {text}")
    assert ok, f"criterion {number} failed: {text}"


def inst(name, *args):
    return RVInstance(name, tuple(args))


def test_criterion_01_oracle_equivalence():
    started = time.perf_counter()
    worst = 0.0
    for sc in corpus.load_scenarios():
        ve = corpus.run_scenario(sc)
        bf = corpus.run_scenario(sc, oracle=True)
        for a, b in zip(ve, bf):
            assert a["states"] == b["states"]
            worst = max(worst, max(abs(x - y)
                                   for x, y in zip(a["probs"], b["probs"])))
            worst = max(worst, abs(a["evidence_probability"]
                                   - b["evidence_probability"]))
    elapsed = time.perf_counter() - started
    report(1, worst <= TOL and elapsed < 60.0,
           f"elimination vs enumeration on all scenarios: max|delta| = "
           f"{worst:.2e} in {elapsed:.1f}s")


def test_criterion_02_default_distribution_absurd(scenario_inputs):
    v, ev, targets = scenario_inputs("no_threats")
    result, ssbn = answer_query(v, ev, targets)
    probs = dict(zip(result.posteriors[0].states, result.posteriors[0].probs))
    ok = probs["Absurd"] == 1.0 and len(ssbn.nodes) == 1
    report(2, ok, f"no context-satisfying starships: P(Absurd) = {probs['Absurd']!r}, "
                  f"{len(ssbn.nodes)} node(s)")


def test_criterion_03_context_trivaluation(scenario_inputs):
    v, ev, _ = scenario_inputs("danger_basic")
    got = {ident: resolve_context(inst("IsOwnStarship", ident), v, ev).value
           for ident in ("!ST0", "!ST1", "!Z1")}
    ok = got == {"!ST0": CV_TRUE, "!ST1": CV_FALSE, "!Z1": CV_ABSURD}
    report(3, ok, "IsOwnStarship resolves True/!ST0, False/!ST1, Absurd/!Z1")


TALLY_THEORY = """
theory Tally

types { Item }

entities { Item: !A0 !A1 !A2 !A3 !A4 }

mfrag HomeFlag {
  vars { x: Item }
  context { Isa(Item, x) }
  resident { Flag(x) : bool }
  local Flag { default { True: 0.4, False: * } }
}

mfrag HomeScore {
  vars { y: Item, x: Item }
  context { Isa(Item, y), Isa(Item, x) }
  input { Flag(x) }
  resident { Score(y) : { Lots, Some, Zero } }
  graph { Flag(x) -> Score(y) }
  local Score {
    when count(Flag = True) >= 3 {
      Lots: min(0.9, 0.3 + 0.2 * sat(Flag = True, 3))
      Some: *
      Zero: 0.05
    }
    when count(Flag = True) >= 1 { Some: 0.7, Lots: 0.1, Zero: * }
    default { Zero: 1 }
  }
}
"""


def _rename(text: str, sigma: dict) -> str:
    return re.sub(r"![A-Z0-9]+", lambda m: sigma.get(m.group(), m.group()), text)


def _apply_sigma(inst_text: str, sigma: dict) -> str:
    return _rename(inst_text, sigma)


def _compare_through_renaming(base, permuted, sigma) -> bool:
    """CPTs must be bit-identical modulo the identifier bijection."""
    import numpy as np

    for text, node in base.nodes.items():
        other = permuted.nodes[_apply_sigma(text, sigma)]
        mapped_parents = [_apply_sigma(p.text, sigma) for p in node.parents]
        other_order = [p.text for p in other.parents]
        if sorted(mapped_parents) != sorted(other_order):
            return False
        column = [other.states.index(sigma.get(s, s)) for s in node.states]
        # vectorized row alignment: for each base axis, the contribution of
        # its mapped value to the flat row index on the permuted side
        sizes = [len(s) for s in node.cpt.parent_states]
        strides = {}
        acc = 1
        for name, states in zip(reversed(other_order),
                                reversed(list(other.cpt.parent_states))):
            strides[name] = acc
            acc *= len(states)
        index = np.zeros(sizes if sizes else (1,), dtype=np.int64)
        other_states = dict(zip(other_order, other.cpt.parent_states))
        for axis, (mapped_name, states) in enumerate(
                zip(mapped_parents, node.cpt.parent_states)):
            positions = np.array(
                [other_states[mapped_name].index(sigma.get(v, v))
                 for v in states], dtype=np.int64)
            shape = [1] * len(sizes)
            shape[axis] = sizes[axis]
            index = index + positions.reshape(shape) * strides[mapped_name]
        flat = index.reshape(-1)
        aligned = other.cpt.table[flat][:, column]
        if not np.array_equal(node.cpt.table, aligned):
            return False
    return True


def test_criterion_04_influence_count_invariance(scenario_inputs):
    rng = random.Random(42)
    items = ["!A0", "!A1", "!A2", "!A3", "!A4"]
    theory = parse_mtheory(SourceText(TALLY_THEORY, "<tally>"))
    v = validate(theory)
    assert isinstance(v, ValidatedMTheory)
    base = build_ssbn(v, Evidence(), [inst("Score", "!A0")])
    checked = 0
    for _ in range(197):
        sigma = dict(zip(items, rng.sample(items, len(items))))
        target = inst("Score", sigma["!A0"])
        permuted = build_ssbn(v, Evidence(), [target])
        assert _compare_through_renaming(base, permuted, sigma)
        checked += 1
    # the comparator itself must be falsifiable
    damaged = build_ssbn(v, Evidence(), [inst("Score", "!A0")])
    damaged.nodes["Score(!A0)"].cpt.table[0, 0] += 1e-12
    assert not _compare_through_renaming(base, damaged,
                                         {i: i for i in items})
    # and the full corpus, a few times
    ships = ["!ST0", "!ST1", "!ST2", "!ST3", "!ST4"]
    sc_v, sc_ev, _ = scenario_inputs("danger_basic")
    evidence_text = (corpus.CORPUS_DIR / "danger_basic.mev").read_text()
    base_ssbn = build_ssbn(sc_v, sc_ev, [inst("DangerToSelf", "!ST0", "!T0")])
    for _ in range(3):
        sigma = dict(zip(ships, rng.sample(ships, len(ships))))
        renamed = parse_evidence(
            SourceText(_rename(evidence_text, sigma), "<renamed>"), sc_v.theory)
        permuted = build_ssbn(sc_v, renamed,
                              [inst("DangerToSelf", sigma["!ST0"], "!T0")])
        assert _compare_through_renaming(base_ssbn, permuted, sigma)
        checked += 1
    report(4, checked == 200,
           f"{checked} identifier permutations produced bit-identical CPTs")


def test_criterion_05_local_finality(corpus_theory):
    checked = 0
    for frag in corpus_theory.mfrags:
        for decl in frag.residents:
            expr = frag.locals_[decl.term.name]
            if not isinstance(expr, LocalExpression):
                continue
            if not all(p.is_concrete() for p in expr.patterns()):
                expr = expr.substitute({"st": "!PROBE"})
            bound = expr.finality_bound()
            states = decl.states.with_absurd()
            vectors = []
            for extra in (0, 1, 10, 1000):
                counts = SyntheticCounts(
                    {p.key(): bound + extra for p in expr.patterns()},
                    default=bound + extra)
                vectors.append(eval_local_distribution(expr, counts, states))
            assert all(vec == vectors[0] for vec in vectors[1:]), \
                (frag.name, decl.term.name)
            checked += 1
    report(5, checked >= 8,
           f"{checked} corpus expressions constant at B, B+1, B+10, B+1000")


def test_criterion_06_consistency_mutations(corpus_theory):
    def tags_of(name):
        path = FIXTURES / name
        result = validate(parse_mtheory(SourceText(path.read_text(), str(path))))
        assert isinstance(result, ValidationReport)
        return set(result.tags())

    ok = (NO_CYCLES in tags_of("cycle_self.mtheory")
          and NO_CYCLES in tags_of("cycle_pair.mtheory")
          and UNIQUE_HOME in tags_of("duplicate_home.mtheory")
          and isinstance(validate(corpus_theory), ValidatedMTheory))
    report(6, ok, "self-loop and 2-MFrag cycles tagged NoCycles, duplicate "
                  "home tagged UniqueHome, pristine corpus accepted")


def test_criterion_07_association_existence_coupling(scenario_inputs):
    v, ev, _ = scenario_inputs("association")
    candidates = dict(ev.candidates)["Subject(!SR4)"]
    exact = []
    for value in candidates:
        extended = Evidence(
            findings=ev.findings + (Finding(inst("Subject", "!SR4"), value),),
            candidates=ev.candidates)
        result, _ = answer_query(v, extended, [inst("Exists", "!ST4")])
        probs = dict(zip(result.posteriors[0].states, result.posteriors[0].probs))
        if value == "!ST4":
            exact.append(probs["True"] == 1.0)
        else:
            exact.append(probs["False"] == 1.0)
    report(7, all(exact) and len(exact) == 3,
           "P(Exists(!ST4)=False | Subject(!SR4)=v) = 1 exactly for v != !ST4")


def test_criterion_08_recursion(scenario_inputs):
    v, ev, targets = scenario_inputs("zone_recursion")
    ssbn = build_ssbn(v, ev, targets)
    zone_nodes = sorted(t for t in ssbn.nodes if t.startswith("ZoneMD("))
    pruned = prune_ssbn(ssbn)
    query = Query((inst("ZoneMD", "!Z0", "!T3"),), pruned.evidence)
    ve = eliminate(pruned, query)
    bf = brute_force_posterior(pruned, query)
    worst = max(abs(a - b) for a, b in zip(
        ve.marginals["ZoneMD(!Z0,!T3)"][1], bf.marginals["ZoneMD(!Z0,!T3)"][1]))
    ok = zone_nodes == [f"ZoneMD(!Z0,!T{k})" for k in range(4)] and worst <= TOL
    report(8, ok, f"4-step chain grounds exactly 4 ZoneMD nodes; oracle "
                  f"max|delta| = {worst:.2e}")


def test_criterion_09_prune_invariance():
    worst = 0.0
    structural_ok = True
    for sc in corpus.load_scenarios():
        v, ev, targets = corpus.load_scenario_inputs(sc)
        with_prune, pruned = answer_query(v, ev, targets)
        without, _ = answer_query(v, ev, targets, prune=False)
        for a, b in zip(with_prune.posteriors, without.posteriors):
            worst = max(worst, max(abs(x - y)
                                   for x, y in zip(a.probs, b.probs)))
        observed = {f.subject.text for f in pruned.evidence}
        for text, children in pruned.children().items():
            if not children and text not in pruned.targets \
                    and text not in observed:
                structural_ok = False
    report(9, worst <= TOL and structural_ok,
           f"posteriors unchanged by pruning (max|delta| = {worst:.2e}); "
           f"no barren non-target, non-evidence leaves")


def _posterior_of(theory_text, evidence_text, target_text, theory=None):
    theory = theory or parse_mtheory(SourceText(theory_text, "<logic>"))
    evidence = parse_evidence(SourceText(evidence_text, "<logic-ev>"), theory) \
        if evidence_text else Evidence()
    v = validate(theory, theory.registry(evidence.entities))
    assert isinstance(v, ValidatedMTheory), v.render()
    target = parse_target(target_text, theory)
    result, ssbn = answer_query(v, evidence, [target])
    return (dict(zip(result.posteriors[0].states, result.posteriors[0].probs)),
            ssbn)


def test_criterion_10_logic_layer():
    rng = random.Random(99)
    worst = 0.0
    runs = 0
    for seed in range(50):
        text, ids, names = random_boolean_net(seed)
        theory = parse_mtheory(SourceText(text, "<logic>"))
        a = f"{rng.choice(names)}({rng.choice(ids)})"
        b = f"{rng.choice(names)}({rng.choice(ids)})"
        while b == a:
            b = f"{rng.choice(names)}({rng.choice(ids)})"
        evidence_lines = []
        if rng.random() < 0.5:
            other = rng.choice(names)
            evidence_lines.append(
                f"{other}({rng.choice(ids)}) = {rng.choice(['True', 'False'])}")
        evidence_text = "\n".join(evidence_lines)
        # De Morgan: not(and(a,b)) == or(not(a), not(b))
        lhs, _ = _posterior_of(text, evidence_text, f"not(and({a}, {b}))", theory)
        rhs, _ = _posterior_of(text, evidence_text,
                               f"or(not({a}), not({b}))", theory)
        worst = max(worst, max(abs(lhs[s] - rhs[s]) for s in lhs))
        # quantifier compilation equals the explicit connective tree,
        # node for node
        name = rng.choice(names)
        folded = f"{name}({ids[0]})"
        for ident in ids[1:]:
            folded = f"and({folded}, {name}({ident}))"
        q_probs, q_ssbn = _posterior_of(text, evidence_text,
                                        f"forall x: Item . {name}(x)", theory)
        t_probs, t_ssbn = _posterior_of(text, evidence_text, folded, theory)
        assert sorted(q_ssbn.nodes) == sorted(t_ssbn.nodes)
        worst = max(worst, max(abs(q_probs[s] - t_probs[s]) for s in q_probs))
        runs += 1
    report(10, runs == 50 and worst <= TOL,
           f"De Morgan and quantifier-tree equivalence over {runs} random "
           f"theories: max|delta| = {worst:.2e}")


def test_criterion_11_round_trip(corpus_theory):
    ok = parse_mtheory(serialize_mtheory(corpus_theory)) == corpus_theory
    count = 0
    for seed in range(100):
        t = random_theory(seed)
        ok = ok and parse_mtheory(serialize_mtheory(t)) == t
        count += 1
    report(11, ok and count == 100,
           "parse(serialize(t)) structurally identical on the corpus and "
           "100 generated theories")
