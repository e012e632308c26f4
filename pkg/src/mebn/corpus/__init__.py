"""The Star Trek fixture corpus: theory, evidence files, golden posteriors.

The golden files freeze posteriors computed by the brute-force oracle
(``--regen`` path); the scenario runner replays every scenario through the
production engine and compares within tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..grounding import GroundingLimits
from ..inference import answer_query
from ..model import MTheory
from ..parser import Evidence, SourceText, parse_evidence, parse_mtheory, parse_target
from ..validation import ValidatedMTheory, validate

CORPUS_DIR = Path(__file__).parent
GOLDEN_TOL = 1e-9


@dataclass(frozen=True)
class Scenario:
    name: str
    theory_path: Path
    evidence_path: Path
    targets: tuple[str, ...]
    golden_path: Optional[Path]


def load_scenarios() -> list[Scenario]:
    raw = json.loads((CORPUS_DIR / "scenarios.json").read_text())
    out = []
    for entry in raw:
        out.append(Scenario(
            name=entry["name"],
            theory_path=CORPUS_DIR / entry["theory"],
            evidence_path=CORPUS_DIR / entry["evidence"],
            targets=tuple(entry["targets"]),
            golden_path=CORPUS_DIR / entry["golden"] if entry.get("golden") else None,
        ))
    return out


def corpus_theory() -> MTheory:
    path = CORPUS_DIR / "startrek.mtheory"
    return parse_mtheory(SourceText(path.read_text(), str(path)))


def corpus_validated() -> ValidatedMTheory:
    result = validate(corpus_theory())
    if not isinstance(result, ValidatedMTheory):
        raise RuntimeError("corpus theory failed validation:\n" + result.render())
    return result


def load_scenario_inputs(scenario: Scenario) -> tuple[ValidatedMTheory, Evidence, list]:
    theory = parse_mtheory(SourceText(scenario.theory_path.read_text(),
                                      str(scenario.theory_path)))
    evidence = parse_evidence(SourceText(scenario.evidence_path.read_text(),
                                         str(scenario.evidence_path)), theory)
    result = validate(theory, theory.registry(evidence.entities))
    if not isinstance(result, ValidatedMTheory):
        raise RuntimeError(f"{scenario.name}: theory failed validation:\n"
                           + result.render())
    targets = [parse_target(t, theory) for t in scenario.targets]
    return result, evidence, targets


def run_scenario(scenario: Scenario, oracle: bool = False,
                 limits: Optional[GroundingLimits] = None) -> list[dict]:
    """Posteriors for one scenario, in golden-file form (timing excluded)."""
    v, evidence, targets = load_scenario_inputs(scenario)
    result, _ = answer_query(v, evidence, targets, limits, oracle=oracle)
    out = []
    for posterior in result.posteriors:
        out.append({
            "target": posterior.target,
            "states": list(posterior.states),
            "probs": list(posterior.probs),
            "evidence_probability": result.evidence_probability,
            "ssbn_nodes": result.ssbn_nodes,
        })
    return out


def compare_to_golden(computed: list[dict], golden: list[dict],
                      tol: float = GOLDEN_TOL) -> tuple[bool, float, str]:
    """(passed, max abs deviation, first mismatch description)."""
    if len(computed) != len(golden):
        return False, float("inf"), "different number of targets"
    worst = 0.0
    for got, want in zip(computed, golden):
        if got["target"] != want["target"]:
            return False, float("inf"), f"target {got['target']} vs {want['target']}"
        if got["states"] != want["states"]:
            return False, float("inf"), f"{got['target']}: state order differs"
        if got["ssbn_nodes"] != want["ssbn_nodes"]:
            return False, float("inf"), (
                f"{got['target']}: ssbn_nodes {got['ssbn_nodes']} vs "
                f"{want['ssbn_nodes']}")
        for state, a, b in zip(got["states"], got["probs"], want["probs"]):
            worst = max(worst, abs(a - b))
            if abs(a - b) > tol:
                return False, worst, f"{got['target']}.{state}: {a} vs {b}"
        dz = abs(got["evidence_probability"] - want["evidence_probability"])
        worst = max(worst, dz)
        if dz > tol:
            return False, worst, f"{got['target']}: evidence probability differs"
    return True, worst, ""


def run_all(regen: bool = False, oracle: bool = False,
            tol: float = GOLDEN_TOL) -> list[dict]:
    """Run every scenario; with ``regen``, rewrite goldens from the oracle."""
    rows = []
    for scenario in load_scenarios():
        if regen:
            computed = run_scenario(scenario, oracle=True)
            scenario.golden_path.write_text(
                json.dumps(computed, indent=2, sort_keys=True) + "\n")
            rows.append({"scenario": scenario.name, "status": "regenerated",
                         "max_abs_diff": 0.0, "detail": ""})
            continue
        computed = run_scenario(scenario, oracle=oracle)
        if scenario.golden_path is None or not scenario.golden_path.exists():
            rows.append({"scenario": scenario.name, "status": "no-golden",
                         "max_abs_diff": float("inf"), "detail": "golden missing"})
            continue
        golden = json.loads(scenario.golden_path.read_text())
        passed, worst, detail = compare_to_golden(computed, golden, tol)
        rows.append({"scenario": scenario.name,
                     "status": "pass" if passed else "fail",
                     "max_abs_diff": worst, "detail": detail})
    return rows
