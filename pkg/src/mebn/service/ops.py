"""Shared application layer: every operation the HTTP routes expose, as
plain functions over source text. The CLI calls these directly, so both
surfaces stay behaviorally identical.
"""

from __future__ import annotations

import math
from typing import Optional

from .. import corpus as corpus_pkg
from ..errors import MebnError
from ..grounding import GroundingLimits, build_ssbn, export_dot, prune_ssbn, ssbn_to_json
from ..inference import answer_query
from ..parser import Evidence, SourceText, parse_evidence, parse_mtheory, parse_target
from ..validation import ValidatedMTheory, validate
from . import schemas


def _load(theory_text: str, evidence_text: Optional[str], origin: str = "<request>"):
    theory = parse_mtheory(SourceText(theory_text, origin))
    if evidence_text:
        evidence = parse_evidence(SourceText(evidence_text, origin + ":evidence"),
                                  theory)
    else:
        evidence = Evidence()
    return theory, evidence


def do_validate(req: schemas.ValidateRequest) -> schemas.ValidateResponse:
    theory, evidence = _load(req.theory, req.evidence)
    result = validate(theory, theory.registry(evidence.entities), req.depth_bound)
    if isinstance(result, ValidatedMTheory):
        return schemas.ValidateResponse(ok=True, max_depth=result.max_depth)
    return schemas.ValidateResponse(
        ok=False,
        violations=[schemas.ViolationModel(tag=v.tag, witnesses=list(v.witnesses),
                                           message=v.message)
                    for v in result.violations])


def _validated(theory, evidence) -> ValidatedMTheory:
    result = validate(theory, theory.registry(evidence.entities))
    if not isinstance(result, ValidatedMTheory):
        raise MebnError("theory failed validation:\n" + result.render())
    return result


def _limits(model: schemas.LimitsModel) -> GroundingLimits:
    return GroundingLimits(model.max_depth, model.max_nodes,
                           model.max_parent_product)


def do_query(req: schemas.QueryRequest) -> schemas.QueryResponse:
    theory, evidence = _load(req.theory, req.evidence)
    v = _validated(theory, evidence)
    targets = [parse_target(t, theory) for t in req.targets]
    result, ssbn = answer_query(v, evidence, targets, _limits(req.limits),
                                oracle=req.oracle, prune=req.prune)
    results = [schemas.PosteriorModel(**p.to_json(result.evidence_probability,
                                                  result.ssbn_nodes,
                                                  result.elapsed_ms))
               for p in result.posteriors]
    dot = export_dot(ssbn) if req.include_dot else None
    return schemas.QueryResponse(results=results,
                                 ssbn_nodes_unpruned=result.ssbn_nodes_unpruned,
                                 dot=dot)


def do_ground(req: schemas.GroundRequest) -> schemas.GroundResponse:
    theory, evidence = _load(req.theory, req.evidence)
    v = _validated(theory, evidence)
    targets = [parse_target(t, theory) for t in req.targets]
    ssbn = build_ssbn(v, evidence, targets, _limits(req.limits))
    if req.prune:
        ssbn = prune_ssbn(ssbn)
    return schemas.GroundResponse(ssbn=ssbn_to_json(ssbn), dot=export_dot(ssbn))


def do_corpus_scenarios() -> list[schemas.ScenarioModel]:
    return [schemas.ScenarioModel(name=s.name, targets=list(s.targets))
            for s in corpus_pkg.load_scenarios()]


def do_corpus_run(oracle: bool = False, regen: bool = False,
                  tol: float = corpus_pkg.GOLDEN_TOL) -> schemas.CorpusRunResponse:
    rows = corpus_pkg.run_all(regen=regen, oracle=oracle, tol=tol)
    models = []
    ok = True
    for r in rows:
        diff = r["max_abs_diff"]
        models.append(schemas.CorpusRunRow(
            scenario=r["scenario"], status=r["status"],
            max_abs_diff=-1.0 if math.isinf(diff) else diff,
            detail=r["detail"]))
        if r["status"] not in ("pass", "regenerated"):
            ok = False
    return schemas.CorpusRunResponse(rows=models, ok=ok)
