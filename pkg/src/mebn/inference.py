"""Exact posterior computation on SSBNs.

Two independent routes:

* :func:`eliminate` -- variable elimination with a deterministic min-degree
  ordering (lexicographic tie-break); the production path.
* :func:`brute_force_posterior` -- full joint enumeration over every
  unobserved node, guarded by a state-count cap; the verification oracle.

Both report the evidence probability (the normalizing constant). Evidence
with probability zero is a hard error: findings are axioms, and an
inconsistent axiom set must surface, not turn into NaNs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import InconsistentEvidence, InferenceError, StateSpaceTooLarge
from .grounding import (
    SSBN,
    GroundingLimits,
    GroundNode,
    build_ssbn,
    lt_to_instance,
    prune_ssbn,
)
from .model import Finding, RVInstance
from .parser import Evidence, LogicalTerm
from .validation import ValidatedMTheory

ORACLE_STATE_GUARD = 1 << 24
ORACLE_DIM_GUARD = 48


@dataclass(frozen=True)
class Query:
    targets: tuple[RVInstance, ...]
    evidence: tuple[Finding, ...] = ()

    def __post_init__(self):
        if not self.targets:
            raise InferenceError("a query needs at least one target")
        seen: dict[str, str] = {}
        for f in self.evidence:
            prev = seen.get(f.subject.text)
            if prev is not None and prev != f.value:
                raise InconsistentEvidence(
                    f"conflicting findings for {f.subject.text}: {prev} vs {f.value}",
                    self.evidence)
            seen[f.subject.text] = f.value

    def target_texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.targets)


@dataclass(frozen=True)
class Posterior:
    """Per-target marginals plus the probability of the evidence."""

    marginals: dict[str, tuple[tuple[str, ...], tuple[float, ...]]]
    evidence_probability: float

    def probs(self, target: str) -> dict[str, float]:
        states, values = self.marginals[target]
        return dict(zip(states, values))


# ---------------------------------------------------------------------------
# factors


class Factor:
    __slots__ = ("vars", "table")

    def __init__(self, vars_: tuple[str, ...], table: np.ndarray):
        self.vars = vars_
        self.table = table

    def __repr__(self):
        return f"Factor({self.vars}, shape={self.table.shape})"


def _embed(factor: Factor, out_vars: tuple[str, ...]) -> np.ndarray:
    positions = {v: i for i, v in enumerate(out_vars)}
    perm = sorted(range(len(factor.vars)), key=lambda i: positions[factor.vars[i]])
    arr = factor.table
    if perm != list(range(len(factor.vars))):
        arr = np.transpose(arr, perm)
    present = set(factor.vars)
    shape = []
    dims = iter(arr.shape)
    for v in out_vars:
        shape.append(next(dims) if v in present else 1)
    return arr.reshape(shape)


def _multiply(factors: Sequence[Factor]) -> Factor:
    out_vars: list[str] = []
    for f in factors:
        for v in f.vars:
            if v not in out_vars:
                out_vars.append(v)
    out_vars_t = tuple(out_vars)
    table = np.ones((1,) * len(out_vars_t) if out_vars_t else ())
    for f in factors:
        table = table * _embed(f, out_vars_t)
    return Factor(out_vars_t, table)


def _sum_out(factor: Factor, var: str) -> Factor:
    axis = factor.vars.index(var)
    new_vars = factor.vars[:axis] + factor.vars[axis + 1:]
    return Factor(new_vars, factor.table.sum(axis=axis))


def _node_factor(node: GroundNode) -> Factor:
    sizes = tuple(len(s) for s in node.cpt.parent_states) + (len(node.states),)
    table = node.cpt.table.reshape(sizes)
    vars_ = tuple(p.text for p in node.parents) + (node.text,)
    return Factor(vars_, table)


def _evidence_indices(ssbn: SSBN, query: Query) -> dict[str, int]:
    observed: dict[str, int] = {}
    for f in query.evidence:
        text = f.subject.text
        node = ssbn.nodes.get(text)
        if node is None:
            raise InferenceError(
                f"evidence subject {text} is not a node of this SSBN")
        if f.value not in node.states:
            raise InconsistentEvidence(
                f"{text}: finding value {f.value} is outside the instance's "
                f"states {node.states}", query.evidence)
        observed[text] = node.states.index(f.value)
    return observed


def min_degree_order(scopes: Sequence[set[str]], elim_vars: set[str]) -> list[str]:
    """Greedy min-degree over the interaction graph; lexicographic ties."""
    adjacency: dict[str, set[str]] = {}
    for scope in scopes:
        for v in scope:
            adjacency.setdefault(v, set()).update(scope - {v})
    for v in elim_vars:
        adjacency.setdefault(v, set())
    order = []
    remaining = set(elim_vars)
    while remaining:
        v = min(remaining, key=lambda x: (len(adjacency[x]), x))
        order.append(v)
        neighbors = adjacency[v]
        for a in neighbors:
            adjacency[a] = (adjacency[a] | neighbors) - {a, v}
        for a in adjacency:
            adjacency[a].discard(v)
        remaining.discard(v)
    return order


def eliminate(ssbn: SSBN, query: Query,
              order: Optional[Sequence[str]] = None) -> Posterior:
    """Exact marginals for every target via variable elimination."""
    targets = query.target_texts()
    for t in targets:
        if t not in ssbn.nodes:
            raise InferenceError(f"target {t} is not a node of this SSBN")
    observed = _evidence_indices(ssbn, query)

    factors: list[Factor] = []
    for node in ssbn.sorted_nodes():
        f = _node_factor(node)
        # reduce observed non-target axes; targets keep their axis via an
        # indicator so the posterior degenerates to the observed point mass
        for var in tuple(f.vars):
            if var in observed and var not in targets:
                axis = f.vars.index(var)
                f = Factor(f.vars[:axis] + f.vars[axis + 1:],
                           np.take(f.table, observed[var], axis=axis))
        factors.append(f)
    for t in targets:
        if t in observed:
            node = ssbn.nodes[t]
            indicator = np.zeros(len(node.states))
            indicator[observed[t]] = 1.0
            factors.append(Factor((t,), indicator))

    all_vars = {v for f in factors for v in f.vars}
    elim_vars = all_vars - set(targets)
    if order is None:
        order_list = min_degree_order([set(f.vars) for f in factors], elim_vars)
    else:
        order_list = list(order)
        if set(order_list) != elim_vars:
            raise InferenceError(
                "elimination order must cover exactly the non-target variables")

    for var in order_list:
        related = [f for f in factors if var in f.vars]
        if not related:
            continue
        factors = [f for f in factors if var not in f.vars]
        factors.append(_sum_out(_multiply(related), var))

    final = _multiply(factors)
    z = float(final.table.sum())
    if z <= 0.0:
        raise InconsistentEvidence(
            "evidence has probability zero under this SSBN", query.evidence)
    marginals: dict[str, tuple[tuple[str, ...], tuple[float, ...]]] = {}
    for t in targets:
        node = ssbn.nodes[t]
        if t not in final.vars:
            raise InferenceError(f"target {t} vanished during elimination")
        f = final
        for other in final.vars:
            if other != t:
                f = _sum_out(f, other)
        vec = f.table / z
        marginals[t] = (node.states, tuple(float(x) for x in vec))
    return Posterior(marginals, z)


# ---------------------------------------------------------------------------
# brute-force oracle


def brute_force_posterior(ssbn: SSBN, query: Query) -> Posterior:
    """Enumerate the full joint over unobserved nodes; the verification oracle.

    Multiplies every CPT into one dense tensor (observed axes clamped to the
    finding value), so it shares no code with the elimination path beyond
    the CPT data itself.
    """
    targets = query.target_texts()
    for t in targets:
        if t not in ssbn.nodes:
            raise InferenceError(f"target {t} is not a node of this SSBN")
    observed = _evidence_indices(ssbn, query)

    free = [t for t in sorted(ssbn.nodes) if t not in observed]
    total = 1
    for t in free:
        total *= len(ssbn.nodes[t].states)
        if total > ORACLE_STATE_GUARD:
            raise StateSpaceTooLarge(
                f"joint state count exceeds the oracle guard {ORACLE_STATE_GUARD}")
    if len(free) > ORACLE_DIM_GUARD:
        raise StateSpaceTooLarge(
            f"{len(free)} unobserved nodes exceed the oracle dimension guard")
    axis_of = {t: i for i, t in enumerate(free)}
    shape = tuple(len(ssbn.nodes[t].states) for t in free)

    joint = np.ones(shape)
    for text in sorted(ssbn.nodes):
        node = ssbn.nodes[text]
        sizes = tuple(len(s) for s in node.cpt.parent_states) + (len(node.states),)
        arr = node.cpt.table.reshape(sizes)
        axis_vars = [p.text for p in node.parents] + [text]
        # clamp observed axes
        for i in reversed(range(len(axis_vars))):
            var = axis_vars[i]
            if var in observed:
                arr = np.take(arr, observed[var], axis=i)
                del axis_vars[i]
        # embed into the global joint
        if axis_vars:
            perm = sorted(range(len(axis_vars)), key=lambda i: axis_of[axis_vars[i]])
            arr = np.transpose(arr, perm)
            full = [1] * len(free)
            for var in axis_vars:
                full[axis_of[var]] = shape[axis_of[var]]
            arr = arr.reshape(full)
        joint = joint * arr

    z = float(joint.sum())
    if z <= 0.0:
        raise InconsistentEvidence(
            "evidence has probability zero under this SSBN", query.evidence)
    marginals: dict[str, tuple[tuple[str, ...], tuple[float, ...]]] = {}
    for t in targets:
        node = ssbn.nodes[t]
        if t in observed:
            vec = [1.0 if i == observed[t] else 0.0 for i in range(len(node.states))]
        else:
            axes = tuple(i for i in range(len(free)) if free[i] != t)
            vec = [float(x) for x in (joint.sum(axis=axes) / z)]
        marginals[t] = (node.states, tuple(vec))
    return Posterior(marginals, z)


# ---------------------------------------------------------------------------
# end-to-end


@dataclass(frozen=True)
class TargetPosterior:
    target: str
    states: tuple[str, ...]
    probs: tuple[float, ...]

    def to_json(self, evidence_probability: float, ssbn_nodes: int,
                elapsed_ms: float) -> dict:
        return {
            "target": self.target,
            "states": list(self.states),
            "probs": list(self.probs),
            "evidence_probability": evidence_probability,
            "ssbn_nodes": ssbn_nodes,
            "elapsed_ms": elapsed_ms,
        }


@dataclass(frozen=True)
class QueryResult:
    posteriors: tuple[TargetPosterior, ...]
    evidence_probability: float
    ssbn_nodes: int
    ssbn_nodes_unpruned: int
    elapsed_ms: float

    def to_json(self) -> list[dict]:
        return [p.to_json(self.evidence_probability, self.ssbn_nodes,
                          self.elapsed_ms) for p in self.posteriors]


def answer_query(v: ValidatedMTheory,
                 findings: Union[Evidence, Sequence[Finding]],
                 targets: Sequence[Union[RVInstance, LogicalTerm]],
                 limits: Optional[GroundingLimits] = None,
                 oracle: bool = False,
                 prune: bool = True) -> tuple[QueryResult, SSBN]:
    """Build the SSBN for a query, prune it, and compute exact posteriors."""
    started = time.perf_counter()
    evidence = findings if isinstance(findings, Evidence) \
        else Evidence(findings=tuple(findings))
    instances = [t if isinstance(t, RVInstance) else lt_to_instance(t, v.registry)
                 for t in targets]
    ssbn = build_ssbn(v, evidence, instances, limits)
    pruned = prune_ssbn(ssbn) if prune else ssbn
    query = Query(tuple(instances), pruned.evidence)
    posterior = brute_force_posterior(pruned, query) if oracle \
        else eliminate(pruned, query)
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    posteriors = []
    for inst in instances:
        states, probs = posterior.marginals[inst.text]
        posteriors.append(TargetPosterior(inst.text, states, probs))
    result = QueryResult(tuple(posteriors), posterior.evidence_probability,
                         len(pruned.nodes), len(ssbn.nodes), elapsed_ms)
    return result, pruned
