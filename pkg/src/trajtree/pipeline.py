"""Stage orchestration shared by the CLI: per-instance processing and selfcheck.

Instances are independent, so tree building, scoring, and pair
extraction fan out across a thread pool; results are merged back in
first-appearance instance order so parallelism never changes output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .errors import InvariantError
from .ingest import ingest_trajectories
from .model import CanonConfig, Trajectory
from .scoring import (
    ALL_PAIRS,
    DEFAULT_THRESHOLD,
    CriticalPair,
    NodeScore,
    extract_critical_pairs,
    identify_critical_actions,
    score_nodes,
)
from .synth import SynthConfig, brute_force_pairs, brute_force_scores, generate
from .tree import ACTION, LEAF, TrajTree, build_tree, enumerate_paths


@dataclass(frozen=True)
class StageConfig:
    canon: CanonConfig = CanonConfig()
    loop_threshold: int = 3
    outlier_min_prefix: int = 1
    strict_merge: bool = False
    critical_threshold: Fraction = DEFAULT_THRESHOLD
    pair_mode: str = ALL_PAIRS
    jobs: int = 1


@dataclass
class InstanceResult:
    tree: TrajTree
    scores: dict[int, NodeScore]
    pairs: list[CriticalPair] = field(default_factory=list)


def process_instances(
    groups: dict[str, list[Trajectory]], config: StageConfig
) -> dict[str, InstanceResult]:
    """Tree + scores + pairs per instance, in the groups' key order."""

    def one(item: tuple[str, list[Trajectory]]) -> tuple[str, InstanceResult]:
        instance_id, ts = item
        tree = build_tree(
            instance_id, ts[0].prompt, ts, canon=config.canon, strict_merge=config.strict_merge
        )
        scores = score_nodes(tree)
        triples = identify_critical_actions(
            tree, scores, threshold=config.critical_threshold, pair_mode=config.pair_mode
        )
        pairs = extract_critical_pairs(tree, triples, scores, canon=config.canon)
        return instance_id, InstanceResult(tree=tree, scores=scores, pairs=pairs)

    items = list(groups.items())
    if config.jobs <= 1:
        results = [one(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(one, items))
    return dict(results)


def node_prefix_scores(
    tree: TrajTree, scores: dict[int, NodeScore]
) -> dict[tuple[str, ...], tuple[int, int]]:
    """Node scores keyed by canonical action prefix (action-only merge mode)."""
    out: dict[tuple[str, ...], tuple[int, int]] = {}
    stack: list[tuple[int, tuple[str, ...]]] = [(tree.root_id, ())]
    while stack:
        node_id, prefix = stack.pop()
        node = tree.nodes[node_id]
        if node.kind == LEAF:
            continue
        if node.kind == ACTION:
            assert node.action_key is not None
            prefix = prefix + (node.action_key,)
        score = scores[node_id]
        out[prefix] = (score.successes, score.total)
        stack.extend((c, prefix) for c in node.children)
    return out


def pairs_as_prefix_set(
    tree: TrajTree, pairs: list[CriticalPair], canon: CanonConfig
) -> set[tuple[tuple[str, ...], str, str]]:
    from .model import canonicalize_action

    out = set()
    for p in pairs:
        prefix = tuple(
            canonicalize_action(s.content, canon).key
            for s in p.context
            if s.role == "action"
        )
        chosen = canonicalize_action(p.chosen, canon).key
        rejected = canonicalize_action(p.rejected, canon).key
        out.add((prefix, chosen, rejected))
    return out


def selfcheck(synth_config: SynthConfig, jobs: int = 1) -> dict[str, Any]:
    """Synthesize a corpus, run the pipeline, and compare against the oracles.

    Raises InvariantError on any disagreement; returns a summary record.
    Uses default filtration parameters to match the generated ground truth.
    """
    corpus, truth = generate(synth_config)
    groups, report = ingest_trajectories(corpus)
    stage = StageConfig(jobs=jobs)
    results = process_instances(groups, stage)

    checked_instances = 0
    pair_total = 0
    for instance_id, truth_rec in truth["instances"].items():
        retained = groups.get(instance_id, [])
        if set(t.trajectory_id for t in retained) != set(truth_rec["retained"]):
            raise InvariantError(f"{instance_id}: retained set differs from ground truth")
        if not retained:
            continue
        result = results[instance_id]
        # path reconstruction: leaves must reproduce the retained set exactly
        got_paths = {
            (keys, outcome) for keys, outcome, _ in enumerate_paths(result.tree)
        }
        want_paths = {(t.action_keys(), t.resolved) for t in retained}
        if got_paths != want_paths:
            raise InvariantError(f"{instance_id}: tree paths differ from retained set")
        oracle_scores = brute_force_scores(retained)
        if node_prefix_scores(result.tree, result.scores) != oracle_scores:
            raise InvariantError(f"{instance_id}: node scores disagree with oracle")
        oracle_pairs = brute_force_pairs(oracle_scores, stage.critical_threshold)
        got_pairs = pairs_as_prefix_set(result.tree, result.pairs, stage.canon)
        if got_pairs != oracle_pairs:
            raise InvariantError(f"{instance_id}: critical pairs disagree with oracle")
        for planted in truth_rec["planted_pairs"]:
            key = (tuple(planted["prefix"]), planted["chosen"], planted["rejected"])
            if key not in oracle_pairs:
                raise InvariantError(f"{instance_id}: planted pair missing from oracle")
        checked_instances += 1
        pair_total += len(result.pairs)

    conserved = (
        report.duplicates_removed
        + report.loops_removed
        + report.outliers_removed
        + report.retained
        == report.input_count
    )
    if not conserved:
        raise InvariantError("ingest conservation violated")
    return {
        "status": "ok",
        "seed": synth_config.seed,
        "instances_generated": synth_config.instances,
        "instances_checked": checked_instances,
        "trajectories_input": report.input_count,
        "trajectories_retained": report.retained,
        "critical_pairs": pair_total,
    }
