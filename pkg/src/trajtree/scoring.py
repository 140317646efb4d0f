"""Node scoring by subtree success fraction and critical action extraction.

Scores are exact rationals (successful paths / total paths through the
subtree); two sibling actions form a critical pair when their scores
differ by strictly more than the threshold (default 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .errors import ConfigError, InvariantError
from .model import CanonConfig, canonicalize_action
from .tree import ACTION, LEAF, TrajTree, iter_path_nodes

DEFAULT_THRESHOLD = Fraction(1, 2)

ALL_PAIRS = "all-pairs"
MAX_MIN = "max-min"


@dataclass(frozen=True)
class NodeScore:
    node_id: int
    successes: int
    total: int

    @property
    def value(self) -> Fraction:
        return Fraction(self.successes, self.total)


@dataclass(frozen=True)
class Segment:
    role: str  # prompt | action | observation
    content: str


@dataclass(frozen=True)
class CriticalPair:
    instance_id: str
    context: tuple[Segment, ...]  # prompt, then alternating action/observation, raw text
    chosen: str
    rejected: str
    score_chosen: Fraction
    score_rejected: Fraction
    parent_node_id: int


def score_nodes(tree: TrajTree) -> dict[int, NodeScore]:
    """Post-order scoring: leaf = its outcome over 1, internal = sum over children."""
    scores: dict[int, NodeScore] = {}
    # iterative post-order; real trajectories can exceed the recursion limit
    stack: list[tuple[int, bool]] = [(tree.root_id, False)]
    while stack:
        node_id, expanded = stack.pop()
        node = tree.nodes[node_id]
        if node.kind == LEAF:
            assert node.outcome is not None
            scores[node_id] = NodeScore(node_id, successes=node.outcome, total=1)
            continue
        if not expanded:
            stack.append((node_id, True))
            stack.extend((child_id, False) for child_id in node.children)
            continue
        successes = sum(scores[c].successes for c in node.children)
        total = sum(scores[c].total for c in node.children)
        scores[node_id] = NodeScore(node_id, successes=successes, total=total)
    if scores[tree.root_id].total != tree.path_count:
        raise InvariantError(
            f"root path total {scores[tree.root_id].total} != path_count {tree.path_count}"
        )
    return scores


def identify_critical_actions(
    tree: TrajTree,
    scores: dict[int, NodeScore],
    threshold: Fraction = DEFAULT_THRESHOLD,
    pair_mode: str = ALL_PAIRS,
) -> list[tuple[int, int, int]]:
    """(parent, chosen child, rejected child) triples with score gap > threshold.

    Only action children participate; leaf children terminate a
    trajectory and carry no contrastable action. all-pairs emits every
    qualifying unordered pair; max-min emits at most one per parent.
    """
    threshold = Fraction(threshold)
    if not (0 < threshold < 1):
        raise ConfigError(f"critical threshold must be in (0, 1), got {threshold}")
    if pair_mode not in (ALL_PAIRS, MAX_MIN):
        raise ConfigError(f"unknown pair mode {pair_mode!r}")
    triples: list[tuple[int, int, int]] = []
    stack = [tree.root_id]
    while stack:
        node_id = stack.pop()
        node = tree.nodes[node_id]
        action_children = [c for c in node.children if tree.nodes[c].kind == ACTION]
        stack.extend(reversed(action_children))
        if len(action_children) < 2:
            continue
        if pair_mode == MAX_MIN:
            hi = max(action_children, key=lambda c: scores[c].value)
            lo = min(action_children, key=lambda c: scores[c].value)
            if scores[hi].value - scores[lo].value > threshold:
                triples.append((node_id, hi, lo))
            continue
        for i, a in enumerate(action_children):
            for b in action_children[i + 1 :]:
                diff = scores[a].value - scores[b].value
                if diff > threshold:
                    triples.append((node_id, a, b))
                elif -diff > threshold:
                    triples.append((node_id, b, a))
    return triples


def extract_critical_pairs(
    tree: TrajTree,
    triples: list[tuple[int, int, int]],
    scores: dict[int, NodeScore],
    canon: CanonConfig = CanonConfig(),
) -> list[CriticalPair]:
    """Materialize pairs with their shared raw-text context prefix.

    Pairs identical after canonicalization (context + chosen + rejected)
    are emitted once, keeping the first occurrence.
    """
    pairs: list[CriticalPair] = []
    seen: set[tuple] = set()
    for parent_id, chosen_id, rejected_id in triples:
        context: list[Segment] = [Segment("prompt", tree.prompt)]
        for node in iter_path_nodes(tree, parent_id):
            assert node.action_raw is not None
            if node.observation is None:
                raise InvariantError(
                    f"context node {node.node_id} in {tree.instance_id!r} "
                    "lacks an observation"
                )
            context.append(Segment("action", node.action_raw))
            context.append(Segment("observation", node.observation))
        chosen = tree.nodes[chosen_id]
        rejected = tree.nodes[rejected_id]
        assert chosen.action_raw is not None and rejected.action_raw is not None
        signature = (
            tuple(
                canonicalize_action(seg.content, canon).key
                for seg in context
                if seg.role == "action"
            ),
            chosen.action_key,
            rejected.action_key,
        )
        if signature in seen:
            continue
        seen.add(signature)
        pairs.append(
            CriticalPair(
                instance_id=tree.instance_id,
                context=tuple(context),
                chosen=chosen.action_raw,
                rejected=rejected.action_raw,
                score_chosen=scores[chosen_id].value,
                score_rejected=scores[rejected_id].value,
                parent_node_id=parent_id,
            )
        )
    return pairs


def format_rational(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def scored_tree_to_dict(tree: TrajTree, scores: dict[int, NodeScore]) -> dict[str, Any]:
    """Tree export with per-node score columns joined on."""
    from .tree import tree_to_dict

    out = tree_to_dict(tree)
    for node in out["nodes"]:
        score = scores[node["node_id"]]
        node["successes"] = score.successes
        node["total"] = score.total
        node["score"] = f"{score.successes}/{score.total}"
    return out


def pair_to_dict(pair: CriticalPair) -> dict[str, Any]:
    """Line-record export; scores as exact "num/den" strings plus decimals."""
    return {
        "instance_id": pair.instance_id,
        "parent_node_id": pair.parent_node_id,
        "context": [{"role": s.role, "content": s.content} for s in pair.context],
        "chosen": pair.chosen,
        "rejected": pair.rejected,
        "score_chosen": format_rational(pair.score_chosen),
        "score_rejected": format_rational(pair.score_rejected),
        "score_chosen_decimal": float(pair.score_chosen),
        "score_rejected_decimal": float(pair.score_rejected),
    }
