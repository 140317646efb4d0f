"""Prefix-merged trajectory trees, one per task instance.

Internal nodes are actions (merged on canonical action key by default),
leaves carry the binary outcome of one retained trajectory. Every
root-to-leaf path reproduces exactly one retained trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

from .errors import InputError
from .model import CanonConfig, Trajectory, canonicalize_action

ROOT = "root"
ACTION = "action"
LEAF = "leaf"


@dataclass
class TreeNode:
    node_id: int
    kind: str  # root | action | leaf
    action_key: str | None = None
    action_raw: str | None = None  # first-merged occurrence, preserved verbatim
    observation: str | None = None
    children: list[int] = field(default_factory=list)
    outcome: int | None = None  # leaves only
    trajectory_id: str | None = None  # leaves only (provenance)


@dataclass
class TrajTree:
    instance_id: str
    prompt: str
    nodes: dict[int, TreeNode]
    root_id: int
    path_count: int
    trajectory_ids: list[str]
    observation_divergences: int = 0  # merges where recorded observations disagreed


def build_tree(
    instance_id: str,
    prompt: str,
    ts: list[Trajectory],
    canon: CanonConfig = CanonConfig(),
    strict_merge: bool = False,
) -> TrajTree:
    """Insert each trajectory along shared-prefix action nodes, then append its leaf.

    strict_merge widens the merge key from the canonical action to
    (action, observation), for nondeterministic environments.
    """
    if not ts:
        raise InputError(f"instance {instance_id!r} has no trajectories")
    root = TreeNode(node_id=0, kind=ROOT)
    nodes = {0: root}
    divergences = 0
    next_id = 1
    for t in ts:
        if t.instance_id != instance_id:
            raise InputError(
                f"trajectory {t.trajectory_id!r} belongs to {t.instance_id!r}, "
                f"not {instance_id!r}"
            )
        if t.prompt != prompt:
            raise InputError(f"prompt mismatch in instance {instance_id!r}")
        cur = root
        for step in t.steps:
            key = canonicalize_action(step.action, canon).key
            match = None
            for child_id in cur.children:
                child = nodes[child_id]
                if child.kind != ACTION or child.action_key != key:
                    continue
                if strict_merge and child.observation != step.observation:
                    continue
                match = child
                break
            if match is None:
                match = TreeNode(
                    node_id=next_id,
                    kind=ACTION,
                    action_key=key,
                    action_raw=step.action,
                    observation=step.observation,
                )
                nodes[next_id] = match
                cur.children.append(next_id)
                next_id += 1
            else:
                if match.observation is None:
                    match.observation = step.observation
                elif step.observation is not None and step.observation != match.observation:
                    divergences += 1  # keep first-seen text
            cur = match
        leaf = TreeNode(
            node_id=next_id,
            kind=LEAF,
            outcome=t.resolved,
            trajectory_id=t.trajectory_id,
        )
        nodes[next_id] = leaf
        cur.children.append(next_id)
        next_id += 1
    return TrajTree(
        instance_id=instance_id,
        prompt=prompt,
        nodes=nodes,
        root_id=0,
        path_count=len(ts),
        trajectory_ids=[t.trajectory_id for t in ts],
        observation_divergences=divergences,
    )


def enumerate_paths(tree: TrajTree) -> list[tuple[tuple[str, ...], int, str]]:
    """Depth-first, child-order-stable list of (action keys, outcome, trajectory_id)."""
    out: list[tuple[tuple[str, ...], int, str]] = []
    # explicit stack: trajectories can be long
    stack: list[tuple[int, tuple[str, ...]]] = [(tree.root_id, ())]
    while stack:
        node_id, prefix = stack.pop()
        node = tree.nodes[node_id]
        if node.kind == LEAF:
            assert node.outcome is not None and node.trajectory_id is not None
            out.append((prefix, node.outcome, node.trajectory_id))
            continue
        if node.kind == ACTION:
            assert node.action_key is not None
            prefix = prefix + (node.action_key,)
        for child_id in reversed(node.children):
            stack.append((child_id, prefix))
    return out


def iter_path_nodes(tree: TrajTree, node_id: int) -> Iterator[TreeNode]:
    """Action nodes on the root-to-node path, in root-first order (node included)."""
    parents: dict[int, int] = {}
    for nid, node in tree.nodes.items():
        for child_id in node.children:
            parents[child_id] = nid
    path = []
    cur = node_id
    while cur != tree.root_id:
        path.append(tree.nodes[cur])
        cur = parents[cur]
    yield from reversed(path)


def _path_char_len(tree: TrajTree, prompt: str) -> list[tuple[int, int, int]]:
    """(char length, step count, outcome) per root-to-leaf path."""
    out = []
    stack: list[tuple[int, int, int]] = [(tree.root_id, len(prompt), 0)]
    while stack:
        node_id, chars, depth = stack.pop()
        node = tree.nodes[node_id]
        if node.kind == LEAF:
            out.append((chars, depth, node.outcome or 0))
            continue
        if node.kind == ACTION:
            chars += len(node.action_raw or "")
            chars += len(node.observation or "")
            depth += 1
        for child_id in node.children:
            stack.append((child_id, chars, depth))
    return out


def tree_stats(trees: list[TrajTree]) -> dict[str, Any]:
    """Corpus statistics: counts, approximate token length, average path length.

    Token length is approximated as characters / 4 so no tokenizer is
    required; the exact character average is reported alongside.
    """
    paths: list[tuple[int, int, int]] = []
    for tree in trees:
        paths.extend(_path_char_len(tree, tree.prompt))
    n = len(paths)
    successful = sum(1 for _, _, outcome in paths if outcome == 1)
    avg_chars = sum(chars for chars, _, _ in paths) / n if n else 0.0
    avg_steps = sum(steps for _, steps, _ in paths) / n if n else 0.0
    return {
        "instance_count": len(trees),
        "trajectory_count": n,
        "successful_count": successful,
        "wrong_count": n - successful,
        "avg_char_len": avg_chars,
        "avg_token_len": round(avg_chars / 4),
        "avg_path_len": avg_steps,
        "critical_pair_count": None,  # joined in by the emission stage
    }


def tree_to_dict(tree: TrajTree) -> dict[str, Any]:
    """Export schema consumed by scoring joins and visualization tools."""
    return {
        "instance_id": tree.instance_id,
        "prompt": tree.prompt,
        "root_id": tree.root_id,
        "path_count": tree.path_count,
        "trajectory_ids": list(tree.trajectory_ids),
        "observation_divergences": tree.observation_divergences,
        "nodes": [
            {
                "node_id": node.node_id,
                "kind": node.kind,
                "action_key": node.action_key,
                "action_raw": node.action_raw,
                "observation": node.observation,
                "children": list(node.children),
                "outcome": node.outcome,
                "trajectory_id": node.trajectory_id,
            }
            for node in (tree.nodes[nid] for nid in sorted(tree.nodes))
        ],
    }
