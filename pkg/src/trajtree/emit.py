"""Dataset emission: masked-SFT examples, DPO pairs, and run statistics.

All emitted text is raw trajectory text, never the canonicalized form.
Loss masks are segment-granular; trainers tokenize and broadcast them.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable

from .ingest import IngestReport
from .scoring import CriticalPair, Segment, format_rational
from .tree import TrajTree, tree_stats
from .model import Trajectory


@dataclass(frozen=True)
class MaskedSegment:
    role: str  # prompt | action | observation
    content: str
    loss: bool  # actions train; prompt and observations are masked out


@dataclass(frozen=True)
class SftExample:
    instance_id: str
    trajectory_id: str
    segments: tuple[MaskedSegment, ...]


@dataclass(frozen=True)
class DpoExample:
    instance_id: str
    context: tuple[Segment, ...]
    chosen: str
    rejected: str
    score_chosen: Fraction
    score_rejected: Fraction


def emit_sft(trajectories: Iterable[Trajectory]) -> tuple[list[SftExample], int]:
    """One example per resolved trajectory; failures never appear.

    Returns (examples, warning_count); the warning counts an input that
    yielded no successful trajectory at all.
    """
    out = []
    saw_any = False
    for t in trajectories:
        saw_any = True
        if t.resolved != 1:
            continue
        segments = [MaskedSegment("prompt", t.prompt, loss=False)]
        for step in t.steps:
            segments.append(MaskedSegment("action", step.action, loss=True))
            if step.observation is not None:
                segments.append(MaskedSegment("observation", step.observation, loss=False))
        out.append(
            SftExample(
                instance_id=t.instance_id,
                trajectory_id=t.trajectory_id,
                segments=tuple(segments),
            )
        )
    warnings = 1 if saw_any and not out else 0
    return out, warnings


def emit_dpo(pairs: Iterable[CriticalPair]) -> list[DpoExample]:
    """Mirror extracted pairs in extraction order (instance, parent node, pair index)."""
    return [
        DpoExample(
            instance_id=p.instance_id,
            context=p.context,
            chosen=p.chosen,
            rejected=p.rejected,
            score_chosen=p.score_chosen,
            score_rejected=p.score_rejected,
        )
        for p in pairs
    ]


def emit_stats(
    report: IngestReport | None,
    trees: list[TrajTree],
    pairs: list[CriticalPair],
) -> dict[str, Any]:
    """Single statistics record: corpus counts plus ingest removal counts."""
    stats = tree_stats(trees)
    stats["critical_pair_count"] = len(pairs)
    stats["observation_divergences"] = sum(t.observation_divergences for t in trees)
    if report is not None:
        stats["ingest"] = report.to_dict()
    return stats


def sft_to_dict(ex: SftExample) -> dict[str, Any]:
    return {
        "instance_id": ex.instance_id,
        "trajectory_id": ex.trajectory_id,
        "segments": [
            {"role": s.role, "content": s.content, "loss": s.loss} for s in ex.segments
        ],
    }


def dpo_to_dict(ex: DpoExample) -> dict[str, Any]:
    return {
        "instance_id": ex.instance_id,
        "context": [{"role": s.role, "content": s.content} for s in ex.context],
        "chosen": ex.chosen,
        "rejected": ex.rejected,
        "score_chosen": format_rational(ex.score_chosen),
        "score_rejected": format_rational(ex.score_rejected),
        "score_chosen_decimal": float(ex.score_chosen),
        "score_rejected_decimal": float(ex.score_rejected),
    }
