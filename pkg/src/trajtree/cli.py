"""Command-line entry point for the trajectory-tree pipeline.

Subcommands cover each stage plus `all` (full pipeline) and `selfcheck`
(synthetic corpus vs. brute-force oracles). Exit codes: 0 success,
1 usage/config error, 2 invalid input data, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any

from .emit import dpo_to_dict, emit_dpo, emit_sft, emit_stats, sft_to_dict
from .errors import ConfigError, InputError, InvariantError
from .ingest import group_by_instance, ingest_trajectories
from .losses import DpoInputs, TrajectoryLogProbs, dpo_loss, dpo_loss_grad, sft_loss
from .model import CanonConfig, parse_trajectory_stream, serialize_trajectory
from .pipeline import StageConfig, process_instances, selfcheck
from .scoring import pair_to_dict, scored_tree_to_dict
from .synth import SynthConfig, generate
from .tree import tree_to_dict

CONFIG_ENV_VAR = "TRAJTREE_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INVARIANT = 3

_CONFIG_DEFAULTS: dict[str, Any] = {
    "collapse_whitespace": True,
    "loop_threshold": 3,
    "outlier_min_prefix": 1,
    "merge_mode": "action-only",  # action-only | strict
    "critical_threshold": "1/2",
    "pair_mode": "all-pairs",  # all-pairs | max-min
    "sft_reduction": "sum",
    "lenient": False,
    "jobs": 1,
    "seed": 0,
}


def load_config(path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    config = dict(_CONFIG_DEFAULTS)
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        config.update(loaded)
    config.update({k: v for k, v in overrides.items() if v is not None})
    _validate_config(config)
    return config


def _validate_config(config: dict[str, Any]) -> None:
    if config["merge_mode"] not in ("action-only", "strict"):
        raise ConfigError(f"merge_mode must be action-only or strict: {config['merge_mode']!r}")
    if config["pair_mode"] not in ("all-pairs", "max-min"):
        raise ConfigError(f"pair_mode must be all-pairs or max-min: {config['pair_mode']!r}")
    if config["sft_reduction"] not in ("sum", "mean"):
        raise ConfigError(f"sft_reduction must be sum or mean: {config['sft_reduction']!r}")
    if int(config["loop_threshold"]) < 2:
        raise ConfigError("loop_threshold must be >= 2")
    if int(config["outlier_min_prefix"]) < 1:
        raise ConfigError("outlier_min_prefix must be >= 1")
    if int(config["jobs"]) < 1:
        raise ConfigError("jobs must be >= 1")
    threshold = parse_threshold(config["critical_threshold"])
    if not (0 < threshold < 1):
        raise ConfigError(f"critical_threshold must be in (0, 1): {threshold}")


def parse_threshold(value: Any) -> Fraction:
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConfigError(f"bad critical_threshold {value!r}") from exc


def stage_config(config: dict[str, Any]) -> StageConfig:
    return StageConfig(
        canon=CanonConfig(collapse_whitespace=bool(config["collapse_whitespace"])),
        loop_threshold=int(config["loop_threshold"]),
        outlier_min_prefix=int(config["outlier_min_prefix"]),
        strict_merge=config["merge_mode"] == "strict",
        critical_threshold=parse_threshold(config["critical_threshold"]),
        pair_mode=config["pair_mode"],
        jobs=int(config["jobs"]),
    )


def echo_config(config: dict[str, Any]) -> dict[str, Any]:
    """Provenance copy of the effective config; jobs is an execution knob
    that must not change output bytes, so it is excluded."""
    return {k: v for k, v in config.items() if k != "jobs"}


def atomic_write(path: Path, text: str) -> None:
    """Write whole-file then rename, so failures never leave partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def jsonl(records: list[dict[str, Any]]) -> str:
    lines = [json.dumps(r, ensure_ascii=False, separators=(",", ":")) for r in records]
    return "".join(line + "\n" for line in lines)


def json_doc(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def _read_corpus(path: str, config: dict[str, Any]):
    canon = CanonConfig(collapse_whitespace=bool(config["collapse_whitespace"]))
    try:
        with open(path, "rb") as fh:
            return parse_trajectory_stream(fh, strict=not config["lenient"], canon=canon)
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc}") from exc


def _run_ingest(args, config):
    ts, skipped = _read_corpus(args.input, config)
    groups, report = ingest_trajectories(
        ts,
        loop_threshold=int(config["loop_threshold"]),
        outlier_min_prefix=int(config["outlier_min_prefix"]),
        canon=CanonConfig(collapse_whitespace=bool(config["collapse_whitespace"])),
    )
    report.malformed_skipped = skipped
    out = Path(args.out_dir)
    retained = [t for ts in groups.values() for t in ts]
    atomic_write(out / "retained.jsonl", "".join(serialize_trajectory(t) + "\n" for t in retained))
    doc = report.to_dict()
    doc["effective_config"] = echo_config(config)
    atomic_write(out / "ingest_report.json", json_doc(doc))
    return groups, report


def _grouped_retained(args, config):
    """Stage commands after ingest read the retained corpus and just group it."""
    ts, _ = _read_corpus(args.input, config)
    return group_by_instance(ts)


def cmd_ingest(args, config) -> int:
    _run_ingest(args, config)
    return EXIT_OK


def cmd_tree(args, config) -> int:
    groups = _grouped_retained(args, config)
    results = process_instances(groups, stage_config(config))
    atomic_write(
        Path(args.out_dir) / "trees.jsonl",
        jsonl([tree_to_dict(r.tree) for r in results.values()]),
    )
    return EXIT_OK


def cmd_score(args, config) -> int:
    groups = _grouped_retained(args, config)
    results = process_instances(groups, stage_config(config))
    atomic_write(
        Path(args.out_dir) / "scored_trees.jsonl",
        jsonl([scored_tree_to_dict(r.tree, r.scores) for r in results.values()]),
    )
    return EXIT_OK


def cmd_pairs(args, config) -> int:
    groups = _grouped_retained(args, config)
    results = process_instances(groups, stage_config(config))
    pairs = [p for r in results.values() for p in r.pairs]
    atomic_write(Path(args.out_dir) / "pairs.jsonl", jsonl([pair_to_dict(p) for p in pairs]))
    return EXIT_OK


def cmd_sft(args, config) -> int:
    groups = _grouped_retained(args, config)
    retained = [t for ts in groups.values() for t in ts]
    examples, warnings = emit_sft(retained)
    atomic_write(Path(args.out_dir) / "sft.jsonl", jsonl([sft_to_dict(e) for e in examples]))
    if warnings:
        print(f"warning: no successful trajectories in {args.input}", file=sys.stderr)
    return EXIT_OK


def cmd_dpo(args, config) -> int:
    groups = _grouped_retained(args, config)
    results = process_instances(groups, stage_config(config))
    pairs = [p for r in results.values() for p in r.pairs]
    examples = emit_dpo(pairs)
    atomic_write(Path(args.out_dir) / "dpo.jsonl", jsonl([dpo_to_dict(e) for e in examples]))
    return EXIT_OK


def cmd_stats(args, config) -> int:
    groups = _grouped_retained(args, config)
    results = process_instances(groups, stage_config(config))
    pairs = [p for r in results.values() for p in r.pairs]
    stats = emit_stats(None, [r.tree for r in results.values()], pairs)
    stats["effective_config"] = echo_config(config)
    atomic_write(Path(args.out_dir) / "stats.json", json_doc(stats))
    return EXIT_OK


def cmd_all(args, config) -> int:
    groups, report = _run_ingest(args, config)
    out = Path(args.out_dir)
    results = process_instances(groups, stage_config(config))
    trees = [r.tree for r in results.values()]
    pairs = [p for r in results.values() for p in r.pairs]
    retained = [t for ts in groups.values() for t in ts]
    atomic_write(out / "trees.jsonl", jsonl([tree_to_dict(t) for t in trees]))
    atomic_write(
        out / "scored_trees.jsonl",
        jsonl([scored_tree_to_dict(r.tree, r.scores) for r in results.values()]),
    )
    atomic_write(out / "pairs.jsonl", jsonl([pair_to_dict(p) for p in pairs]))
    examples, warnings = emit_sft(retained)
    atomic_write(out / "sft.jsonl", jsonl([sft_to_dict(e) for e in examples]))
    atomic_write(out / "dpo.jsonl", jsonl([dpo_to_dict(e) for e in emit_dpo(pairs)]))
    stats = emit_stats(report, trees, pairs)
    stats["effective_config"] = echo_config(config)
    atomic_write(out / "stats.json", json_doc(stats))
    if warnings:
        print(f"warning: no successful trajectories in {args.input}", file=sys.stderr)
    return EXIT_OK


def _synth_config(args, config) -> SynthConfig:
    return SynthConfig(
        seed=args.seed if args.seed is not None else int(config["seed"]),
        instances=args.instances,
        branching=args.branching,
        depth=args.depth,
        trajectories_per_instance=args.trajectories_per_instance,
        planted_critical=args.planted_critical,
        loop_rate=args.loop_rate,
        outlier_rate=args.outlier_rate,
        duplicate_rate=args.duplicate_rate,
        divergent_observations=args.divergent_observations,
    )


def cmd_synth(args, config) -> int:
    synth_cfg = _synth_config(args, config)
    corpus, truth = generate(synth_cfg)
    out = Path(args.out_dir)
    atomic_write(out / "corpus.jsonl", "".join(serialize_trajectory(t) + "\n" for t in corpus))
    atomic_write(out / "ground_truth.json", json_doc(truth))
    return EXIT_OK


def cmd_selfcheck(args, config) -> int:
    synth_cfg = _synth_config(args, config)
    summary = selfcheck(synth_cfg, jobs=int(config["jobs"]))
    print(json.dumps(summary, ensure_ascii=False, sort_keys=True))
    return EXIT_OK


def _loss_record(obj: dict[str, Any], default_reduction: str) -> dict[str, Any]:
    kind = obj.get("kind")
    if kind == "sft":
        lp = TrajectoryLogProbs(
            action_logps=tuple(obj["action_logps"]),
            observation_logps=tuple(obj.get("observation_logps", ())),
        )
        loss = sft_loss(lp, reduction=obj.get("reduction", default_reduction))
        return {"kind": "sft", "loss": loss}
    if kind == "dpo":
        x = DpoInputs(
            policy_chosen=float(obj["policy_chosen"]),
            policy_rejected=float(obj["policy_rejected"]),
            ref_chosen=float(obj["ref_chosen"]),
            ref_rejected=float(obj["ref_rejected"]),
            beta=float(obj["beta"]),
        )
        grad = dpo_loss_grad(x)
        return {
            "kind": "dpo",
            "loss": dpo_loss(x),
            "grad": {
                "policy_chosen": grad.policy_chosen,
                "policy_rejected": grad.policy_rejected,
                "ref_chosen": grad.ref_chosen,
                "ref_rejected": grad.ref_rejected,
            },
        }
    raise InputError(f"loss record kind must be 'sft' or 'dpo', got {kind!r}")


def cmd_loss(args, config) -> int:
    lines_out = []
    try:
        with open(args.input, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    lines_out.append(_loss_record(obj, config["sft_reduction"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise InputError(str(exc), line=line_no) from exc
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc}") from exc
    text = jsonl(lines_out)
    if args.output:
        atomic_write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajtree", description=__doc__)
    parser.add_argument("--config", help=f"config file path (or ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, needs_input=True, needs_out=True):
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        if needs_input:
            p.add_argument("--input", required=True, help="input corpus / records file")
        if needs_out:
            p.add_argument("--out-dir", required=True, help="output directory")
        for key, default in _CONFIG_DEFAULTS.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                p.add_argument(flag, dest=key, action="store_true", default=None)
            else:
                p.add_argument(flag, dest=key, type=type(default), default=None)
        return p

    add("ingest", cmd_ingest)
    add("tree", cmd_tree)
    add("score", cmd_score)
    add("pairs", cmd_pairs)
    add("sft", cmd_sft)
    add("dpo", cmd_dpo)
    add("stats", cmd_stats)
    add("all", cmd_all)

    loss = add("loss", cmd_loss, needs_out=False)
    loss.add_argument("--output", help="write results here instead of stdout")

    for name, func, needs_out in (("synth", cmd_synth, True), ("selfcheck", cmd_selfcheck, False)):
        p = add(name, func, needs_input=False, needs_out=needs_out)
        p.add_argument("--instances", type=int, default=20)
        p.add_argument("--branching", type=int, default=3)
        p.add_argument("--depth", type=int, default=6)
        p.add_argument("--trajectories-per-instance", type=int, default=6)
        p.add_argument("--planted-critical", type=int, default=1)
        p.add_argument("--loop-rate", type=float, default=0.1)
        p.add_argument("--outlier-rate", type=float, default=0.1)
        p.add_argument("--duplicate-rate", type=float, default=0.1)
        p.add_argument("--divergent-observations", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {k: getattr(args, k, None) for k in _CONFIG_DEFAULTS}
        config = load_config(args.config, overrides)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
