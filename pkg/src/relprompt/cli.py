"""Command-line entry points: gen-data, train, eval, ablate, single-view."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import Checkpoint
from .dataio import SynthSpec, load_dataset, load_manifest, save_dataset, synth_fraud_graph
from .harness import TrainConfig, evaluate, node_scores, run_ablation, run_single_view, train
from .prompt import save_template, template_for_graph
from .relgraph import SplitMasks, stratified_split


def _load_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    with open(path, encoding="utf-8") as f:
        return TrainConfig.from_dict(json.load(f))


def _write_report(report, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2)
        f.write("\n")


def _cmd_gen_data(args) -> int:
    spec = SynthSpec.from_json(args.spec)
    graph, manifest = synth_fraud_graph(spec)
    manifest = save_dataset(graph, args.out, name=manifest.name)
    save_template(template_for_graph(graph), Path(args.out) / "template.json")
    print(f"wrote {graph.node_count} nodes, {graph.relation_count} relations to {args.out}")
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    graph = load_dataset(manifest)
    config = _load_config(args.config)
    splits = stratified_split(graph, seed=config.seed)
    checkpoint = train(graph, splits, config)
    checkpoint.manifest_path = str(Path(args.manifest).resolve())
    checkpoint.save(args.out)
    with open(Path(args.out) / "history.json", "w", encoding="utf-8") as f:
        json.dump(checkpoint.history, f, indent=2)
        f.write("\n")
    best = checkpoint.history[checkpoint.best_epoch]["val_auc"] if checkpoint.history else None
    print(f"saved checkpoint to {args.out} (best val AUC: {best})")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.ckpt)
    manifest_path = args.manifest or checkpoint.manifest_path
    if manifest_path is None:
        raise ValueError("checkpoint records no manifest; pass --manifest")
    graph = load_dataset(load_manifest(manifest_path))
    splits = SplitMasks.from_dict(checkpoint.splits)
    mask = {"train": splits.train, "val": splits.val, "test": splits.test}[args.split]
    report = evaluate(checkpoint, graph, mask)
    _write_report(report, args.json)
    if args.scores:
        entries = node_scores(checkpoint, graph, mask)
        with open(args.scores, "w", encoding="utf-8") as f:
            f.write("node_id,score,predicted,label\n")
            for e in entries:
                f.write(f"{e.node_id},{e.score:.17g},{e.predicted},{graph.labels[e.node_id]}\n")
    print(json.dumps(report.as_dict()))
    return 0


def _cmd_ablate(args) -> int:
    manifest = load_manifest(args.manifest)
    graph = load_dataset(manifest)
    config = _load_config(args.config)
    splits = stratified_split(graph, seed=config.seed)
    modes = tuple(args.modes.split(","))
    reports = run_ablation(graph, splits, config, modes)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for mode, report in reports.items():
        _write_report(report, str(outdir / f"{mode}.json"))
        summary[mode] = report.as_dict()
    with open(outdir / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    print(json.dumps(summary))
    return 0


def _cmd_single_view(args) -> int:
    manifest = load_manifest(args.manifest)
    graph = load_dataset(manifest)
    config = _load_config(args.config)
    splits = stratified_split(graph, seed=config.seed)
    report = run_single_view(graph, splits, config, args.view)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_report(report, str(outdir / f"single_view_{args.view}.json"))
    print(json.dumps(report.as_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relprompt",
        description="Multi-relational graph soft prompts for fraud scoring",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic planted-fraud dataset")
    p.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one mode and save a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON (defaults if omitted)")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--json", required=True, help="report output path")
    p.add_argument("--scores", default=None, help="optional per-node score CSV")
    p.add_argument("--manifest", default=None, help="override the recorded manifest path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate several modes")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--modes", default="full,wo_llm,wo_semantics,wo_joint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("single-view", help="train with a single relation pair")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_single_view)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
