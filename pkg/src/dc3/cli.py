"""Command-line entry point for dataset, training, evaluation, proposal,
simulation, service and report commands."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import metrics as metrics_mod
from . import proposals as props
from . import trainer as trainer_mod
from .model import load_checkpoint


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    outputs: list[Path] = dataclasses.field(default_factory=list)


def _cmd_dataset_synth(args) -> CommandResult:
    config = ds.SyntheticConfig(
        k=args.k,
        n_images=args.n,
        fuzzy_fraction=args.fuzzy_fraction,
        ambiguity_range=(args.ambiguity_low, args.ambiguity_high),
        image_size=args.image_size,
        annotators_per_image=args.annotators,
        seed=args.seed,
    )
    manifest = ds.generate_synthetic(config, args.out)
    n_fuzzy = sum(
        1 for it in manifest.items if it.gt_soft is not None and ds.is_fuzzy(it.gt_soft)
    )
    return CommandResult(
        0,
        f"wrote {len(manifest.items)} images ({n_fuzzy} fuzzy) to {args.out}",
        [Path(args.out) / "manifest.json"],
    )


def _cmd_dataset_validate(args) -> CommandResult:
    manifest = ds.load_manifest(args.manifest)
    return CommandResult(
        0,
        f"{manifest.name}: {len(manifest.items)} items, "
        f"{manifest.num_classes} classes, no errors",
    )


def _load_run_config(args) -> trainer_mod.RunConfig:
    config = trainer_mod.RunConfig.from_json(args.config)
    if getattr(args, "manifest", None):
        config = dataclasses.replace(config, manifest=args.manifest)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "steps", None) is not None:
        config = dataclasses.replace(config, steps=args.steps)
    if getattr(args, "out", None):
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _cmd_train(args) -> CommandResult:
    config = _load_run_config(args)
    artifacts = trainer_mod.train(config)
    m = artifacts.final_metrics
    summary = (
        f"trained {config.steps} steps (ssl={config.ssl.name}, "
        f"dc3={'on' if config.dc3_enabled else 'off'}): "
        f"f1={_fmt(m.f1_weighted)} d={_fmt(m.inner_distance)} diff={_fmt(m.diff)} "
        f"fuzzy={m.fraction_fuzzy_predicted:.2f} degenerated={m.degenerated}"
    )
    outputs = [artifacts.checkpoint_path] if artifacts.checkpoint_path else []
    return CommandResult(0, summary, outputs)


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.4f}"


def _fmt_stat(cell) -> str:
    if cell is None:
        return "undefined"
    return f"{cell['mean']:.4f} +- {cell['std']:.4f} (n={cell['n']})"


def _cmd_suite(args) -> CommandResult:
    config = _load_run_config(args)
    result = trainer_mod.run_suite(config, n_seeds=args.seeds)
    lines = [f"{'metric':<16}{'best':>12}  mean +- std"]
    best = result.final_metrics[result.best_index] if result.best_index is not None else None
    for key, attr in (
        ("F1", "f1_weighted"),
        ("distance", "inner_distance"),
        ("diff", "diff"),
    ):
        stat_key = attr if attr != "f1_weighted" else "f1_weighted"
        best_v = _fmt(getattr(best, attr)) if best is not None else "none"
        lines.append(f"{key:<16}{best_v:>12}  {_fmt_stat(result.summary[stat_key])}")
    if result.summary["all_degenerated"]:
        lines.append("all runs degenerated; no best run selected")
    elif result.summary["n_excluded_degenerated"]:
        lines.append(
            f"excluded {result.summary['n_excluded_degenerated']} degenerated run(s)"
        )
    outputs = [Path(config.out_dir) / "summary.json"] if config.out_dir else []
    return CommandResult(0, "\n".join(lines), outputs)


def _cmd_evaluate(args) -> CommandResult:
    manifest = ds.load_manifest(args.manifest)
    model, cfg, _ = load_checkpoint(args.checkpoint)
    metrics = metrics_mod.evaluate(
        model, cfg, manifest, split=args.split, vanilla_mode=args.vanilla
    )
    outputs = []
    if args.out:
        Path(args.out).write_text(json.dumps(metrics.to_dict(), indent=1))
        outputs.append(Path(args.out))
    return CommandResult(
        0,
        f"f1={_fmt(metrics.f1_weighted)} d={_fmt(metrics.inner_distance)} "
        f"diff={_fmt(metrics.diff)} fuzzy={metrics.fraction_fuzzy_predicted:.2f} "
        f"degenerated={metrics.degenerated}",
        outputs,
    )


def _cmd_export_embeddings(args) -> CommandResult:
    out = trainer_mod.export_embeddings(args.checkpoint, args.manifest, args.out)
    return CommandResult(0, f"wrote embeddings to {out}", [out])


def _cmd_propose(args) -> CommandResult:
    proposals = props.generate_proposals(args.checkpoint, args.manifest, mode=args.mode)
    props.save_proposals(proposals, args.out)
    n_fuzzy = sum(e.kind == "fuzzy" for e in proposals.images)
    return CommandResult(
        0,
        f"{len(proposals.images)} proposals ({n_fuzzy} fuzzy in "
        f"{len(proposals.clusters)} clusters) -> {args.out}",
        [Path(args.out)],
    )


def _cmd_simulate(args) -> CommandResult:
    manifest = ds.load_manifest(args.manifest)
    gt = {it.image_id: it.gt_soft for it in manifest.items if it.gt_soft is not None}
    proposals = props.load_proposals(args.proposals) if args.proposals else None
    behavior = props.AnnotatorBehavior(
        accept_prob=args.accept_prob,
        base_time=args.base_time,
        proposal_time=args.proposal_time,
        noise=args.noise,
    )
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    mode = "none" if proposals is None else proposals.mode
    for rep in range(1, args.repetitions + 1):
        session = props.simulate_annotator(
            gt, proposals, behavior, rng, annotator_id=args.annotator, repetition=rep
        )
        path = out_dir / f"{args.annotator}_{mode}_rep{rep}.jsonl"
        props.save_session(session, path)
        written.append(path)
    return CommandResult(
        0,
        f"simulated {args.repetitions} x {len(gt)} annotations (mode={mode}) -> {out_dir}",
        written,
    )


def _cmd_report(args) -> CommandResult:
    sessions = props.load_sessions(args.sessions)
    if not sessions:
        return CommandResult(1, f"no session logs under {args.sessions}")
    report = props.build_report(sessions)
    doc = report.to_dict()
    outputs = []
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1))
        outputs.append(Path(args.out))
    lines = [f"{'annotator':<12}{'mode':<8}{'consistency':>12}{'s/image':>10}"]
    for annotator, modes in doc["annotators"].items():
        for mode, cell in modes.items():
            cons = "n/a" if cell["consistency"] is None else f"{cell['consistency']:.4f}"
            lines.append(
                f"{annotator:<12}{mode:<8}{cons:>12}{cell['mean_time_s']:>10.2f}"
            )
    for mode, cell in doc["modes"].items():
        if cell.get("speed_up_vs_none") is not None:
            lines.append(f"speed-up {mode} vs none: {cell['speed_up_vs_none']:.3f}")
    return CommandResult(0, "\n".join(lines), outputs)


def _cmd_serve(args) -> CommandResult:
    from .service import serve

    serve(args.root, port=args.port, host=args.host)
    return CommandResult(0, "server stopped")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dc3")
    sub = parser.add_subparsers(dest="command", required=True)

    p_data = sub.add_parser("dataset", help="dataset utilities")
    data_sub = p_data.add_subparsers(dest="dataset_command", required=True)

    p_synth = data_sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--k", type=int, default=2)
    p_synth.add_argument("--n", type=int, default=100)
    p_synth.add_argument("--fuzzy-fraction", type=float, default=0.2)
    p_synth.add_argument("--ambiguity-low", type=float, default=0.2)
    p_synth.add_argument("--ambiguity-high", type=float, default=0.8)
    p_synth.add_argument("--image-size", type=int, default=32)
    p_synth.add_argument("--annotators", type=int, default=3)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=_cmd_dataset_synth)

    p_val = data_sub.add_parser("validate", help="validate a manifest file")
    p_val.add_argument("manifest")
    p_val.set_defaults(func=_cmd_dataset_validate)

    p_train = sub.add_parser("train", help="train one run from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--manifest")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--out")
    p_train.set_defaults(func=_cmd_train)

    p_suite = sub.add_parser("suite", help="train several seeds and pick the best")
    p_suite.add_argument("--config", required=True)
    p_suite.add_argument("--seeds", type=int, default=3)
    p_suite.add_argument("--manifest")
    p_suite.add_argument("--seed", type=int)
    p_suite.add_argument("--steps", type=int)
    p_suite.add_argument("--out")
    p_suite.set_defaults(func=_cmd_suite)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--split", default="validation")
    p_eval.add_argument("--vanilla", action="store_true")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_emb = sub.add_parser("export-embeddings", help="export embeddings as CSV")
    p_emb.add_argument("--checkpoint", required=True)
    p_emb.add_argument("--manifest", required=True)
    p_emb.add_argument("--out", required=True)
    p_emb.set_defaults(func=_cmd_export_embeddings)

    p_prop = sub.add_parser("propose", help="generate annotation proposals")
    p_prop.add_argument("--checkpoint", required=True)
    p_prop.add_argument("--manifest", required=True)
    p_prop.add_argument("--mode", choices=["dc3", "ssl"], default="dc3")
    p_prop.add_argument("--out", required=True)
    p_prop.set_defaults(func=_cmd_propose)

    p_sim = sub.add_parser("simulate", help="simulate annotation sessions")
    p_sim.add_argument("--manifest", required=True)
    p_sim.add_argument("--proposals", help="proposal file; omit for mode=none")
    p_sim.add_argument("--accept-prob", type=float, default=0.9)
    p_sim.add_argument("--base-time", type=float, default=12.0)
    p_sim.add_argument("--proposal-time", type=float, default=5.0)
    p_sim.add_argument("--noise", type=float, default=0.0)
    p_sim.add_argument("--repetitions", type=int, default=3)
    p_sim.add_argument("--annotator", default="sim")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=_cmd_simulate)

    p_rep = sub.add_parser("report", help="consistency/speed-up report")
    p_rep.add_argument("--sessions", required=True)
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=_cmd_report)

    p_serve = sub.add_parser("serve", help="run the annotation HTTP service")
    p_serve.add_argument("--root", required=True)
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.set_defaults(func=_cmd_serve)

    return parser


def dispatch(argv: list[str] | None = None) -> CommandResult:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, ds.ManifestError) as exc:
        return CommandResult(2, f"error: {exc}")
    except Exception as exc:  # runtime failure
        return CommandResult(1, f"failed: {exc}")


def main(argv: list[str] | None = None) -> int:
    result = dispatch(argv)
    stream = sys.stdout if result.exit_code == 0 else sys.stderr
    print(result.summary, file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
