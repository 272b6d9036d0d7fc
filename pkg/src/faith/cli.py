"""Command-line entry point: ``faith <command> [flags]``.

Every command accepts ``--seed``, ``--threads`` and ``--config FILE``. The
config file is a JSON object whose keys are flag names (dashes or
underscores); flags given on the command line win over the file.

Exit codes: 0 success, 1 runtime failure (one ``error: ...`` line on
stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .checkpoint import load_model
from .dataset import (
    MANIFEST_NAME,
    SynthConfig,
    balanced_partition,
    load_image,
    load_manifest,
    load_samples,
    quality_filter,
    read_splits,
    split_records,
    synth_generate,
    write_manifest,
    write_splits,
)
from .frequency import FrequencyMethod, Method
from .metrics import MetricsReport, evaluate
from .model import FaithModel, ModelConfig
from .robustness import TABLE3, Perturbation, robustness_sweep
from .trainer import TrainConfig, train


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("--config", default=None, help="JSON file supplying any of these flags")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")


def _data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="dataset directory holding the manifest and images")
    p.add_argument("--manifest", help=f"manifest path (default: DATA/{MANIFEST_NAME})")
    p.add_argument("--splits", help="split assignment JSON written by 'partition'")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="faith", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    subs = {}

    p = sub.add_parser("generate-data", help="render a synthetic sequential-edit dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--out")
    p.add_argument("--length-weights", type=float, nargs=5, default=[1, 1, 1, 1, 1],
                   metavar="W", help="relative weight of lengths 0..4")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--strength", type=float, default=1.0, help="edit strength multiplier")
    p.add_argument("--min-ssim", type=float, default=None,
                   help="drop samples whose SSIM to the source is below this")
    subs["generate-data"] = p

    p = sub.add_parser("partition", help="balanced 8:1:1 train/val/test split")
    _data_flags(p)
    p.add_argument("--per-length", type=int)
    p.add_argument("--ratios", type=int, nargs=3, default=[8, 1, 1], metavar="R")
    p.add_argument("--out", help="output split JSON")
    subs["partition"] = p

    p = sub.add_parser("train", help="train FAITH with SAM")
    _data_flags(p)
    p.add_argument("--out", help="run directory for log and checkpoints")
    p.add_argument("--resume", help="continue from this last.ckpt")
    defaults = TrainConfig()
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--warmup-epochs", type=int, default=defaults.warmup_epochs)
    p.add_argument("--decay-interval", type=int, default=defaults.decay_interval)
    p.add_argument("--decay-factor", type=float, default=defaults.decay_factor)
    p.add_argument("--lr-transformer", type=float, default=defaults.lr_transformer)
    p.add_argument("--lr-backbone", type=float, default=defaults.lr_backbone)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--rho", type=float, default=defaults.rho)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=defaults.optimizer)
    m = ModelConfig()
    p.add_argument("--frequency", choices=[k.value for k in Method], default=m.frequency.kind.value)
    p.add_argument("--image-size", type=int, default=m.image_size)
    p.add_argument("--backbone-widths", type=int, nargs="+", default=list(m.backbone_widths))
    p.add_argument("--d-model", type=int, default=m.d_model)
    p.add_argument("--heads", type=int, default=m.heads)
    p.add_argument("--encoder-layers", type=int, default=m.encoder_layers)
    p.add_argument("--decoder-layers", type=int, default=m.decoder_layers)
    p.add_argument("--freq-channels", type=int, default=m.freq_channels)
    for flag, value in (("use-frequency", m.use_frequency), ("pre-norm", m.pre_norm),
                        ("learned-positions", m.learned_positions),
                        ("cross-residual", m.cross_residual)):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=value)
    subs["train"] = p

    for name, helptext in (("eval", "evaluate a checkpoint"),
                           ("perturb-eval", "evaluate under JPEG/noise perturbations")):
        p = sub.add_parser(name, help=helptext)
        _data_flags(p)
        p.add_argument("--checkpoint")
        p.add_argument("--split", default="test", help="train, val, test or all")
        p.add_argument("--out", help="directory for report files")
        p.add_argument("--batch-size", type=int, default=64)
        subs[name] = p
    subs["perturb-eval"].add_argument(
        "--perturb", action="append", default=None, metavar="SPEC",
        help="clean, jpeg:RATIO or noise:PERCENT; repeatable (default: clean + the six standard settings)",
    )

    p = sub.add_parser("validate-manifest", help="check a manifest against the record grammar")
    p.add_argument("--manifest")
    subs["validate-manifest"] = p

    for p in subs.values():
        _common(p)
    return parser, subs


REQUIRED = {
    "generate-data": ("count", "out"),
    "partition": ("per_length", "out"),
    "train": ("data", "splits", "out"),
    "eval": ("data", "checkpoint", "out"),
    "perturb-eval": ("data", "checkpoint", "out"),
    "validate-manifest": ("manifest",),
}


def _apply_config(sub: argparse.ArgumentParser, path: str) -> None:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path}: expected a JSON object")
    known = {a.dest for a in sub._actions}
    values = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("config", "help"):
            raise UsageError(f"config file {path}: unknown option {key!r}")
        values[dest] = value
    sub.set_defaults(**values)


def parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    sub = subs[args.command]
    if args.config:
        try:
            _apply_config(sub, args.config)
        except UsageError as e:
            sub.error(str(e))
        args = parser.parse_args(argv)
    missing = [f"--{d.replace('_', '-')}" for d in REQUIRED[args.command] if getattr(args, d) is None]
    if missing:
        sub.error(f"missing required option(s): {', '.join(missing)}")
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        sub.error("--threads must be >= 1")
    return args


# ---------------------------------------------------------------- commands

def _manifest_path(args) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    return Path(args.data) / MANIFEST_NAME


def _load_split(args, split: str):
    records = load_manifest(_manifest_path(args))
    if split != "all":
        if not args.splits:
            raise ValueError(f"--splits is required to select the {split!r} split")
        records = split_records(records, read_splits(args.splits), split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    return load_samples(records, args.data)


def cmd_generate(args) -> str:
    cfg = SynthConfig(size=args.size, strength=args.strength)
    records = synth_generate(args.count, args.length_weights, args.seed, args.out, cfg)
    if args.min_ssim is not None:
        root = Path(args.out)
        images = {r.id: (load_image(root / r.source_image), load_image(root / r.image)) for r in records}
        records = quality_filter(records, images, args.min_ssim)
        write_manifest(records, root / MANIFEST_NAME)
    return f"wrote {len(records)} records to {Path(args.out) / MANIFEST_NAME}"


def cmd_partition(args) -> str:
    if not args.data and not args.manifest:
        raise ValueError("give --data or --manifest")
    records = load_manifest(_manifest_path(args))
    assignment = balanced_partition(records, args.per_length, args.ratios, args.seed)
    write_splits(assignment, args.out)
    counts = {s: sum(v == s for v in assignment.values()) for s in ("train", "val", "test")}
    return f"wrote {args.out}: " + " ".join(f"{k}={v}" for k, v in counts.items())


def cmd_train(args) -> str:
    tcfg = TrainConfig(
        epochs=args.epochs, warmup_epochs=args.warmup_epochs, decay_interval=args.decay_interval,
        decay_factor=args.decay_factor, lr_transformer=args.lr_transformer,
        lr_backbone=args.lr_backbone, batch_size=args.batch_size, rho=args.rho,
        optimizer=args.optimizer, seed=args.seed,
    )
    mcfg = ModelConfig(
        image_size=args.image_size, backbone_widths=tuple(args.backbone_widths),
        d_model=args.d_model, heads=args.heads, encoder_layers=args.encoder_layers,
        decoder_layers=args.decoder_layers, freq_channels=args.freq_channels,
        frequency=FrequencyMethod(Method(args.frequency)), use_frequency=args.use_frequency,
        pre_norm=args.pre_norm, learned_positions=args.learned_positions,
        cross_residual=args.cross_residual, seed=args.seed,
    )
    train_samples = _load_split(args, "train")
    assignment = read_splits(args.splits)
    val_records = split_records(load_manifest(_manifest_path(args)), assignment, "val")
    val_samples = load_samples(val_records, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"train": asdict(tcfg), "model": mcfg.to_dict()}
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    result = train(FaithModel(mcfg), train_samples, val_samples, tcfg, out_dir=out,
                   resume_from=args.resume, threads=args.threads)
    last = result.history[-1]
    best = f"best epoch {result.best_epoch}"
    if "val_full" in last:
        best += f" val full {result.best_val_full:.4f}"
    return f"trained {len(result.history)} epochs; final loss {last['train_loss']:.5f}; {best}; outputs in {out}"


def write_report(report: MetricsReport, out_dir, split: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / f"report_{split}_{report.label}"
    stem.with_suffix(".txt").write_text(report.to_text() + "\n", encoding="utf-8")
    stem.with_suffix(".json").write_text(report.to_json() + "\n", encoding="utf-8")
    return stem.with_suffix(".txt")


def cmd_eval(args) -> str:
    model = load_model(args.checkpoint)[0]
    samples = [(s.image, s.sequence) for s in _load_split(args, args.split)]
    rep = evaluate(model, samples, batch_size=args.batch_size, threads=args.threads)
    path = write_report(rep, args.out, args.split)
    return f"{path}: avg full {rep.average['full']:.4f}"


def cmd_perturb_eval(args) -> str:
    if args.perturb:
        perts = [Perturbation.parse(s, seed=args.seed) for s in args.perturb]
    else:
        perts = [Perturbation.parse("clean")] + [Perturbation(p.kind, p.level, args.seed) for p in TABLE3]
    model = load_model(args.checkpoint)[0]
    samples = [(s.image, s.sequence) for s in _load_split(args, args.split)]
    reports = robustness_sweep(model, samples, perts, batch_size=args.batch_size, threads=args.threads)
    lines = []
    for rep in reports:
        write_report(rep, args.out, args.split)
        lines.append(f"{rep.label}: avg full {rep.average['full']:.4f}")
    return "\n".join(lines)


def cmd_validate(args) -> str:
    records = load_manifest(args.manifest)
    return f"{args.manifest}: {len(records)} valid records"


COMMANDS = {
    "generate-data": cmd_generate,
    "partition": cmd_partition,
    "train": cmd_train,
    "eval": cmd_eval,
    "perturb-eval": cmd_perturb_eval,
    "validate-manifest": cmd_validate,
}


def run(argv=None) -> int:
    try:
        args = parse(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except Exception as e:  # surfaced as one machine-parsable line
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"error: {args.command}: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    print(summary)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
