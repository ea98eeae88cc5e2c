"""Command-line entry point tying the pipeline together.

Layout rule: human-readable tables go to stdout, machine-readable
artifacts go to files, and the two never mix. Every subcommand is
deterministic given an explicit --seed. Config files are JSON mirroring
the dataclasses one-to-one; flags override file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset as ds
from . import feedback as fb
from . import synth as syn
from . import training as tr
from .errors import SireniaError
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainRecipe


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise SystemExit(f"error: {path}: not valid JSON ({e})")
    if not isinstance(doc, dict):
        raise SystemExit(f"error: {path}: expected a JSON object")
    return doc


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _build_config(cls, file_path, overrides: dict):
    """flag > file > dataclass default."""
    doc = _load_json(file_path) if file_path else {}
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**doc)
    except (TypeError, ValueError) as e:
        raise SystemExit(f"error: invalid {cls.__name__}: {e}")


def _model_config(args) -> ModelConfig:
    overrides = {
        "embed_dim": getattr(args, "embed_dim", None),
        "n_layers": getattr(args, "n_layers", None),
        "n_heads": getattr(args, "n_heads", None),
    }
    cfg = _build_config(ModelConfig, getattr(args, "model_config", None), overrides)
    if cfg.input_shape != (64, 128):
        raise SystemExit("error: the feature pipeline produces (64, 128) inputs only")
    return cfg


def _recipe(args, seed=None) -> TrainRecipe:
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "base_lr": args.lr,
        "weight_decay": args.weight_decay,
        "snr_db": args.snr_db,
        "seed": seed if seed is not None else args.seed,
        "deterministic": True if args.deterministic else None,
    }
    return _build_config(TrainRecipe, getattr(args, "recipe", None), overrides)


def _fmt_metrics(m: tr.Metrics) -> str:
    return (
        f"P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f} "
        f"(tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}) @ threshold {m.threshold:g}"
    )


def cmd_synth(args) -> int:
    if args.sessions < 1:
        raise SystemExit(f"error: --sessions must be >= 1, got {args.sessions}")
    overrides = {"withhold_fraction": args.withhold}
    cfg = _build_config(syn.SynthConfig, args.config, overrides)
    written = syn.write_registry(args.out, cfg, n_sessions=args.sessions, seed=args.seed)
    n_visible = n_hidden = 0
    registry = ds.SessionRegistry(args.out)
    for sid in written:
        n_visible += len(registry.load(sid).annotations)
        n_hidden += len(syn.load_hidden_annotations(args.out, sid))
    print(f"sessions          {len(written)}")
    print(f"session length    {cfg.session_length_s:g} s")
    print(f"visible calls     {n_visible}")
    print(f"withheld calls    {n_hidden}")
    print(f"registry          {args.out}")
    return 0


def cmd_build(args) -> int:
    registry = ds.SessionRegistry(args.registry)
    if not registry.session_ids():
        raise SystemExit(f"error: no sessions found under {args.registry}")
    manifest = ds.build_manifest(registry, rule=args.rule)
    manifest = ds.split_train_test(
        manifest, train_fraction=args.train_frac, seed=args.seed, registry=registry
    )
    ds.save_manifest(args.out, manifest)
    for split in ("train", "test"):
        n_pos, n_neg = manifest.counts(split)
        total = n_pos + n_neg
        rate = n_pos / total if total else 0.0
        print(f"{split:<6} windows {total:>7}  positive {n_pos:>6}  rate {rate:.4f}")
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"manifest          {args.out}")
    return 0


def cmd_train(args) -> int:
    manifest = ds.load_manifest(args.manifest)
    config = _model_config(args)
    recipe = _recipe(args)
    ckpt, history = tr.train(manifest, config, recipe)
    save_checkpoint(args.out, ckpt)
    if args.history:
        tr.save_history(args.history, history)
    for rec in history:
        line = f"epoch {rec.epoch:>3}  lr {rec.lr:.3e}  loss {rec.train_loss:.5f}"
        if rec.test_metrics is not None:
            m = rec.test_metrics
            line += f"  test P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}"
        print(line)
    print(f"checkpoint        {args.out}")
    return 0


def cmd_eval(args) -> int:
    manifest = ds.load_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    metrics = tr.evaluate(ckpt, manifest, split=args.split, threshold=args.threshold)
    print(f"{args.split}: {_fmt_metrics(metrics)}")
    if args.pr_out:
        samples = manifest.split_samples(args.split)
        scores = tr.score_samples(ckpt, manifest, samples)
        labels = [1.0 if s.label == "positive" else 0.0 for s in samples]
        curve = tr.pr_curve(scores, labels)
        tr.save_pr_csv(args.pr_out, curve)
        print(f"average precision {curve.average_precision:.4f}")
        print(f"pr curve          {args.pr_out}")
    return 0


def cmd_mine(args) -> int:
    manifest = ds.load_manifest(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    store = fb.ReviewStore(args.store)
    candidates = fb.mine_candidates(
        ckpt, manifest, threshold=args.threshold, limit=args.limit, store=store
    )
    store.save_candidates(candidates)
    print(f"candidates        {len(candidates)}")
    if candidates:
        print(f"top score         {candidates[0].score:.4f}")
    print(f"store             {args.store}")
    return 0


def cmd_serve(args) -> int:
    from .server import ServerConfig, run

    config = ServerConfig(
        manifest_path=args.manifest,
        checkpoint_path=args.checkpoint,
        registry_root=args.registry,
        store_path=args.store,
        host=args.host,
        port=args.port,
        static_dir=args.static,
    )
    run(config)
    return 0


def cmd_apply(args) -> int:
    manifest = ds.load_manifest(args.manifest)
    store = fb.ReviewStore(args.store)
    merged = fb.apply_decisions(manifest, store)
    ds.save_manifest(args.out, merged)

    def row(name, m):
        n_pos, n_neg = m.counts()
        t_pos, _ = m.counts("train")
        rate = n_pos / (n_pos + n_neg) if n_pos + n_neg else 0.0
        print(f"{name:<10}  {n_pos:>6}  {n_neg:>6}  {t_pos:>9}  {rate:>8.4f}")

    print(f"{'dataset':<10}  {'n_pos':>6}  {'n_neg':>6}  {'train_pos':>9}  {'rate':>8}")
    row("before", manifest)
    row("after", merged)
    print(f"manifest          {args.out}")
    return 0


def cmd_experiment_feedback(args) -> int:
    overrides = {"withhold_fraction": args.withhold}
    cfg = _build_config(syn.SynthConfig, args.config, overrides)
    if cfg.withhold_fraction <= 0:
        print("note: withhold_fraction is 0; nothing can be recovered", file=sys.stderr)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    recipe = _recipe(args, seed=seeds[0])
    config = _model_config(args)
    retrain = replace(recipe, epochs=args.retrain_epochs) if args.retrain_epochs else None
    report = fb.feedback_experiment(
        cfg, recipe, config=config, n_sessions=args.sessions, seeds=seeds,
        mine_threshold=args.threshold, retrain_recipe=retrain,
    )
    for run in report["runs"]:
        print(
            f"seed {run['seed']:>3}  F1 {run['f1_before']:.3f} -> {run['f1_after']:.3f}  "
            f"recovered {run['n_confirmed']}/{run['n_hidden_windows']} "
            f"({run['recovered_fraction']:.2%})"
        )
    print(
        f"mean      F1 {report['f1_before_mean']:.3f} -> {report['f1_after_mean']:.3f}  "
        f"recovered {report['recovered_fraction_mean']:.2%}"
    )
    if args.out:
        _atomic_write_text(args.out, json.dumps(report, indent=2) + "\n")
        print(f"report            {args.out}")
    return 0


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--recipe", help="JSON file mirroring TrainRecipe")
    p.add_argument("--model-config", help="JSON file mirroring ModelConfig")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--snr-db", type=float)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--n-layers", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--deterministic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sirenia",
        description="Detect tonal calls in underwater recordings and run the "
        "review/relabel loop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic session registry")
    p.add_argument("--config", help="JSON file mirroring SynthConfig")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sessions", type=int, default=20)
    p.add_argument("--withhold", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="window + label a registry into a manifest")
    p.add_argument("--registry", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-frac", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", choices=sorted(ds.LABEL_RULES), default="call")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train a detector on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="write per-epoch records here (JSON lines)")
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and print metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--pr-out", help="write the PR sweep as CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mine", help="queue high-scoring negatives for review")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("serve", help="start the review server")
    p.add_argument("--manifest", default=os.environ.get("SIRENIA_MANIFEST"))
    p.add_argument("--checkpoint", default=os.environ.get("SIRENIA_CHECKPOINT"))
    p.add_argument("--registry", default=os.environ.get("SIRENIA_REGISTRY"))
    p.add_argument("--store", default=os.environ.get("SIRENIA_STORE"))
    p.add_argument("--host", default=os.environ.get("SIRENIA_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(os.environ.get("SIRENIA_PORT", "8000")))
    p.add_argument("--static", help="serve a built UI from this directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("apply", help="fold review decisions into a new manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("experiment", help="reproducible end-to-end studies")
    exp_sub = p.add_subparsers(dest="experiment", required=True)
    pf = exp_sub.add_parser("feedback", help="mine/confirm/retrain cycle on synthetic data")
    pf.add_argument("--config", help="JSON file mirroring SynthConfig")
    pf.add_argument("--sessions", type=int, default=20)
    pf.add_argument("--withhold", type=float, default=0.5)
    pf.add_argument("--seeds", default="0", help="comma-separated, e.g. 0,1,2")
    pf.add_argument("--threshold", type=float, default=0.3, help="mining threshold")
    pf.add_argument(
        "--retrain-epochs", type=int,
        help="epoch budget for the post-review model (default: same as --epochs)",
    )
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--out", help="write the JSON report here")
    _add_train_flags(pf)
    pf.set_defaults(func=cmd_experiment_feedback)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        for name in ("manifest", "checkpoint", "registry", "store"):
            if getattr(args, name) is None:
                raise SystemExit(
                    f"error: --{name} (or SIRENIA_{name.upper()}) is required"
                )
    try:
        return args.func(args)
    except SireniaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
