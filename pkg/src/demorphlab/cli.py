"""Command-line entry point for the full pipeline.

Subcommands: morph, split, train, demorph, eval, plot. Every flag has a
config-file counterpart (see config.py); flags win. Failures print one
machine-parseable line `error:<category>: <message>` on stderr and exit
nonzero. All side effects stay inside the command's --out directory (plus
DEMORPH_LAB_CACHE for intermediates, only when that variable is set).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, evaluation, morphing, training
from .errors import DemorphLabError, ManifestError
from .image_io import load_image, save_image

log = logging.getLogger("demorphlab")


def _common_flags(parser):
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="demorphlab",
        description="morph synthesis, adversarial de-morphing, and biometric evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("morph", help="synthesize morphs from a pair manifest")
    _common_flags(p)
    p.add_argument("--manifest", required=True, help="pair manifest CSV")

    p = sub.add_parser("split", help="subject-disjoint train/test split")
    _common_flags(p)
    p.add_argument("--manifest", required=True, help="sample manifest CSV")
    p.add_argument("--train-fraction", type=float, dest="train_fraction")

    p = sub.add_parser("train", help="train the de-morphing networks")
    _common_flags(p)
    p.add_argument("--manifest", help="training sample manifest CSV")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--image-size", type=int, dest="image_size")

    p = sub.add_parser("demorph", help="decompose one image with a trained model")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input image file")

    p = sub.add_parser("eval", help="score de-morphing outputs and report metrics")
    _common_flags(p)
    p.add_argument("--checkpoint", help="trained model (with --manifest)")
    p.add_argument("--manifest", help="test sample manifest CSV")
    p.add_argument("--input", help="precomputed score table CSV (skips inference)")
    p.add_argument("--fmr", type=float)

    p = sub.add_parser("plot", help="emit score-distribution histograms")
    _common_flags(p)
    p.add_argument("--input", required=True, help="score table CSV")

    return parser


def _resolve_seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**31))
        log.info("no seed given; using generated seed %d", seed)
    return int(seed)


def _require_out(args) -> Path:
    if not args.out:
        raise ManifestError("--out directory is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_morph(args, cfg) -> int:
    out = _require_out(args)
    specs = morphing.read_pair_manifest(args.manifest)
    manifest = morphing.synthesize_morphs(specs, out)
    print(f"wrote {len(specs)} morph(s); manifest: {manifest}")
    return 0


def cmd_split(args, cfg) -> int:
    out = _require_out(args)
    fraction = args.train_fraction if args.train_fraction is not None else cfg["split"]["train_fraction"]
    spec = data.SplitSpec(train_fraction=float(fraction), seed=_resolve_seed(args, cfg))
    records = data.load_manifest(args.manifest)
    train, test = data.subject_disjoint_split(records, spec)
    data.write_manifest(train, out / "train.csv")
    data.write_manifest(test, out / "test.csv")
    summary = data.split_summary(train, test)
    (out / "split_summary.txt").write_text(summary)
    print(summary, end="")
    return 0


def cmd_train(args, cfg) -> int:
    cfg = config_mod.apply_overrides(
        cfg,
        manifest=args.manifest,
        out=args.out,
        epochs=args.epochs,
        batch_size=args.batch_size,
        image_size=args.image_size,
        seed=args.seed,
    )
    if cfg.get("seed") is None:
        cfg["seed"] = _resolve_seed(args, cfg)
    train_config = config_mod.build_train_config(cfg)
    state = None
    if args.checkpoint:
        state = training.load_checkpoint(args.checkpoint)
        log.info("resuming from %s at epoch %d", args.checkpoint, state.epoch)
    state = training.train(train_config, state=state)
    print(
        f"trained to epoch {state.epoch}; checkpoints in "
        f"{Path(state.config.out_dir) / 'checkpoints'}"
    )
    return 0


def cmd_demorph(args, cfg) -> int:
    out = _require_out(args)
    state = training.load_checkpoint(args.checkpoint)
    size = (state.config.image_size,) * 2
    img = data.preprocess(load_image(args.input), size)
    result = training.demorph(state, img, sample_id=Path(args.input).stem)
    stem = Path(args.input).stem
    save_image(result.output_1, out / f"{stem}_out1.png")
    save_image(result.output_2, out / f"{stem}_out2.png")
    distances = (
        f"d_o1_input: {result.d_o1_input:.8g}\n"
        f"d_o2_input: {result.d_o2_input:.8g}\n"
        f"inter_output_distance: {result.inter_output_distance:.8g}\n"
    )
    (out / f"{stem}_distances.txt").write_text(distances)
    print(distances, end="")
    return 0


def cmd_eval(args, cfg) -> int:
    out = _require_out(args)
    fmr = args.fmr if args.fmr is not None else cfg["eval"]["fmr"]
    if args.input:
        rows = evaluation.read_score_table(args.input)
    else:
        if not (args.checkpoint and args.manifest):
            raise ManifestError("eval needs --input or --checkpoint with --manifest")
        state = training.load_checkpoint(args.checkpoint)
        records = data.load_manifest(args.manifest)
        size = (state.config.image_size,) * 2
        results = [training.demorph_record(state, r) for r in records]
        if config_mod.cache_enabled():
            stash = config_mod.cache_dir() / "eval_outputs"
            for res in results:
                save_image(res.output_1, stash / f"{res.sample_id}_out1.png")
                save_image(res.output_2, stash / f"{res.sample_id}_out2.png")
            log.info("intermediate outputs cached in %s", stash)
        rows = evaluation.score_demorph_outputs(
            results,
            state.comparator,
            preprocess_fn=lambda img: data.preprocess(img, size),
        )
        evaluation.write_score_table(rows, out / "score_table.csv")
    report = evaluation.metrics_report(rows, fmr=float(fmr))
    (out / "report.txt").write_text(report)
    print(report, end="")
    return 0


def cmd_plot(args, cfg) -> int:
    out = _require_out(args)
    rows = evaluation.read_score_table(args.input)
    created = evaluation.emit_histograms(rows, out)
    print("\n".join(str(p) for p in created))
    return 0


COMMANDS = {
    "morph": cmd_morph,
    "split": cmd_split,
    "train": cmd_train,
    "demorph": cmd_demorph,
    "eval": cmd_eval,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except DemorphLabError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error:io_error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"error:internal_error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
