"""Command-line interface.

Subcommands: train, eval, sweep, ablate, attnmap, augment-preview, split,
synth. Output directories default under $HFREID_OUT (or ./runs). Exit codes:
0 success, 1 input error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datapipe, harness, plots, spectral, synthetic
from .config import TrainConfig, apply_overrides, load_config, write_config
from .errors import (
    InputError,
    NumericError,
    ParameterError,
    ProtocolError,
    StructuralError,
)


def _default_out(sub: str) -> str:
    return os.path.join(os.environ.get("HFREID_OUT", "runs"), sub)


def _load_cfg(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _add_cfg_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")


def _add_data_args(p: argparse.ArgumentParser):
    p.add_argument("--manifest", required=True, help="dataset manifest (TSV)")
    p.add_argument("--split", required=True, help="split sidecar file")


def cmd_synth(args) -> int:
    manifest = synthetic.generate_dataset(
        args.out, args.ids, args.imgs_per_id, size=args.size, seed=args.seed,
        background=args.background,
    )
    print(f"wrote {args.ids * args.imgs_per_id} images; manifest: {manifest}")
    return 0


def cmd_split(args) -> int:
    manifest = datapipe.load_manifest(args.manifest)
    split = datapipe.split_identities(manifest, args.seed, args.train_fraction)
    datapipe.write_split(split, args.out)
    print(f"{len(split.train_ids)} train / {len(split.test_ids)} test identities -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    manifest = datapipe.load_manifest(args.manifest)
    split = datapipe.load_split(args.split)
    result = harness.train(cfg, manifest, split, args.out)
    final = result.record.final_eval
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final {cfg.eval_on} mAP={final['map']:.4f} rank1={final['rank1']:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg, _, model, _ = harness.load_run_checkpoint(args.checkpoint)
    if args.distance:
        cfg.distance = args.distance
    manifest = datapipe.load_manifest(args.manifest)
    split = datapipe.load_split(args.split)
    ids = split.test_ids if args.subset == "test" else split.train_ids
    records = manifest.subset(ids).records
    gallery = harness.extract_features(model, records, cfg)
    from .evaluator import distance_matrix, evaluate

    report = evaluate(gallery, metric=cfg.distance)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    plots.cmc_points(os.path.splitext(args.out)[0] + "_cmc.png", report.to_dict())
    if args.dump_distances:
        dist = distance_matrix(gallery.features, cfg.distance)
        np.savetxt(args.dump_distances, dist, delimiter="\t")
    print(
        f"mAP={report.map:.4f} rank1={report.rank1:.4f} mINP={report.minp:.4f} "
        f"({report.num_queries} queries, {report.num_skipped} skipped) -> {args.out}"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    manifest = datapipe.load_manifest(args.manifest)
    split = datapipe.load_split(args.split)
    values = [float(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    write_config(cfg, os.path.join(args.out, "config.txt"))
    rows = harness.sweep(cfg, args.param, values, seeds, manifest, split, args.out)
    best = max(rows, key=lambda r: r["map"])
    print(f"swept {args.param} over {values}; best mAP={best['map']:.4f} "
          f"at {args.param}={best['value']:g} (seed {best['seed']})")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    manifest = datapipe.load_manifest(args.manifest)
    split = datapipe.load_split(args.split)
    stages = args.stages.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    write_config(cfg, os.path.join(args.out, "config.txt"))
    rows = harness.ablate(cfg, stages, seeds, manifest, split, args.out)
    for stage in stages:
        maps = [r["map"] for r in rows if r["stage"] == stage]
        print(f"{stage}: median mAP {float(np.median(maps)):.4f} over {len(maps)} seed(s)")
    return 0


def cmd_attnmap(args) -> int:
    written = harness.attnmap(args.checkpoint, args.images, args.out, mu=args.mu)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def cmd_augment_preview(args) -> int:
    alpha = None if args.alpha == "random" else float(args.alpha)
    if alpha is not None and not 0.0 <= alpha <= 0.5:
        raise ParameterError(f"alpha must be in [0, 0.5] or 'random', got {args.alpha}")
    os.makedirs(args.out, exist_ok=True)
    img = datapipe.load_image(args.image, (args.size, args.size))
    gray = datapipe.to_grayscale(img)
    rng = np.random.default_rng(args.seed)
    if alpha is None:
        alpha = float(rng.uniform(0.0, 0.5))
    spec = spectral.forward_transform(gray)
    filt = spectral.gaussian_high_pass(spec.height, spec.width, args.cutoff)
    high = spectral.apply_high_pass(spec, filt)
    mask = spectral.sample_mask(alpha, spec.height, spec.width, rng)
    mixed = spectral.mix_spectra(high, spec, mask)
    final = spectral.rescale_unit(spectral.inverse_transform(mixed))
    stages = {
        "grayscale.png": gray,
        "spectrum.png": spectral.log_magnitude(spec),
        "filtered_spectrum.png": spectral.log_magnitude(high),
        "mixed_spectrum.png": spectral.log_magnitude(mixed),
        "augmented.png": final,
    }
    for name, grid in stages.items():
        if name.endswith("spectrum.png"):
            plots.save_spectrum(os.path.join(args.out, name), grid)
        else:
            plots.save_grayscale(os.path.join(args.out, name), grid)
    with open(os.path.join(args.out, "params.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"alpha": alpha, "cutoff": args.cutoff, "seed": args.seed,
             "mask_side": mask.side, "mask_row": mask.row, "mask_col": mask.col},
            fh, sort_keys=True,
        )
    print(f"alpha={alpha:.4f}, mask side {mask.side}px -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hfreid",
        description="dual-stream high-frequency re-identification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic texture dataset")
    p.add_argument("--ids", type=int, required=True)
    p.add_argument("--imgs-per-id", type=int, required=True)
    p.add_argument("--out", default=_default_out("synth"))
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background", choices=("clutter", "plain"), default="clutter")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="identity-disjoint train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    _add_data_args(p)
    _add_cfg_args(p)
    p.add_argument("--out", default=_default_out("train"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--out", default=os.path.join(_default_out("eval"), "report.json"))
    p.add_argument("--subset", choices=("test", "train"), default="test")
    p.add_argument("--distance", choices=("l2norm", "euclidean"), default=None)
    p.add_argument("--dump-distances", default=None, metavar="TSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep mu or lambda over a value grid")
    _add_data_args(p)
    _add_cfg_args(p)
    p.add_argument("--param", choices=sorted(harness.SWEEP_PARAMS), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--out", default=_default_out("sweep"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run the ablation ladder")
    _add_data_args(p)
    _add_cfg_args(p)
    p.add_argument("--stages", default=",".join(harness.ABLATION_STAGES))
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", default=_default_out("ablate"))
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("attnmap", help="render class-attention heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", default=_default_out("attnmap"))
    p.add_argument("--mu", type=float, default=None)
    p.set_defaults(func=cmd_attnmap)

    p = sub.add_parser("augment-preview", help="visualize the spectral-mix stages")
    p.add_argument("--image", required=True)
    p.add_argument("--alpha", default="random", help="mix fraction in [0, 0.5] or 'random'")
    p.add_argument("--cutoff", type=float, default=spectral.DEFAULT_CUTOFF_FRACTION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", default=_default_out("augment-preview"))
    p.set_defaults(func=cmd_augment_preview)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ParameterError, StructuralError, ProtocolError,
            FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
