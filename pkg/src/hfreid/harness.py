"""Training loop, schedules, checkpointing, sweeps, ablations, and heatmaps.

A run directory always receives the resolved config, a per-step loss log
(TSV), the deterministic run record (JSON), rendered figures, and the final
checkpoint. Wall-clock timing goes to a separate file so that identical
(config, seed) runs produce byte-identical records and checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import plots
from .backbone import VisionTransformer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, write_config
from .datapipe import (
    ImageCache,
    Manifest,
    ManifestRecord,
    SplitSpec,
    eval_input,
    iter_epoch,
)
from .errors import InputError, NumericError, ParameterError
from .evaluator import EvalReport, FeatureGallery, evaluate
from .objectives import ClassifierHead, total_loss
from .selection import dual_forward, select_topz, summarize_attention

LOG_COLUMNS = ("step", "id_o", "tri_o", "id_h", "tri_h", "equilibrium", "total", "lr")

SWEEP_PARAMS = {"mu": "mu", "lambda": "lambda_eq"}

# cumulative ablation ladder; later stages add one mechanism each
ABLATION_STAGES = {
    "baseline": dict(use_hf_stream=False, use_fma=False, use_ods=False, lambda_eq=0.0),
    "pure_hf": dict(use_hf_stream=True, use_fma=False, use_ods=False, lambda_eq=0.0),
    "fma": dict(use_hf_stream=True, use_fma=True, use_ods=False, lambda_eq=0.0),
    "ods": dict(use_hf_stream=True, use_fma=True, use_ods=True, lambda_eq=0.0),
    "lf": dict(use_hf_stream=True, use_fma=True, use_ods=True),
}


def cosine_lr(base_lr: float, epoch: int, total_epochs: int, warmup_epochs: int = 0) -> float:
    """base_lr * 0.5 * (1 + cos(pi * epoch / total)) after an optional linear warmup."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    t = epoch - warmup_epochs
    span = max(1, total_epochs - warmup_epochs)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t / span))


@dataclass
class RunRecord:
    """Deterministic payload of one training run."""

    config: dict
    num_classes: int
    epochs: list[dict]
    evals: list[dict]
    final_eval: dict | None
    stopped_epoch: int | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    out_dir: str
    checkpoint_path: str
    record: RunRecord
    model: VisionTransformer
    classifier: ClassifierHead


def build_model(cfg: TrainConfig, num_classes: int) -> tuple[VisionTransformer, ClassifierHead]:
    """Model + shared classifier head; call after seeding torch for determinism."""
    model = VisionTransformer(cfg.patch_config())
    classifier = ClassifierHead(cfg.embed_dim, num_classes, bnneck=cfg.bnneck)
    if not cfg.separate_hf_cls:
        with torch.no_grad():
            model.hf_cls_token.copy_(model.cls_token)
    if cfg.init_checkpoint:
        _, arrays = load_checkpoint(cfg.init_checkpoint)
        state = {
            k[len("model."):]: torch.as_tensor(v)
            for k, v in arrays.items()
            if k.startswith("model.")
        }
        model.load_state_dict(state)
    return model, classifier


def save_run_checkpoint(
    path: str, cfg: TrainConfig, num_classes: int, model: VisionTransformer,
    classifier: ClassifierHead,
):
    arrays = {f"model.{k}": v for k, v in model.state_arrays().items()}
    for k, v in classifier.state_dict().items():
        arrays[f"classifier.{k}"] = v.detach().cpu().numpy().copy()
    save_checkpoint(path, {"train_config": cfg.to_dict(), "num_classes": num_classes}, arrays)


def load_run_checkpoint(path: str) -> tuple[TrainConfig, int, VisionTransformer, ClassifierHead]:
    header, arrays = load_checkpoint(path)
    cfg = TrainConfig.from_dict(header["train_config"])
    num_classes = int(header["num_classes"])
    model = VisionTransformer(cfg.patch_config())
    model.load_state_arrays(
        {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
    )
    classifier = ClassifierHead(cfg.embed_dim, num_classes, bnneck=cfg.bnneck)
    classifier.load_state_dict(
        {
            k[len("classifier."):]: torch.as_tensor(v)
            for k, v in arrays.items()
            if k.startswith("classifier.")
        }
    )
    return cfg, num_classes, model, classifier


def extract_features(
    model: VisionTransformer,
    records: list[ManifestRecord],
    cfg: TrainConfig,
    cache: ImageCache | None = None,
    batch_size: int = 64,
) -> FeatureGallery:
    """Original-stream class features for a record list (evaluation inputs)."""
    cache = cache or ImageCache()
    aug = cfg.augment_config()
    model.eval()
    feats = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            batch = np.stack(
                [eval_input(cache.get(r.path, aug.image_size), aug) for r in chunk]
            )
            out = model(torch.from_numpy(batch))
            feats.append(out.class_feature.numpy())
    return FeatureGallery(
        features=np.concatenate(feats, axis=0),
        labels=[r.identity for r in records],
        ids=[r.path for r in records],
    )


def evaluate_split(
    model: VisionTransformer,
    manifest: Manifest,
    split: SplitSpec,
    cfg: TrainConfig,
    subset: str = "test",
    cache: ImageCache | None = None,
) -> EvalReport:
    ids = split.test_ids if subset == "test" else split.train_ids
    records = manifest.subset(ids).records
    gallery = extract_features(model, records, cfg, cache=cache)
    return evaluate(gallery, metric=cfg.distance)


def _fmt(x: float) -> str:
    return repr(float(x))


def train(cfg: TrainConfig, manifest: Manifest, split: SplitSpec, out_dir: str) -> TrainResult:
    """Run the full training protocol and write every run artifact to out_dir."""
    if len(split.train_ids) < cfg.batch_p:
        raise ParameterError(
            f"split has {len(split.train_ids)} train identities, batch needs {cfg.batch_p}"
        )
    os.makedirs(out_dir, exist_ok=True)
    write_config(cfg, os.path.join(out_dir, "config.txt"))
    started = time.monotonic()

    torch.manual_seed(cfg.seed)
    num_classes = len(split.train_ids)
    model, classifier = build_model(cfg, num_classes)
    params = list(model.parameters()) + list(classifier.parameters())
    opt = torch.optim.SGD(
        params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    cache = ImageCache()
    aug = cfg.augment_config()
    batch_spec = cfg.batch_spec()

    epochs_log: list[dict] = []
    evals_log: list[dict] = []
    stopped_epoch = None
    step_idx = 0
    last_breakdown = None

    log_path = os.path.join(out_dir, "training_log.tsv")
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("\t".join(LOG_COLUMNS) + "\n")
        for epoch in range(cfg.epochs):
            lr = cosine_lr(cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs)
            for group in opt.param_groups:
                group["lr"] = lr
            model.train()
            classifier.train()
            sums = {k: 0.0 for k in LOG_COLUMNS[1:-1]}
            steps_this_epoch = 0
            for orig, hf, labels in iter_epoch(
                manifest, split, batch_spec, aug, cfg.seed, epoch, cache,
                want_hf=cfg.use_hf_stream,
            ):
                opt.zero_grad()
                if cfg.use_hf_stream:
                    feats = dual_forward(
                        model, orig, hf, cfg.mu,
                        use_ods=cfg.use_ods, exclude_cls_self=cfg.exclude_cls_self,
                    )
                    loss, bd = total_loss(
                        feats.class_orig, labels, classifier, cfg.lambda_eq, cfg.margin,
                        c_h=feats.class_hf, f_o=feats.tokens_orig, f_h=feats.tokens_hf,
                        label_smoothing=cfg.label_smoothing,
                    )
                else:
                    out = model(orig)
                    loss, bd = total_loss(
                        out.class_feature, labels, classifier, cfg.lambda_eq, cfg.margin,
                        label_smoothing=cfg.label_smoothing,
                    )
                if not math.isfinite(bd.total):
                    raise NumericError(
                        f"non-finite loss at step {step_idx}; last breakdown: {last_breakdown}"
                    )
                loss.backward()
                opt.step()
                last_breakdown = bd
                row = bd.as_dict()
                log.write(
                    "\t".join(
                        [str(step_idx)]
                        + [_fmt(row[k]) for k in LOG_COLUMNS[1:-1]]
                        + [_fmt(lr)]
                    )
                    + "\n"
                )
                for k in sums:
                    sums[k] += row[k]
                step_idx += 1
                steps_this_epoch += 1
            epochs_log.append(
                {"epoch": epoch, "lr": lr}
                | {k: sums[k] / steps_this_epoch for k in sums}
            )
            is_last = epoch == cfg.epochs - 1
            if cfg.eval_every > 0 and ((epoch + 1) % cfg.eval_every == 0 or is_last):
                classifier.eval()
                report = evaluate_split(model, manifest, split, cfg, cfg.eval_on, cache)
                evals_log.append(
                    {"epoch": epoch, "subset": cfg.eval_on} | _report_summary(report)
                )
                if cfg.early_stop_rank1 is not None and report.rank1 >= cfg.early_stop_rank1:
                    stopped_epoch = epoch
                    break
            if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
                save_run_checkpoint(
                    os.path.join(out_dir, f"checkpoint_epoch{epoch:04d}.hfc"),
                    cfg, num_classes, model, classifier,
                )

    classifier.eval()
    final_report = evaluate_split(model, manifest, split, cfg, cfg.eval_on, cache)
    record = RunRecord(
        config=cfg.to_dict(),
        num_classes=num_classes,
        epochs=epochs_log,
        evals=evals_log,
        final_eval=_report_summary(final_report),
        stopped_epoch=stopped_epoch,
    )
    ckpt_path = os.path.join(out_dir, "checkpoint.hfc")
    save_run_checkpoint(ckpt_path, cfg, num_classes, model, classifier)
    with open(os.path.join(out_dir, "run_record.json"), "w", encoding="utf-8") as fh:
        fh.write(record.to_json())
    with open(os.path.join(out_dir, "timing.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"wall_clock_seconds: {time.monotonic() - started:.3f}\n")
    plots.loss_curves(os.path.join(out_dir, "loss_curves.png"), epochs_log)
    plots.lr_trace(os.path.join(out_dir, "lr_trace.png"), epochs_log)
    return TrainResult(
        out_dir=out_dir, checkpoint_path=ckpt_path, record=record,
        model=model, classifier=classifier,
    )


def _report_summary(report: EvalReport) -> dict:
    return {
        "map": report.map,
        "rank1": report.rank1,
        "rank5": report.rank5,
        "rank10": report.rank10,
        "minp": report.minp,
        "num_queries": report.num_queries,
        "num_skipped": report.num_skipped,
    }


def _write_table(path: str, columns: list[str], rows: list[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(row[c]) for c in columns) + "\n")


def sweep(
    cfg: TrainConfig,
    param: str,
    values: list[float],
    seeds: list[int],
    manifest: Manifest,
    split: SplitSpec,
    out_dir: str,
) -> list[dict]:
    """One train+eval per (value, seed); emits sweep.tsv and the mAP curve."""
    if param not in SWEEP_PARAMS:
        raise ParameterError(f"sweep param must be one of {sorted(SWEEP_PARAMS)}, got {param!r}")
    field = SWEEP_PARAMS[param]
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for value in values:
        for seed in seeds:
            sub_cfg = dataclasses.replace(cfg, **{field: value, "seed": seed})
            sub_dir = os.path.join(out_dir, f"{param}{value:g}_seed{seed}")
            result = train(sub_cfg, manifest, split, sub_dir)
            report = evaluate_split(result.model, manifest, split, sub_cfg, "test")
            rows.append(
                {"param": param, "value": value, "seed": seed} | _report_summary(report)
            )
    columns = ["param", "value", "seed", "map", "rank1", "rank5", "rank10", "minp",
               "num_queries", "num_skipped"]
    _write_table(os.path.join(out_dir, "sweep.tsv"), columns, rows)
    plots.sweep_curve(os.path.join(out_dir, "sweep_map.png"), param, rows)
    return rows


def ablate(
    cfg: TrainConfig,
    stages: list[str],
    seeds: list[int],
    manifest: Manifest,
    split: SplitSpec,
    out_dir: str,
) -> list[dict]:
    """Run the ablation ladder on one split; emits ablation.tsv and the bar chart."""
    unknown = [s for s in stages if s not in ABLATION_STAGES]
    if unknown:
        raise ParameterError(
            f"unknown ablation stages {unknown}; valid: {list(ABLATION_STAGES)}"
        )
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for stage in stages:
        for seed in seeds:
            sub_cfg = dataclasses.replace(cfg, **ABLATION_STAGES[stage], seed=seed)
            sub_dir = os.path.join(out_dir, f"{stage}_seed{seed}")
            result = train(sub_cfg, manifest, split, sub_dir)
            report = evaluate_split(result.model, manifest, split, sub_cfg, "test")
            rows.append({"stage": stage, "seed": seed} | _report_summary(report))
    columns = ["stage", "seed", "map", "rank1", "rank5", "rank10", "minp",
               "num_queries", "num_skipped"]
    _write_table(os.path.join(out_dir, "ablation.tsv"), columns, rows)
    plots.ablation_bars(os.path.join(out_dir, "ablation_map.png"), rows)
    return rows


def attention_heatmap(
    model: VisionTransformer, imgs: torch.Tensor, exclude_cls_self: bool = True
) -> tuple[np.ndarray, torch.Tensor]:
    """Final-layer class-attention heatmaps, upsampled to image size, [0, 1] per image.

    Returns (B x H x W heatmaps, B x n raw patch scores).
    """
    model.eval()
    with torch.no_grad():
        out = model(imgs)
        summary = summarize_attention(out, exclude_cls_self=exclude_cls_self)
    gh, gw = model.cfg.grid_size
    heat = summary.scores.reshape(-1, 1, gh, gw)
    up = F.interpolate(heat, size=model.cfg.image_size, mode="bilinear", align_corners=False)
    up = up.squeeze(1).numpy()
    lo = up.min(axis=(1, 2), keepdims=True)
    hi = up.max(axis=(1, 2), keepdims=True)
    return (up - lo) / np.maximum(hi - lo, 1e-12), summary.scores


def attnmap(
    checkpoint_path: str,
    image_paths: list[str],
    out_dir: str,
    mu: float | None = None,
) -> list[str]:
    """Render attention overlays and selected-patch masks for a list of images."""
    if not os.path.exists(checkpoint_path):
        raise InputError(f"checkpoint not found: {checkpoint_path}")
    cfg, _, model, _ = load_run_checkpoint(checkpoint_path)
    os.makedirs(out_dir, exist_ok=True)
    mu = cfg.mu if mu is None else mu
    aug = cfg.augment_config()
    cache = ImageCache()
    written = []
    for path in image_paths:
        img = cache.get(path, aug.image_size)
        batch = torch.from_numpy(eval_input(img, aug)[None])
        heat, scores = attention_heatmap(model, batch, cfg.exclude_cls_self)
        sel = select_topz(
            summary=_scores_summary(scores), mu=mu
        )
        gh, gw = model.cfg.grid_size
        selected = np.zeros(gh * gw, dtype=bool)
        selected[sel.indices[0].numpy()] = True
        stem = os.path.splitext(os.path.basename(path))[0]
        heat_path = os.path.join(out_dir, f"{stem}_attention.png")
        sel_path = os.path.join(out_dir, f"{stem}_selected.png")
        plots.attention_overlay(heat_path, img, heat[0])
        plots.selection_overlay(sel_path, img, selected.reshape(gh, gw), cfg.patch_size)
        written.extend([heat_path, sel_path])
    return written


def _scores_summary(scores: torch.Tensor):
    from .selection import AttentionSummary

    return AttentionSummary(scores=scores, layer_index=-1)
