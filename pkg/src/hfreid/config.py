"""Run configuration and the flat key-value config file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Values are parsed by the declared field type; ``none`` reads as None.
Every CLI run writes its fully resolved config back into its output
directory, and the same dictionary rides inside checkpoints.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .backbone import PatchConfig
from .datapipe import AugmentConfig, BatchSpec
from .errors import InputError, ParameterError


@dataclass
class TrainConfig:
    # optimization
    lr: float = 0.001
    epochs: int = 150
    momentum: float = 0.9
    weight_decay: float = 1e-4
    warmup_epochs: int = 0
    batch_p: int = 8
    batch_k: int = 4
    margin: float = 0.3
    lambda_eq: float = 0.1
    label_smoothing: float = 0.0
    mu: float = 0.5
    # model (desk-scale defaults; 256/16 with a wider encoder is the full-scale setting)
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    in_channels: int = 3
    separate_hf_cls: bool = True
    exclude_cls_self: bool = True
    bnneck: bool = False
    # spectral augmentation
    cutoff_fraction: float = 0.05
    # stream toggles (ablation knobs)
    use_hf_stream: bool = True
    use_fma: bool = True
    use_ods: bool = True
    # spatial augmentation
    rotation_deg: float = 15.0
    brightness: float = 0.2
    contrast: float = 0.2
    jitter_prob: float = 0.5
    pad_px: int = 10
    # bookkeeping
    seed: int = 0
    eval_every: int = 10
    checkpoint_every: int = 0          # 0 = final checkpoint only
    eval_on: str = "test"              # which split feeds periodic evaluation
    early_stop_rank1: float | None = None
    distance: str = "l2norm"
    init_checkpoint: str | None = None

    def patch_config(self) -> PatchConfig:
        return PatchConfig(
            image_size=(self.image_size, self.image_size),
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            mlp_ratio=self.mlp_ratio,
            in_channels=self.in_channels,
        )

    def batch_spec(self) -> BatchSpec:
        return BatchSpec(num_ids=self.batch_p, images_per_id=self.batch_k)

    def augment_config(self, fma_alpha: float | None = None) -> AugmentConfig:
        return AugmentConfig(
            image_size=(self.image_size, self.image_size),
            rotation_deg=self.rotation_deg,
            brightness=self.brightness,
            contrast=self.contrast,
            jitter_prob=self.jitter_prob,
            pad_px=self.pad_px,
            cutoff_fraction=self.cutoff_fraction,
            fma_enabled=True,
            # pure high-pass when spectral mixing is off
            fma_alpha=0.0 if not self.use_fma else fma_alpha,
            in_channels=self.in_channels,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - fields
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


def _parse_value(name: str, text: str):
    text = text.strip()
    if text.lower() == "none":
        return None
    field_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    ftype = field_types[name]
    if ftype == "bool":
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise InputError(f"config key {name}: expected a boolean, got {text!r}")
    if ftype == "int":
        return int(text)
    if ftype in ("float", "float | None"):
        return float(text)
    return text


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = (base or TrainConfig()).to_dict()
    known = set(values)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"line {lineno}: expected key = value, got {raw!r}")
        key = key.strip()
        if key not in known:
            raise InputError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, value)
    return TrainConfig.from_dict(values)


def load_config(path: str, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def write_config(cfg: TrainConfig, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for f in dataclasses.fields(TrainConfig):
            value = getattr(cfg, f.name)
            fh.write(f"{f.name} = {'none' if value is None else value}\n")


def apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    """Apply ``key=value`` strings on top of a config (CLI --set)."""
    values = cfg.to_dict()
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in values:
            raise ParameterError(f"bad override {item!r}; expected known_key=value")
        values[key] = _parse_value(key, value)
    return TrainConfig.from_dict(values)
