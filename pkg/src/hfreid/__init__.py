"""Dual-stream re-identification toolkit.

Spectral mixing augmentation, a compact vision transformer with exposed
attention, attention-guided high-frequency token selection, metric-learning
objectives, PK-balanced data loading, retrieval evaluation (mAP / CMC /
mINP), and a reproducible training harness with a CLI.
"""

from .backbone import EncoderOutput, PatchConfig, TokenBatch, VisionTransformer
from .config import TrainConfig
from .datapipe import BatchSpec, Manifest, ManifestRecord, SplitSpec
from .evaluator import EvalReport, FeatureGallery, evaluate
from .harness import RunRecord, ablate, attnmap, cosine_lr, sweep, train
from .objectives import LossBreakdown, equilibrium_loss, id_loss, total_loss, triplet_loss
from .selection import (
    AttentionSummary,
    DynamicMemory,
    SelectionIndex,
    dual_forward,
    gather_hf_tokens,
    select_topz,
    summarize_attention,
)
from .spectral import (
    HighPassFilter,
    MixMask,
    Spectrum,
    apply_high_pass,
    fma_augment,
    forward_transform,
    gaussian_high_pass,
    inverse_transform,
    mix_spectra,
    sample_mask,
)

__version__ = "0.1.0"
