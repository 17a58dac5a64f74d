"""Training losses for the dual-stream model.

Identity cross-entropy and batch-hard triplet on both class features, a
smooth-L1 equilibrium term pulling high-frequency token embeddings toward
their original-stream counterparts, and the weighted total.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError, ProtocolError, StructuralError

DEFAULT_MARGIN = 0.3


@dataclass
class LossBreakdown:
    """Scalar loss components as Python floats, for logging and bookkeeping.

    ``total`` is id_o + tri_o + id_h + tri_h + lambda_eq * equilibrium,
    summed in that order.
    """

    id_o: float
    tri_o: float
    id_h: float
    tri_h: float
    equilibrium: float
    lambda_eq: float
    total: float

    def as_dict(self) -> dict:
        return {
            "id_o": self.id_o,
            "tri_o": self.tri_o,
            "id_h": self.id_h,
            "tri_h": self.tri_h,
            "equilibrium": self.equilibrium,
            "lambda_eq": self.lambda_eq,
            "total": self.total,
        }


class ClassifierHead(nn.Module):
    """Linear identity classifier, optionally behind a batch-norm neck.

    The neck decouples the classifier's geometry from the metric space the
    triplet loss shapes, which keeps the cross-entropy signal strong when
    raw feature spread shrinks; retrieval always uses the raw features.
    """

    def __init__(self, dim: int, num_classes: int, bnneck: bool = False):
        super().__init__()
        self.out_features = num_classes
        self.neck = nn.BatchNorm1d(dim) if bnneck else None
        self.fc = nn.Linear(dim, num_classes, bias=not bnneck)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if self.neck is not None:
            features = self.neck(features)
        return self.fc(features)


def id_loss(
    features: torch.Tensor,
    labels: torch.Tensor,
    classifier: nn.Module,
    label_smoothing: float = 0.0,
) -> torch.Tensor:
    """Mean cross-entropy of the classifier head's logits over the batch."""
    if int(labels.min()) < 0 or int(labels.max()) >= classifier.out_features:
        raise InputError(
            f"label outside classifier range [0, {classifier.out_features})"
        )
    return F.cross_entropy(classifier(features), labels, label_smoothing=label_smoothing)


def pairwise_distances(features: torch.Tensor) -> torch.Tensor:
    """B x B Euclidean distance matrix (clamped before the sqrt for stability)."""
    sq = (features ** 2).sum(dim=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (features @ features.t())
    return d2.clamp(min=1e-12).sqrt()


def triplet_loss(
    features: torch.Tensor, labels: torch.Tensor, margin: float = DEFAULT_MARGIN
) -> torch.Tensor:
    """Batch-hard triplet: hardest positive minus hardest negative, hinged.

    Requires PK structure: at least two identities and at least two samples
    for every identity present.
    """
    uniq, counts = torch.unique(labels, return_counts=True)
    if len(uniq) < 2 or int(counts.min()) < 2:
        raise ProtocolError(
            "batch violates PK structure: need >= 2 identities with >= 2 samples each"
        )
    dist = pairwise_distances(features)
    same = labels[:, None] == labels[None, :]
    hardest_pos = dist.masked_fill(~same, float("-inf")).max(dim=1).values
    hardest_neg = dist.masked_fill(same, float("inf")).min(dim=1).values
    return F.relu(hardest_pos - hardest_neg + margin).mean()


def equilibrium_loss(f_o: torch.Tensor, f_h: torch.Tensor) -> torch.Tensor:
    """Smooth-L1 discrepancy between paired token embeddings.

    Elementwise 0.5*d^2 for |d| < 1, |d| - 0.5 otherwise; averaged over the
    feature dimension, averaged over tokens, summed over the batch.
    """
    if f_o.shape != f_h.shape:
        raise StructuralError(f"shape mismatch: {tuple(f_o.shape)} vs {tuple(f_h.shape)}")
    if f_o.ndim != 3:
        raise StructuralError(f"expected B x Z x D tensors, got ndim={f_o.ndim}")
    per_elem = F.smooth_l1_loss(f_h, f_o, reduction="none", beta=1.0)
    return per_elem.mean(dim=2).mean(dim=1).sum()


def total_loss(
    c_o: torch.Tensor,
    labels: torch.Tensor,
    classifier: nn.Module,
    lambda_eq: float,
    margin: float = DEFAULT_MARGIN,
    c_h: torch.Tensor | None = None,
    f_o: torch.Tensor | None = None,
    f_h: torch.Tensor | None = None,
    label_smoothing: float = 0.0,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Dual-stream sum plus the weighted equilibrium term.

    The shared classifier head scores both class features. When the
    high-frequency stream is absent (``c_h`` is None) its terms are zero and
    only the single-stream losses remain.
    """
    zero = c_o.new_zeros(())
    id_o = id_loss(c_o, labels, classifier, label_smoothing)
    tri_o = triplet_loss(c_o, labels, margin)
    if c_h is not None:
        id_h = id_loss(c_h, labels, classifier, label_smoothing)
        tri_h = triplet_loss(c_h, labels, margin)
    else:
        id_h = tri_h = zero
    if f_o is not None and f_h is not None:
        eq = equilibrium_loss(f_o, f_h)
    else:
        eq = zero
    total = id_o + tri_o + id_h + tri_h + lambda_eq * eq
    vals = [float(t.detach()) for t in (id_o, tri_o, id_h, tri_h, eq)]
    breakdown = LossBreakdown(
        id_o=vals[0],
        tri_o=vals[1],
        id_h=vals[2],
        tri_h=vals[3],
        equilibrium=vals[4],
        lambda_eq=float(lambda_eq),
        total=vals[0] + vals[1] + vals[2] + vals[3] + float(lambda_eq) * vals[4],
    )
    return total, breakdown
