"""Attention-guided selection of high-frequency patch tokens.

The original-stream pass ranks patches by head-averaged final-layer class
attention; the top Z = round(mu * n) indices pick the matching tokens out of
the high-frequency sequence, which is then re-encoded with the same weights.
Ranking is discrete: no gradient flows through the ordering itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .backbone import EncoderOutput, TokenBatch, VisionTransformer
from .errors import ParameterError, ProtocolError, StructuralError


@dataclass
class AttentionSummary:
    """Head-averaged class-to-patch attention at the final layer (B x n)."""

    scores: torch.Tensor
    layer_index: int


@dataclass
class SelectionIndex:
    """Per-sample top-Z patch indices, strictly descending by score.

    Ties break toward the lower patch index. ``indices`` is B x Z (long).
    """

    indices: torch.Tensor
    mu: float

    @property
    def z(self) -> int:
        return self.indices.shape[1]


class DynamicMemory:
    """Per-step store of selection indices keyed by sample id.

    Populated exactly once by the original-stream forward and cleared when the
    high-frequency forward consumes it; double stores and empty consumes are
    protocol errors.
    """

    def __init__(self):
        self._store: dict[int, torch.Tensor] | None = None
        self._mu: float = 0.0

    def store(self, sample_ids: list[int], sel: SelectionIndex):
        if self._store is not None:
            raise ProtocolError("dynamic memory already populated this step")
        if len(sample_ids) != sel.indices.shape[0]:
            raise StructuralError("sample id count does not match selection batch")
        self._store = {sid: sel.indices[i] for i, sid in enumerate(sample_ids)}
        self._mu = sel.mu

    def consume(self, sample_ids: list[int]) -> SelectionIndex:
        if self._store is None:
            raise ProtocolError("dynamic memory is empty")
        try:
            rows = [self._store[sid] for sid in sample_ids]
        except KeyError as e:
            raise ProtocolError(f"sample id {e.args[0]} was never stored") from e
        sel = SelectionIndex(indices=torch.stack(rows, dim=0), mu=self._mu)
        self._store = None
        return sel


def summarize_attention(out: EncoderOutput, exclude_cls_self: bool = True) -> AttentionSummary:
    """Mean over heads of final-layer class-to-patch attention, patch-normalized.

    Requires a full-sequence pass; summarizing an already-gathered
    subsequence is a protocol error.
    """
    n = out.tokens.shape[1] - 1
    ref = torch.arange(n, device=out.source_indices.device)
    if out.source_indices.shape[1] != n or not torch.equal(
        out.source_indices, ref.expand_as(out.source_indices)
    ):
        raise ProtocolError("attention summary requires a full original-stream sequence")
    rows = out.attention_stack[-1][:, :, 0, 1:]  # B x heads x n
    if exclude_cls_self:
        rows = rows / rows.sum(dim=-1, keepdim=True)
    psi = rows.mean(dim=1)
    psi = psi / psi.sum(dim=-1, keepdim=True)
    return AttentionSummary(scores=psi, layer_index=len(out.attention_stack) - 1)


def select_topz(summary: AttentionSummary, mu: float) -> SelectionIndex:
    """Indices of the Z = round(mu * n) largest scores, ties to the lower index."""
    if not 0.0 < mu <= 1.0:
        raise ParameterError(f"mu must be in (0, 1], got {mu}")
    n = summary.scores.shape[1]
    z = int(round(mu * n))
    if z < 1:
        raise ParameterError(f"round(mu * n) = 0 for mu={mu}, n={n}")
    order = torch.argsort(summary.scores.detach(), dim=1, descending=True, stable=True)
    return SelectionIndex(indices=order[:, :z].clone(), mu=mu)


def gather_hf_tokens(hf_tokens: TokenBatch, sel: SelectionIndex) -> TokenBatch:
    """Subsequence of the high-frequency sequence at the selected indices.

    Keeps the fresh high-frequency class token at position 0; selected patch
    tokens carry the positional embeddings they were built with.
    """
    n = hf_tokens.embeddings.shape[1] - 1
    if int(sel.indices.max()) >= n:
        raise StructuralError(
            f"selection index {int(sel.indices.max())} out of range for {n} patches"
        )
    d = hf_tokens.embeddings.shape[2]
    idx = (sel.indices + 1).unsqueeze(-1).expand(-1, -1, d)
    patches = torch.gather(hf_tokens.embeddings, 1, idx)
    emb = torch.cat([hf_tokens.embeddings[:, :1], patches], dim=1)
    src = torch.gather(hf_tokens.source_indices, 1, sel.indices)
    return TokenBatch(embeddings=emb, source_indices=src)


@dataclass
class DualStreamFeatures:
    class_orig: torch.Tensor    # B x D
    class_hf: torch.Tensor      # B x D
    tokens_orig: torch.Tensor   # B x Z x D, original-stream tokens at the selected indices
    tokens_hf: torch.Tensor     # B x Z x D
    summary: AttentionSummary | None
    selection: SelectionIndex | None


def dual_forward(
    model: VisionTransformer,
    orig_imgs: torch.Tensor,
    hf_imgs: torch.Tensor,
    mu: float,
    use_ods: bool = True,
    exclude_cls_self: bool = True,
) -> DualStreamFeatures:
    """Original full pass, selection, then the high-frequency subsequence pass.

    Both passes share all weights. With ``use_ods`` off the high-frequency
    stream keeps its full token sequence (selection code never runs).
    """
    out_o = model(orig_imgs, stream="orig")
    hf_full = model.patchify(hf_imgs, stream="hf")
    if use_ods:
        summary = summarize_attention(out_o, exclude_cls_self=exclude_cls_self)
        sel = select_topz(summary, mu)
        memory = DynamicMemory()
        sample_ids = list(range(orig_imgs.shape[0]))
        memory.store(sample_ids, sel)
        out_h = model.encode(gather_hf_tokens(hf_full, memory.consume(sample_ids)))
        d = out_o.tokens.shape[2]
        f_o = torch.gather(
            out_o.tokens[:, 1:, :], 1, sel.indices.unsqueeze(-1).expand(-1, -1, d)
        )
    else:
        summary, sel = None, None
        out_h = model.encode(hf_full)
        f_o = out_o.tokens[:, 1:, :]
    return DualStreamFeatures(
        class_orig=out_o.class_feature,
        class_hf=out_h.class_feature,
        tokens_orig=f_o,
        tokens_hf=out_h.tokens[:, 1:, :],
        summary=summary,
        selection=sel,
    )
