"""Compact pre-norm vision transformer with exposed per-layer attention.

One weight set serves two input streams: the usual class token for original
images, and a separate learned class token for the high-frequency stream.
Patch tokens keep their positional embeddings, so a gathered subsequence of
tokens still carries its original spatial identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import NumericError, ParameterError, StructuralError


@dataclass(frozen=True)
class PatchConfig:
    image_size: tuple[int, int] = (64, 64)
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    in_channels: int = 3

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ParameterError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )

    @property
    def grid_size(self) -> tuple[int, int]:
        return (self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size)

    @property
    def num_patches(self) -> int:
        gh, gw = self.grid_size
        return gh * gw


@dataclass
class TokenBatch:
    """B x S x D embeddings, index 0 the class token, plus per-sample patch ids.

    ``source_indices`` (B x (S-1), long) maps each patch position back to its
    original patch index; the identity map for full sequences.
    """

    embeddings: torch.Tensor
    source_indices: torch.Tensor

    def is_full_sequence(self, num_patches: int) -> bool:
        if self.source_indices.shape[1] != num_patches:
            return False
        ref = torch.arange(num_patches, device=self.source_indices.device)
        return bool(torch.equal(self.source_indices, ref.expand_as(self.source_indices)))


@dataclass
class EncoderOutput:
    tokens: torch.Tensor                 # B x S x D, after the final norm
    class_feature: torch.Tensor          # B x D, equals tokens[:, 0]
    attention_stack: list[torch.Tensor]  # depth tensors of B x heads x S x S
    source_indices: torch.Tensor


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, s, d = x.shape
        qkv = self.qkv(x).reshape(b, s, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.proj(out), attn


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a, attn = self.attn(self.norm1(x))
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x, attn


class VisionTransformer(nn.Module):
    """ViT encoder shared by both streams; exposes the full attention stack."""

    def __init__(self, cfg: PatchConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_proj = nn.Conv2d(cfg.in_channels, d, cfg.patch_size, stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.hf_cls_token = nn.Parameter(torch.zeros(1, 1, d))
        self.pos_embed = nn.Parameter(torch.zeros(1, cfg.num_patches + 1, d))
        self.blocks = nn.ModuleList(
            [Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)]
        )
        self.norm = nn.LayerNorm(d)
        self._init_weights()

    def _init_weights(self):
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.hf_cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Conv2d):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)

    def patch_embeddings(self, imgs: torch.Tensor) -> torch.Tensor:
        """Linear patch projection only: B x n x D, row-major grid order, no positions."""
        expect = (self.cfg.in_channels, *self.cfg.image_size)
        if imgs.ndim != 4 or tuple(imgs.shape[1:]) != expect:
            raise StructuralError(
                f"expected image batch of shape (B, {expect[0]}, {expect[1]}, {expect[2]}), "
                f"got {tuple(imgs.shape)}"
            )
        return self.patch_proj(imgs).flatten(2).transpose(1, 2)

    def patchify(self, imgs: torch.Tensor, stream: str = "orig") -> TokenBatch:
        """Patch tokens + stream class token + positional embeddings."""
        patches = self.patch_embeddings(imgs)
        b = patches.shape[0]
        cls = self.cls_token if stream == "orig" else self.hf_cls_token
        x = torch.cat([cls.expand(b, -1, -1), patches], dim=1) + self.pos_embed
        src = torch.arange(self.cfg.num_patches, device=imgs.device).expand(b, -1)
        return TokenBatch(embeddings=x, source_indices=src)

    def encode(self, tokens: TokenBatch) -> EncoderOutput:
        x = tokens.embeddings
        if x.ndim != 3 or x.shape[1] < 1:
            raise StructuralError(f"token batch must be B x S x D with S >= 1, got {tuple(x.shape)}")
        attns = []
        for i, blk in enumerate(self.blocks):
            x, attn = blk(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activation after layer {i}")
            attns.append(attn)
        x = self.norm(x)
        return EncoderOutput(
            tokens=x,
            class_feature=x[:, 0],
            attention_stack=attns,
            source_indices=tokens.source_indices,
        )

    def forward(self, imgs: torch.Tensor, stream: str = "orig") -> EncoderOutput:
        return self.encode(self.patchify(imgs, stream=stream))

    def state_arrays(self) -> dict:
        """Named weight arrays for the checkpoint container."""
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}

    def load_state_arrays(self, arrays: dict):
        state = {k: torch.as_tensor(v) for k, v in arrays.items()}
        self.load_state_dict(state)


def class_attention(out: EncoderOutput, layer: int, head: int) -> torch.Tensor:
    """Class-query attention at (layer, head), restricted to patch positions.

    The class token's self-attention mass is dropped and the row renormalized,
    so the result is a probability distribution over patches (B x n).
    """
    if not 0 <= layer < len(out.attention_stack):
        raise IndexError(f"layer {layer} out of range [0, {len(out.attention_stack)})")
    attn = out.attention_stack[layer]
    if not 0 <= head < attn.shape[1]:
        raise IndexError(f"head {head} out of range [0, {attn.shape[1]})")
    row = attn[:, head, 0, 1:]
    return row / row.sum(dim=-1, keepdim=True)
