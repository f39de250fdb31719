"""Degradation context: enhance text features with image evidence, condense to Z.

ContextEnhancer refines encoded description rows via cross-attention over
pooled shallow image features; ContextTransformer turns (enhanced) rows into
the degradation context consumed by the restoration network; triplet_loss
scores a context against its accurate / opposite counterparts.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange


class ShallowResBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 with a 1x1-projected input skip."""

    def __init__(self, in_ch: int = 3, channels: int = 48):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.proj = nn.Conv2d(in_ch, channels, 1)

    def forward(self, x):
        return self.conv2(F.relu(self.conv1(x))) + self.proj(x)


class _RowAttention(nn.Module):
    """Multi-head attention over token rows (pre-norm lives in the caller)."""

    def __init__(self, dim: int, heads: int, kv_dim: int = None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        kv_dim = dim if kv_dim is None else kv_dim
        self.heads = heads
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(kv_dim, dim)
        self.to_v = nn.Linear(kv_dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, q_rows, kv_rows, key_mask=None):
        q = rearrange(self.to_q(q_rows), "b l (h d) -> b h l d", h=self.heads)
        k = rearrange(self.to_k(kv_rows), "b l (h d) -> b h l d", h=self.heads)
        v = rearrange(self.to_v(kv_rows), "b l (h d) -> b h l d", h=self.heads)
        logits = q @ k.transpose(-2, -1) / (q.shape[-1] ** 0.5)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        out = logits.softmax(dim=-1) @ v
        return self.to_out(rearrange(out, "b h l d -> b l (h d)"))


class _RowMLP(nn.Module):
    def __init__(self, dim: int, hidden_mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden_mult * dim)
        self.fc2 = nn.Linear(hidden_mult * dim, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class CrossAttnBlock(nn.Module):
    """Pre-norm cross-attention + pre-norm MLP, both residual."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = _RowAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = _RowMLP(dim)

    def forward(self, rows, memory):
        rows = rows + self.attn(self.norm_q(rows), self.norm_kv(memory))
        rows = rows + self.mlp(self.norm_mlp(rows))
        return rows


class ContextEnhancer(nn.Module):
    """Refine text rows with pooled shallow image features (fixed 8x8 token grid).

    Queries are the text rows, keys/values the 64 image tokens; two blocks.
    Padding rows pass through the blocks but are re-zeroed on output.
    """

    GRID = 8

    def __init__(self, channels: int = 48, dim: int = 512, heads: int = 8, blocks: int = 2):
        super().__init__()
        self.shallow = ShallowResBlock(3, channels)
        self.img_proj = nn.Linear(channels, dim)
        self.blocks = nn.ModuleList(CrossAttnBlock(dim, heads) for _ in range(blocks))
        # residual branches start at zero: a fresh enhancer passes rows through
        # unchanged, so switching it on mid-training cannot jolt the context
        for block in self.blocks:
            nn.init.zeros_(block.attn.to_out.weight)
            nn.init.zeros_(block.attn.to_out.bias)
            nn.init.zeros_(block.mlp.fc2.weight)
            nn.init.zeros_(block.mlp.fc2.bias)

    def image_tokens(self, img):
        if img.shape[-2] < self.GRID or img.shape[-1] < self.GRID:
            raise ValueError(f"image sides must be >= {self.GRID} for grid pooling")
        feat = self.shallow(img)
        pooled = F.adaptive_avg_pool2d(feat, self.GRID)
        return self.img_proj(rearrange(pooled, "b c gh gw -> b (gh gw) c"))

    def forward(self, img, rows, mask):
        tokens = self.image_tokens(img)
        out = rows
        for block in self.blocks:
            out = block(out, tokens)
        return out * mask.unsqueeze(-1).to(out.dtype)


class ContextTransformer(nn.Module):
    """Single pre-norm self-attention + MLP block, then a linear head to d_z.

    Self-attention masks padding keys; output padding rows are zeroed so the
    context is a full L x d_z matrix with inert tail rows.
    """

    def __init__(self, dim: int = 512, out_dim: int = 512, heads: int = 8):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = _RowAttention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = _RowMLP(dim)
        self.out_proj = nn.Linear(dim, out_dim)

    def forward(self, rows, mask):
        normed = self.norm_attn(rows)
        rows = rows + self.attn(normed, normed, key_mask=mask)
        rows = rows + self.mlp(self.norm_mlp(rows))
        z = self.out_proj(rows)
        return z * mask.unsqueeze(-1).to(z.dtype)


def context_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared Frobenius distance per sample, normalized by L * d_z."""
    if a.shape != b.shape:
        raise ValueError(f"context shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a - b
    return diff.pow(2).flatten(start_dim=-2).mean(dim=-1)


def triplet_loss(z: torch.Tensor, z_pos: torch.Tensor, z_neg: torch.Tensor, alpha: float = 0.5) -> torch.Tensor:
    """Hinge on normalized squared distances: mean over batch of [d+ - d- + alpha]+."""
    if alpha < 0:
        raise ValueError("margin alpha must be >= 0")
    if z.dim() == 2:
        z, z_pos, z_neg = z.unsqueeze(0), z_pos.unsqueeze(0), z_neg.unsqueeze(0)
    d_pos = context_distance(z, z_pos)
    d_neg = context_distance(z, z_neg)
    return torch.clamp(d_pos - d_neg + alpha, min=0.0).mean()
