"""Context-modulated U-shaped restoration transformer.

4-level encoder-decoder of channel-attention transformer blocks; the decoder
injects the degradation context through modulation blocks (spatial cross
attention over the context rows, a sigmoid-gated concat fusion, then one basic
block). A fully zero-initialized network is exactly the identity on images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange


##########################################################################
## Channel-wise LayerNorm (normalizes over C at each spatial position)

class ChannelLayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        normed = (x - mu) / torch.sqrt(var + 1e-5)
        return normed * self.weight[None, :, None, None] + self.bias[None, :, None, None]


##########################################################################
## Transposed channel attention: per-head channel x channel attention with
## spatially L2-normalized queries/keys and a learnable temperature

class TransposedAttention(nn.Module):
    def __init__(self, dim: int, heads: int, bias: bool = False):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, 1, bias=bias)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, 3, padding=1, groups=dim * 3, bias=bias)
        self.project_out = nn.Conv2d(dim, dim, 1, bias=bias)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q = rearrange(q, "b (head c) h w -> b head c (h w)", head=self.heads)
        k = rearrange(k, "b (head c) h w -> b head c (h w)", head=self.heads)
        v = rearrange(v, "b (head c) h w -> b head c (h w)", head=self.heads)
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = (q @ k.transpose(-2, -1)) * self.temperature
        out = attn.softmax(dim=-1) @ v
        out = rearrange(out, "b head c (h w) -> b (head c) h w", head=self.heads, h=h, w=w)
        return self.project_out(out)


##########################################################################
## Gated depthwise-conv feed-forward

class GatedFeedForward(nn.Module):
    def __init__(self, dim: int, expansion: float = 2.66, bias: bool = False):
        super().__init__()
        hidden = int(dim * expansion)
        self.project_in = nn.Conv2d(dim, hidden * 2, 1, bias=bias)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2, bias=bias)
        self.project_out = nn.Conv2d(hidden, dim, 1, bias=bias)

    def forward(self, x):
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, expansion: float = 2.66):
        super().__init__()
        self.norm1 = ChannelLayerNorm(dim)
        self.attn = TransposedAttention(dim, heads)
        self.norm2 = ChannelLayerNorm(dim)
        self.ffn = GatedFeedForward(dim, expansion)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        x = x + self.ffn(self.norm2(x))
        return x


##########################################################################
## Resizing: pixel-unshuffle halves H,W and doubles C; pixel-shuffle inverts

class Downsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(dim, dim // 2, 3, padding=1, bias=False), nn.PixelUnshuffle(2))

    def forward(self, x):
        return self.body(x)


class Upsample(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(dim, dim * 2, 3, padding=1, bias=False), nn.PixelShuffle(2))

    def forward(self, x):
        return self.body(x)


##########################################################################
## Spatial cross attention: feature-map positions query the context rows

class SpatialCrossAttention(nn.Module):
    def __init__(self, dim: int, ctx_dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.norm_x = ChannelLayerNorm(dim)
        self.norm_ctx = nn.LayerNorm(ctx_dim)
        self.to_q = nn.Linear(dim, dim)
        self.to_k = nn.Linear(ctx_dim, dim)
        self.to_v = nn.Linear(ctx_dim, dim)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, ctx):
        if ctx.shape[-1] != self.to_k.in_features:
            raise ValueError(f"context dim {ctx.shape[-1]} != configured {self.to_k.in_features}")
        b, c, h, w = x.shape
        tokens = rearrange(self.norm_x(x), "b c h w -> b (h w) c")
        z = self.norm_ctx(ctx)
        q = rearrange(self.to_q(tokens), "b l (hd d) -> b hd l d", hd=self.heads)
        k = rearrange(self.to_k(z), "b l (hd d) -> b hd l d", hd=self.heads)
        v = rearrange(self.to_v(z), "b l (hd d) -> b hd l d", hd=self.heads)
        attn = (q @ k.transpose(-2, -1) / (q.shape[-1] ** 0.5)).softmax(dim=-1)
        out = self.to_out(rearrange(attn @ v, "b hd l d -> b l (hd d)"))
        return x + rearrange(out, "b (h w) c -> b c h w", h=h, w=w)


##########################################################################
## Concat attention fusion: sigmoid-gated convex blend of two feature maps,
## gate = sigmoid(local bottleneck + global (post-GAP) bottleneck)

class ConcatFusion(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.local_conv1 = nn.Conv2d(2 * dim, 2 * dim, 1)
        self.local_norm1 = ChannelLayerNorm(2 * dim)
        self.local_conv2 = nn.Conv2d(2 * dim, dim, 1)
        self.local_norm2 = ChannelLayerNorm(dim)
        self.global_conv1 = nn.Conv2d(2 * dim, 2 * dim, 1)
        self.global_norm1 = ChannelLayerNorm(2 * dim)
        self.global_conv2 = nn.Conv2d(2 * dim, dim, 1)
        self.global_norm2 = ChannelLayerNorm(dim)

    def forward(self, x, y):
        if x.shape != y.shape:
            raise ValueError(f"fusion inputs differ: {tuple(x.shape)} vs {tuple(y.shape)}")
        xy = torch.cat([x, y], dim=1)
        local = self.local_norm2(self.local_conv2(F.relu(self.local_norm1(self.local_conv1(xy)))))
        pooled = F.adaptive_avg_pool2d(xy, 1)
        glob = self.global_norm2(self.global_conv2(F.relu(self.global_norm1(self.global_conv1(pooled)))))
        gate = torch.sigmoid(local + glob)
        return x * gate + (1.0 - gate) * y


##########################################################################
## Modulation block: cross attention -> concat fusion -> basic block.
## The stacked variant drops the fusion (ablation harness).

class ModulationBlock(nn.Module):
    def __init__(self, dim: int, ctx_dim: int, heads: int, expansion: float = 2.66, fusion: bool = True):
        super().__init__()
        self.cross = SpatialCrossAttention(dim, ctx_dim, heads)
        self.fuse = ConcatFusion(dim) if fusion else None
        self.block = TransformerBlock(dim, heads, expansion)

    def forward(self, x, ctx):
        y = self.cross(x, ctx)
        merged = self.fuse(x, y) if self.fuse is not None else y
        return self.block(merged)


##########################################################################
## The restoration network

@dataclass
class RestorerConfig:
    base_channels: int = 48
    blocks: tuple = (4, 6, 6, 8)
    heads: tuple = (1, 2, 4, 8)
    expansion: float = 2.66
    ctx_dim: int = 512
    fusion: bool = True  # False = stacked-cross ablation variant
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if len(self.blocks) != 4 or len(self.heads) != 4:
            raise ValueError("config needs exactly 4 levels")

    def level_dim(self, level: int) -> int:
        return self.base_channels * (2 ** level)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "blocks": list(self.blocks),
            "heads": list(self.heads),
            "expansion": self.expansion,
            "ctx_dim": self.ctx_dim,
            "fusion": self.fusion,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RestorerConfig":
        d = dict(d)
        d["blocks"] = tuple(d["blocks"])
        d["heads"] = tuple(d["heads"])
        return cls(**d)


TOY_RESTORER = dict(base_channels=8, blocks=(1, 1, 1, 1), heads=(1, 1, 2, 2))


def _level(cfg: RestorerConfig, level: int) -> nn.Sequential:
    dim = cfg.level_dim(level)
    return nn.Sequential(*[
        TransformerBlock(dim, cfg.heads[level], cfg.expansion) for _ in range(cfg.blocks[level])
    ])


class ContextRestorer(nn.Module):
    """U-shaped restorer: 3 encoder levels, a bottleneck, 3 decoder levels, with
    one modulation block after the bottleneck and after each decoder level."""

    PAD_MULTIPLE = 8

    def __init__(self, config: RestorerConfig = None):
        super().__init__()
        cfg = config or RestorerConfig()
        self.config = cfg
        c1, c2, c3, c4 = (cfg.level_dim(i) for i in range(4))

        self.embed = nn.Conv2d(cfg.in_channels, c1, 3, padding=1)
        self.encoder1 = _level(cfg, 0)
        self.down1 = Downsample(c1)
        self.encoder2 = _level(cfg, 1)
        self.down2 = Downsample(c2)
        self.encoder3 = _level(cfg, 2)
        self.down3 = Downsample(c3)
        self.bottleneck = _level(cfg, 3)
        self.modulate4 = ModulationBlock(c4, cfg.ctx_dim, cfg.heads[3], cfg.expansion, cfg.fusion)

        self.up3 = Upsample(c4)
        self.reduce3 = nn.Conv2d(2 * c3, c3, 1, bias=False)
        self.decoder3 = _level(cfg, 2)
        self.modulate3 = ModulationBlock(c3, cfg.ctx_dim, cfg.heads[2], cfg.expansion, cfg.fusion)

        self.up2 = Upsample(c3)
        self.reduce2 = nn.Conv2d(2 * c2, c2, 1, bias=False)
        self.decoder2 = _level(cfg, 1)
        self.modulate2 = ModulationBlock(c2, cfg.ctx_dim, cfg.heads[1], cfg.expansion, cfg.fusion)

        self.up1 = Upsample(c2)
        self.reduce1 = nn.Conv2d(2 * c1, c1, 1, bias=False)
        self.decoder1 = _level(cfg, 0)
        self.modulate1 = ModulationBlock(c1, cfg.ctx_dim, cfg.heads[0], cfg.expansion, cfg.fusion)

        self.output = nn.Conv2d(c1, cfg.out_channels, 3, padding=1)
        self._zero_init_cross_out()

    def _zero_init_cross_out(self):
        # conditioning fades in from zero; the untrained net stays near the
        # plain restoration path
        for mod in (self.modulate1, self.modulate2, self.modulate3, self.modulate4):
            nn.init.zeros_(mod.cross.to_out.weight)
            nn.init.zeros_(mod.cross.to_out.bias)

    def forward(self, img, ctx, clamp: bool = False):
        if not torch.isfinite(img).all():
            raise ValueError("input image contains non-finite values")
        if not torch.isfinite(ctx).all():
            raise ValueError("context contains non-finite values")
        h, w = img.shape[-2:]
        if h < self.PAD_MULTIPLE or w < self.PAD_MULTIPLE:
            raise ValueError(f"image sides must be >= {self.PAD_MULTIPLE}")
        pad_h = (-h) % self.PAD_MULTIPLE
        pad_w = (-w) % self.PAD_MULTIPLE
        x = F.pad(img, (0, pad_w, 0, pad_h), mode="reflect")

        feat = self.embed(x)
        e1 = self.encoder1(feat)
        e2 = self.encoder2(self.down1(e1))
        e3 = self.encoder3(self.down2(e2))
        latent = self.bottleneck(self.down3(e3))
        latent = self.modulate4(latent, ctx)

        d3 = self.decoder3(self.reduce3(torch.cat([self.up3(latent), e3], dim=1)))
        d3 = self.modulate3(d3, ctx)
        d2 = self.decoder2(self.reduce2(torch.cat([self.up2(d3), e2], dim=1)))
        d2 = self.modulate2(d2, ctx)
        d1 = self.decoder1(self.reduce1(torch.cat([self.up1(d2), e1], dim=1)))
        d1 = self.modulate1(d1, ctx)

        out = self.output(d1) + x
        out = out[..., :h, :w]
        return out.clamp(0.0, 1.0) if clamp else out
