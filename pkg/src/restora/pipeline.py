"""Full restoration pipeline: text encoder -> context stack -> restorer.

One nn.Module owns the context enhancer, the context transformer, and the
U-shaped restorer, so checkpoints can address every parameter by module path.
The hash text encoder is deterministic and parameter-free; it lives alongside
the torch modules rather than inside them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .context import ContextEnhancer, ContextTransformer
from .images import validate_image
from .network import ContextRestorer, RestorerConfig
from .textio import HashTextEncoder

MODES = ("full", "no_cem", "no_dmm")


@dataclass
class ModelConfig:
    text_len: int = 77
    text_dim: int = 512
    ctx_dim: int = 512
    shallow_channels: int = 48
    text_heads: int = 8
    base_channels: int = 48
    blocks: tuple = (4, 6, 6, 8)
    heads: tuple = (1, 2, 4, 8)
    expansion: float = 2.66
    fusion: bool = True

    def restorer_config(self) -> RestorerConfig:
        return RestorerConfig(
            base_channels=self.base_channels,
            blocks=tuple(self.blocks),
            heads=tuple(self.heads),
            expansion=self.expansion,
            ctx_dim=self.ctx_dim,
            fusion=self.fusion,
        )

    def to_dict(self) -> dict:
        return {
            "text_len": self.text_len,
            "text_dim": self.text_dim,
            "ctx_dim": self.ctx_dim,
            "shallow_channels": self.shallow_channels,
            "text_heads": self.text_heads,
            "base_channels": self.base_channels,
            "blocks": list(self.blocks),
            "heads": list(self.heads),
            "expansion": self.expansion,
            "fusion": self.fusion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["blocks"] = tuple(d["blocks"])
        d["heads"] = tuple(d["heads"])
        return cls(**d)


def default_config() -> ModelConfig:
    return ModelConfig()


def toy_config(fusion: bool = True) -> ModelConfig:
    """CPU-scale preset: narrow restorer plus proportionally narrow text stack."""
    return ModelConfig(
        text_dim=128,
        ctx_dim=128,
        shallow_channels=16,
        text_heads=4,
        base_channels=8,
        blocks=(1, 1, 1, 1),
        heads=(1, 1, 2, 2),
        fusion=fusion,
    )


def config_for_mode(base: ModelConfig, mode: str) -> ModelConfig:
    """no_dmm swaps the modulation blocks for their fusion-free variant."""
    if mode not in MODES:
        raise ValueError(f"unknown mode: {mode!r}")
    cfg = ModelConfig.from_dict(base.to_dict())
    cfg.fusion = mode != "no_dmm"
    return cfg


def mode_uses_cem(mode: str) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown mode: {mode!r}")
    return mode != "no_cem"


class RestorationModel(nn.Module):
    def __init__(self, config: ModelConfig = None):
        super().__init__()
        cfg = config or default_config()
        self.config = cfg
        self.text_encoder = HashTextEncoder(cfg.text_len, cfg.text_dim)
        self.enhancer = ContextEnhancer(cfg.shallow_channels, cfg.text_dim, cfg.text_heads)
        self.context = ContextTransformer(cfg.text_dim, cfg.ctx_dim, cfg.text_heads)
        self.restorer = ContextRestorer(cfg.restorer_config())

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode_texts(self, texts):
        """Encode one string or a list of strings to (rows, mask) batch tensors."""
        if isinstance(texts, str):
            texts = [texts]
        feats = [self.text_encoder.encode(t) for t in texts]
        rows = torch.as_tensor(np.stack([f.data for f in feats]), dtype=self.dtype, device=self.device)
        mask = torch.as_tensor(np.stack([f.mask for f in feats]), dtype=torch.bool, device=self.device)
        return rows, mask

    def compute_context(self, rows, mask, image=None, use_cem: bool = True):
        """Text rows -> degradation context Z; with use_cem the rows are first
        enhanced by cross-attending to shallow features of `image`."""
        if use_cem:
            if image is None:
                raise ValueError("context enhancement needs the degraded image")
            rows = self.enhancer(image, rows, mask)
        return self.context(rows, mask)

    def forward(self, img, rows, mask, use_cem: bool = True, clamp: bool = False):
        z = self.compute_context(rows, mask, image=img, use_cem=use_cem)
        return self.restorer(img, z, clamp=clamp)

    def restore_array(self, img: np.ndarray, text: str, use_cem: bool = True) -> np.ndarray:
        """Restore one (3,H,W) float image conditioned on a description string."""
        validate_image(img)
        with torch.no_grad():
            batch = torch.as_tensor(img, dtype=self.dtype, device=self.device).unsqueeze(0)
            rows, mask = self.encode_texts(text)
            out = self.forward(batch, rows, mask, use_cem=use_cem, clamp=True)
        return out.squeeze(0).to(torch.float64).cpu().numpy()


def build_model(config: ModelConfig = None, seed: int = None) -> RestorationModel:
    """Construct a model, optionally with seeded parameter initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return RestorationModel(config)
