"""Losses, triplet construction, the two-stage training recipe, checkpoints.

Stage "refine" fits the restorer on accurate degradation descriptions with the
context enhancer bypassed; stage "restore" resumes from a refine checkpoint,
switches the anchor text to a corrupted oracle description routed through the
enhancer, and adds the triplet term. Checkpoints are a versioned JSON header
followed by raw little-endian float64 parameter blobs named by module path.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .context import triplet_loss
from .degrade import DatasetManifest, describe, load_pair
from .pipeline import ModelConfig, RestorationModel, build_model
from .train_errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    TrainingError,
)

STAGES = ("refine", "restore")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 4
    patch: int = 128
    iters: int = 2000
    alpha: float = 0.5
    lambda_tri: float = 1.0
    corruption_p: float = 0.3
    seed: int = 0
    flips: bool = True
    log_every: int = 100
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.patch < 8:
            raise ValueError("patch must be >= 8")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.lambda_tri < 0:
            raise ValueError("lambda_tri must be >= 0")
        if not (0.0 <= self.corruption_p <= 1.0):
            raise ValueError("corruption_p must lie in [0, 1]")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def toy_train_config(**overrides) -> TrainConfig:
    base = dict(patch=32, batch=4, lr=1e-4)
    base.update(overrides)
    return TrainConfig(**base)


##########################################################################
## Losses

def rec_loss(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over all elements."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (pred - gt).abs().mean()


def total_loss(stage: str, pred, gt, z=None, z_pos=None, z_neg=None,
               cfg: TrainConfig = None) -> torch.Tensor:
    """Stage loss: refine = reconstruction only; restore adds the weighted
    triplet term over the context triple."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage: {stage!r}")
    cfg = cfg or TrainConfig()
    rec = rec_loss(pred, gt)
    if stage == "refine":
        return rec
    if z is None or z_pos is None or z_neg is None:
        raise ValueError("restore stage needs the context triple (z, z_pos, z_neg)")
    return rec + cfg.lambda_tri * triplet_loss(z, z_pos, z_neg, cfg.alpha)


def make_triplet_texts(spec, seed: int, p: float = 0.3):
    """Anchor/positive/negative description strings for one degradation spec.

    The anchor simulates an imperfect captioner (clause corruption with
    probability p); positive is the accurate description, negative the
    clause-flipped one.
    """
    anchor = describe(spec, "noisy", seed=seed, p=p).text
    pos = describe(spec, "gt").text
    neg = describe(spec, "gf").text
    return anchor, pos, neg


##########################################################################
## Checkpoints: magic + version + JSON header + float64 LE blobs

CHECKPOINT_MAGIC = b"RSTRCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    stage: str = "refine"
    iteration: int = 0
    rng: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION
    checkpoint_id: str = "unsaved"

    @classmethod
    def from_model(cls, model: RestorationModel, stage: str, iteration: int,
                   rng: dict = None) -> "Checkpoint":
        params = {
            name: p.detach().to(torch.float64).cpu().numpy().copy()
            for name, p in model.named_parameters()
        }
        return cls(config=model.config, params=params, stage=stage,
                   iteration=iteration, rng=rng or {})

    def apply_to(self, model: RestorationModel) -> RestorationModel:
        model_params = dict(model.named_parameters())
        for name, value in self.params.items():
            if name not in model_params:
                raise CheckpointShapeError(f"parameter {name!r} does not exist in the model")
            want = tuple(model_params[name].shape)
            if tuple(value.shape) != want:
                raise CheckpointShapeError(
                    f"parameter {name!r} has shape {tuple(value.shape)}, model expects {want}")
        missing = [n for n in model_params if n not in self.params]
        if missing:
            raise CheckpointShapeError(f"parameter {missing[0]!r} missing from checkpoint")
        with torch.no_grad():
            for name, value in self.params.items():
                model_params[name].copy_(torch.as_tensor(value, dtype=model_params[name].dtype))
        return model

    def build_model(self) -> RestorationModel:
        model = RestorationModel(self.config)
        return self.apply_to(model)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.params)
    header = {
        "stage": ckpt.stage,
        "iteration": ckpt.iteration,
        "config": ckpt.config.to_dict(),
        "rng": ckpt.rng,
        "meta": ckpt.meta,
        "params": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for n in names:
            fh.write(np.ascontiguousarray(ckpt.params[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()[:12]
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    offset = len(CHECKPOINT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    if offset + header_len > len(raw):
        raise CheckpointTruncatedError(f"{path}: header truncated")
    header = json.loads(raw[offset:offset + header_len].decode("utf-8"))
    offset += header_len

    params = {}
    for meta in header["params"]:
        shape = tuple(int(s) for s in meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointTruncatedError(
                f"{path}: parameter blob {meta['name']!r} truncated")
        params[meta["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        params=params,
        stage=header["stage"],
        iteration=int(header["iteration"]),
        rng=header.get("rng", {}),
        meta=header.get("meta", {}),
        version=version,
        checkpoint_id=digest,
    )


##########################################################################
## Training loop

class _PairCache:
    """Loads every manifest pair once; items come back as float64 CHW arrays."""

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        self.manifest = DatasetManifest.load(self.manifest_path)
        self.items = [load_pair(self.manifest_path, e) for e in self.manifest.entries]
        if not self.items:
            raise ValueError("manifest has no entries")

    def __len__(self):
        return len(self.items)

    def sample(self, rng: np.random.Generator, patch: int, flips: bool):
        """One (lq, hq, spec) training sample with aligned crop and flips."""
        idx = int(rng.integers(0, len(self.items)))
        lq, hq = self.items[idx]
        h, w = lq.shape[1:]
        if h < patch or w < patch:
            raise ValueError(f"image {h}x{w} smaller than patch {patch}")
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        lq = lq[:, top:top + patch, left:left + patch]
        hq = hq[:, top:top + patch, left:left + patch]
        if flips:
            if rng.random() < 0.5:
                lq, hq = lq[:, :, ::-1], hq[:, :, ::-1]
            if rng.random() < 0.5:
                lq, hq = lq[:, ::-1, :], hq[:, ::-1, :]
        return np.ascontiguousarray(lq), np.ascontiguousarray(hq), self.manifest.entries[idx].spec


def _rng_snapshot(data_rng: np.random.Generator) -> dict:
    return {
        "torch": torch.get_rng_state().numpy().tobytes().hex(),
        "data": json.loads(json.dumps(data_rng.bit_generator.state)),
    }


def train_stage(stage: str, manifest_path, cfg: TrainConfig,
                model_config: ModelConfig = None, init: Checkpoint = None,
                use_cem: bool = True, log_path=None, out_path=None,
                meta: dict = None) -> Checkpoint:
    """Run one optimization stage and return the final checkpoint.

    Deterministic in cfg.seed: parameter init (fresh runs), data order, crops,
    flips, and anchor-corruption draws all derive from it.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage: {stage!r}")
    cfg.validate()
    if stage == "restore" and init is None:
        raise ValueError("restore stage requires a refine checkpoint to start from")
    if init is not None and stage == "refine" and init.stage != "refine":
        raise ValueError("refine stage can only resume a refine checkpoint")

    if init is not None:
        model = init.build_model()
        start_iter = init.iteration
    else:
        model = build_model(model_config, seed=cfg.seed)
        start_iter = 0
    model.train()

    cache = _PairCache(manifest_path)
    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, STAGES.index(stage)]))
    optim = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for i in range(cfg.iters):
            lqs, hqs, anchors, positives, negatives = [], [], [], [], []
            for _ in range(cfg.batch):
                lq, hq, spec = cache.sample(data_rng, cfg.patch, cfg.flips)
                lqs.append(lq)
                hqs.append(hq)
                if stage == "refine":
                    anchors.append(describe(spec, "gt").text)
                else:
                    a, p, n = make_triplet_texts(
                        spec, seed=int(data_rng.integers(0, 2 ** 63)), p=cfg.corruption_p)
                    anchors.append(a)
                    positives.append(p)
                    negatives.append(n)

            lq_t = torch.as_tensor(np.stack(lqs), dtype=model.dtype)
            hq_t = torch.as_tensor(np.stack(hqs), dtype=model.dtype)
            rows, mask = model.encode_texts(anchors)

            optim.zero_grad()
            if stage == "refine":
                z = model.compute_context(rows, mask, use_cem=False)
                pred = model.restorer(lq_t, z)
                rec = rec_loss(pred, hq_t)
                tri = torch.zeros(())
                loss = rec
            else:
                z = model.compute_context(rows, mask, image=lq_t, use_cem=use_cem)
                with torch.no_grad():
                    pos_rows, pos_mask = model.encode_texts(positives)
                    neg_rows, neg_mask = model.encode_texts(negatives)
                    z_pos = model.compute_context(pos_rows, pos_mask, use_cem=False)
                    z_neg = model.compute_context(neg_rows, neg_mask, use_cem=False)
                pred = model.restorer(lq_t, z)
                rec = rec_loss(pred, hq_t)
                tri = triplet_loss(z, z_pos, z_neg, cfg.alpha)
                loss = rec + cfg.lambda_tri * tri
            rec_val = float(rec.detach())
            tri_val = float(tri.detach())
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at iteration {start_iter + i}: "
                    f"rec={rec_val!r} tri={tri_val!r}")
            loss.backward()
            optim.step()

            it = start_iter + i + 1
            if log_fh and (it % cfg.log_every == 0 or i == cfg.iters - 1):
                log_fh.write(json.dumps({
                    "iter": it, "stage": stage, "rec_loss": rec_val,
                    "tri_loss": tri_val, "lr": cfg.lr,
                }) + "\n")
                log_fh.flush()
            if out_path and cfg.checkpoint_every and (i + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(Checkpoint.from_model(
                    model, stage, it, _rng_snapshot(data_rng)), out_path)
    finally:
        if log_fh:
            log_fh.close()

    final = Checkpoint.from_model(model, stage, start_iter + cfg.iters,
                                  _rng_snapshot(data_rng))
    final.meta = dict(init.meta) if (init is not None and meta is None) else dict(meta or {})
    if out_path:
        save_checkpoint(final, out_path)
        final.checkpoint_id = load_checkpoint(out_path).checkpoint_id
    return final


def validation_rec_loss(model: RestorationModel, manifest_path, use_cem: bool = False,
                        limit: int = None) -> float:
    """Mean reconstruction loss over a manifest with accurate descriptions."""
    cache = _PairCache(manifest_path)
    entries = list(zip(cache.items, cache.manifest.entries))[:limit]
    model.eval()
    total = 0.0
    with torch.no_grad():
        for (lq, hq), entry in entries:
            lq_t = torch.as_tensor(lq, dtype=model.dtype).unsqueeze(0)
            hq_t = torch.as_tensor(hq, dtype=model.dtype).unsqueeze(0)
            rows, mask = model.encode_texts(describe(entry.spec, "gt").text)
            z = model.compute_context(rows, mask, image=lq_t, use_cem=use_cem)
            total += float(rec_loss(model.restorer(lq_t, z), hq_t))
    model.train()
    return total / len(entries)
