"""Synthetic degradations, paired descriptions, and dataset generation.

Three degradation families are supported: additive Gaussian noise (sigma on the
0-255 scale), procedural rain streaks, and multiplicative low light
(scale * img ** gamma). Every generator is a pure function of its inputs and a
seed, so datasets and descriptions are bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .images import load_png, save_png, validate_image

NOISE_TEST_LEVELS = (15.0, 25.0, 50.0)


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RainParams:
    num_streaks: int
    angle_deg: float
    length_px: int
    width_px: int
    intensity: float

    def validate(self) -> "RainParams":
        if self.num_streaks < 0:
            raise ValueError("num_streaks must be >= 0")
        if self.length_px < 1 or self.width_px < 1:
            raise ValueError("streak length/width must be >= 1 px")
        if not (0.0 < self.intensity <= 1.0):
            raise ValueError("intensity must lie in (0, 1]")
        return self


@dataclass(frozen=True)
class LightParams:
    gamma: float
    scale: float

    def validate(self) -> "LightParams":
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")
        if not (0.0 < self.scale <= 1.0):
            raise ValueError("scale must lie in (0, 1]")
        return self


@dataclass(frozen=True)
class DegradationSpec:
    """Ground-truth record of what was done to a clean image."""

    noise_sigma: float = 0.0
    rain: Optional[RainParams] = None
    light: Optional[LightParams] = None
    seed: int = 0

    def validate(self) -> "DegradationSpec":
        if self.noise_sigma != 0.0 and not (1.0 <= self.noise_sigma <= 100.0):
            raise ValueError("noise_sigma must be 0 or in [1, 100] (0-255 scale)")
        if self.rain is not None:
            self.rain.validate()
        if self.light is not None:
            self.light.validate()
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self

    @property
    def noise_active(self) -> bool:
        return self.noise_sigma > 0.0

    @property
    def rain_active(self) -> bool:
        return self.rain is not None and self.rain.num_streaks > 0

    @property
    def light_active(self) -> bool:
        return self.light is not None and (self.light.gamma > 1.0 or self.light.scale < 1.0)

    @property
    def is_identity(self) -> bool:
        return not (self.noise_active or self.rain_active or self.light_active)

    @classmethod
    def identity(cls, seed: int = 0) -> "DegradationSpec":
        return cls(seed=seed)

    def to_dict(self) -> dict:
        d: dict = {"noise_sigma": self.noise_sigma, "seed": self.seed}
        d["rain"] = None if self.rain is None else vars(self.rain).copy()
        d["light"] = None if self.light is None else vars(self.light).copy()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        rain = d.get("rain")
        light = d.get("light")
        return cls(
            noise_sigma=float(d["noise_sigma"]),
            rain=None if rain is None else RainParams(**rain),
            light=None if light is None else LightParams(**light),
            seed=int(d["seed"]),
        ).validate()


@dataclass(frozen=True)
class DescriptionText:
    text: str
    provenance: str  # oracle_gt | oracle_gf | oracle_noisy | mllm | user

    def __post_init__(self):
        if not self.text:
            raise ValueError("description text must be non-empty")


# ---------------------------------------------------------------------------
# Degradation operators
# ---------------------------------------------------------------------------

def apply_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std `sigma` on the 0-255 scale, then clamp."""
    validate_image(img)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(img.shape) * (sigma / 255.0)
    return np.clip(img + noise, 0.0, 1.0)


def _streak_coverage(h: int, w: int, p0, direction, length: float, width: float) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of one line segment over an h x w grid."""
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs.astype(np.float64) - p0[0]
    py = ys.astype(np.float64) - p0[1]
    # project onto the segment, clamp to its extent
    t = np.clip(px * direction[0] + py * direction[1], 0.0, length)
    dx = px - t * direction[0]
    dy = py - t * direction[1]
    dist = np.hypot(dx, dy)
    return np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0)


def apply_rain(img: np.ndarray, rain: RainParams, seed: int) -> np.ndarray:
    """Alpha-composite bright anti-aliased streaks at seed-determined positions."""
    validate_image(img)
    rain.validate()
    if rain.num_streaks == 0:
        return img.copy()
    h, w = img.shape[1], img.shape[2]
    rng = np.random.default_rng(seed)
    theta = math.radians(rain.angle_deg)
    direction = (math.sin(theta), math.cos(theta))  # angle measured from vertical fall
    out = img.astype(np.float64).copy()
    for _ in range(rain.num_streaks):
        x0 = rng.uniform(0, w)
        y0 = rng.uniform(-rain.length_px, h)
        cov = _streak_coverage(h, w, (x0, y0), direction, float(rain.length_px), float(rain.width_px))
        alpha = cov * rain.intensity
        out = out * (1.0 - alpha) + alpha  # composite towards white
    return np.clip(out, 0.0, 1.0)


def apply_low_light(img: np.ndarray, light: LightParams) -> np.ndarray:
    """Darken as clamp(scale * img ** gamma), elementwise."""
    validate_image(img)
    light.validate()
    return np.clip(light.scale * np.power(img, light.gamma), 0.0, 1.0)


def synthesize_pair(clean: np.ndarray, spec: DegradationSpec):
    """Return (lq, hq): hq is the clean input, lq applies noise, then rain, then low light."""
    validate_image(clean)
    spec.validate()
    noise_seed, rain_seed = np.random.SeedSequence(spec.seed).generate_state(2, dtype=np.uint64)
    lq = clean.copy()
    if spec.noise_active:
        lq = apply_gaussian_noise(lq, spec.noise_sigma, int(noise_seed))
    if spec.rain_active:
        lq = apply_rain(lq, spec.rain, int(rain_seed))
    if spec.light_active:
        lq = apply_low_light(lq, spec.light)
    return lq, clean.copy()


# ---------------------------------------------------------------------------
# Descriptions
# ---------------------------------------------------------------------------

NOISE_LEVELS = ("low", "medium", "high")


def noise_level_bucket(sigma: float) -> str:
    if sigma <= 15:
        return "low"
    if sigma <= 25:
        return "medium"
    return "high"


def _light_clause(active: bool) -> str:
    return "The image is dark." if active else "The image is well lit."


def _rain_clause(active: bool) -> str:
    return "The image is degraded by rain streaks." if active else "No rain streaks detected."


def _noise_clause(active: bool, level: str = "high") -> str:
    if active:
        return f"The image has gaussian noise degradation and the noise level is {level}."
    return "No noise detected."


def describe(spec: DegradationSpec, mode: str = "gt", seed: int = 0, p: float = 0.3) -> DescriptionText:
    """Render the three-clause (light, rain, noise) description of a degradation record.

    mode="gt" states what was applied; mode="gf" flips every clause (an
    identity record has nothing to flip and keeps the no-degradation rendering);
    mode="noisy" corrupts each gt clause independently with probability p
    (dropped, level-shifted, or flipped), deterministically in `seed`.
    """
    spec.validate()
    level = noise_level_bucket(spec.noise_sigma) if spec.noise_active else None

    if mode == "gt":
        clauses = [
            _light_clause(spec.light_active),
            _rain_clause(spec.rain_active),
            _noise_clause(spec.noise_active, level or "high"),
        ]
        return DescriptionText(" ".join(clauses), "oracle_gt")

    if mode == "gf":
        if spec.is_identity:
            return DescriptionText(describe(spec, "gt").text, "oracle_gf")
        clauses = [
            _light_clause(not spec.light_active),
            _rain_clause(not spec.rain_active),
            _noise_clause(not spec.noise_active, "high"),
        ]
        return DescriptionText(" ".join(clauses), "oracle_gf")

    if mode == "noisy":
        if not (0.0 <= p <= 1.0):
            raise ValueError("corruption probability must lie in [0, 1]")
        rng = np.random.default_rng(seed)
        clauses = []
        for kind, active in (("light", spec.light_active), ("rain", spec.rain_active), ("noise", spec.noise_active)):
            corrupt = rng.random() < p
            ops = ["drop", "flip"]
            if kind == "noise" and active:
                ops.append("shift")
            op = str(rng.choice(ops)) if corrupt else "keep"
            if op == "drop":
                continue
            stated = (not active) if op == "flip" else active
            if kind == "light":
                clauses.append(_light_clause(stated))
            elif kind == "rain":
                clauses.append(_rain_clause(stated))
            else:
                shown = level or "high"
                if op == "shift":
                    shown = str(rng.choice([l for l in NOISE_LEVELS if l != level]))
                clauses.append(_noise_clause(stated, shown if stated else "high"))
        if not clauses:
            clauses.append("No degradation detected.")
        return DescriptionText(" ".join(clauses), "oracle_noisy")

    raise ValueError(f"unknown describe mode: {mode!r}")


# ---------------------------------------------------------------------------
# Procedural clean images
# ---------------------------------------------------------------------------

def _clean_gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    theta = rng.uniform(0, 2 * math.pi)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    ramp = xs * math.cos(theta) + ys * math.sin(theta)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]


def _clean_checker(rng: np.random.Generator, size: int) -> np.ndarray:
    cell = int(rng.integers(4, max(5, size // 4)))
    ys, xs = np.mgrid[0:size, 0:size]
    board = ((ys // cell + xs // cell) % 2).astype(np.float64)
    c0 = rng.uniform(0.0, 1.0, size=3)
    c1 = rng.uniform(0.0, 1.0, size=3)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * board[None]


def _clean_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    field = rng.standard_normal((3, size, size))
    sigma = rng.uniform(2.0, 6.0)
    smooth = np.stack([gaussian_filter(field[c], sigma) for c in range(3)])
    lo = smooth.min()
    hi = smooth.max()
    smooth = (smooth - lo) / max(hi - lo, 1e-9)
    a = rng.uniform(0.0, 0.2)
    b = rng.uniform(0.75, 1.0)
    return a + (b - a) * smooth

def _clean_base(rng: np.random.Generator, size: int) -> np.ndarray:
    fn = _clean_gradient if rng.random() < 0.5 else _clean_texture
    return np.clip(fn(rng, size), 0.0, 1.0)


def _clean_dim_scene(rng: np.random.Generator, size: int) -> np.ndarray:
    # genuinely dark content, drawn through the same transfer curve the
    # low-light operator uses; pixels alone cannot say whether to brighten
    gamma = rng.uniform(1.6, 2.6)
    scale = rng.uniform(0.25, 0.55)
    return scale * np.power(_clean_base(rng, size), gamma)


def _clean_grain(rng: np.random.Generator, size: int) -> np.ndarray:
    # grain baked into the scene at the amplitudes the noise operator uses
    sigma = rng.uniform(12.0, 55.0) / 255.0
    base = _clean_base(rng, size)
    return base + rng.standard_normal(base.shape) * sigma


def _clean_streaked(rng: np.random.Generator, size: int) -> np.ndarray:
    # bright slanted segments as content, same geometry ranges as rain sampling
    out = _clean_base(rng, size)
    theta = math.radians(rng.uniform(-25.0, 25.0))
    direction = (math.sin(theta), math.cos(theta))
    length = float(rng.integers(10, 24))
    width = float(rng.integers(2, 4))
    intensity = rng.uniform(0.55, 0.95)
    for _ in range(int(rng.integers(10, 28))):
        x0 = rng.uniform(0, size)
        y0 = rng.uniform(-length, size)
        cov = _streak_coverage(size, size, (x0, y0), direction, length, width)
        alpha = cov * intensity
        out = out * (1.0 - alpha) + alpha
    return out


_PLAIN_KINDS = (_clean_gradient, _clean_checker, _clean_texture)
_AMBIGUOUS_KINDS = (_clean_dim_scene, _clean_grain, _clean_streaked)


def make_clean_image(seed: int, size: int = 64) -> np.ndarray:
    """Procedural clean RGB image.

    One third of the corpus is plain content (gradient, checkerboard,
    filtered-noise texture); two thirds deliberately imitate a degradation
    (dim scene, grainy texture, streak pattern) so that the restoration
    target is ambiguous without the description: a restorer cannot tell
    content from degradation by pixels alone and must follow the text.
    """
    rng = np.random.default_rng(seed)
    kinds = _AMBIGUOUS_KINDS if rng.random() < 2.0 / 3.0 else _PLAIN_KINDS
    kind = kinds[int(rng.integers(0, len(kinds)))]
    return np.clip(kind(rng, size), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Dataset builder
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    lq_path: str
    hq_path: str
    spec: DegradationSpec


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    split: str = "train"
    global_seed: int = 0

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "global_seed": self.global_seed,
            "entries": [
                {"lq_path": e.lq_path, "hq_path": e.hq_path, "spec": e.spec.to_dict()}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        entries = [
            ManifestEntry(e["lq_path"], e["hq_path"], DegradationSpec.from_dict(e["spec"]))
            for e in d["entries"]
        ]
        return cls(entries=entries, split=d["split"], global_seed=int(d["global_seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        manifest = cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        for e in manifest.entries:
            for rel in (e.lq_path, e.hq_path):
                if not (path.parent / rel).exists():
                    raise FileNotFoundError(f"manifest references missing file: {rel}")
        return manifest


DEGRADATION_TYPES = ("noise", "rain", "low")


def _split_counts(n: int, mix: dict) -> dict:
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError("mix fractions must sum to 1")
    raw = {k: n * v for k, v in mix.items()}
    counts = {k: int(math.floor(v)) for k, v in raw.items()}
    leftovers = sorted(mix, key=lambda k: (counts[k] - raw[k], k))
    i = 0
    while sum(counts.values()) < n:
        counts[leftovers[i % len(leftovers)]] += 1
        i += 1
    return counts


def _sample_spec(kind: str, rng: np.random.Generator, seed: int, noise_index: int,
                 noise_levels=NOISE_TEST_LEVELS) -> DegradationSpec:
    if kind == "noise":
        sigma = float(noise_levels[noise_index % len(noise_levels)])
        return DegradationSpec(noise_sigma=sigma, seed=seed)
    if kind == "rain":
        rain = RainParams(
            num_streaks=int(rng.integers(10, 28)),
            angle_deg=float(rng.uniform(-25.0, 25.0)),
            length_px=int(rng.integers(10, 24)),
            width_px=int(rng.integers(2, 4)),
            intensity=float(rng.uniform(0.55, 0.95)),
        )
        return DegradationSpec(rain=rain, seed=seed)
    if kind == "low":
        light = LightParams(gamma=float(rng.uniform(1.6, 2.6)), scale=float(rng.uniform(0.25, 0.55)))
        return DegradationSpec(light=light, seed=seed)
    raise ValueError(f"unknown degradation type: {kind!r}")


def build_dataset(out_dir, n: int, mix: dict, seed: int, size: int = 64,
                  split: str = "train", noise_levels=NOISE_TEST_LEVELS) -> DatasetManifest:
    """Write n clean/degraded PNG pairs plus manifest.json; reproducible from seed.

    `mix` maps degradation type (noise/rain/low) to its fraction of entries.
    Noise entries cycle through `noise_levels` in equal proportion (the
    "paper-levels" preset is the default (15, 25, 50) triple).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for k in mix:
        if k not in DEGRADATION_TYPES:
            raise ValueError(f"unknown degradation type in mix: {k!r}")
    counts = _split_counts(n, mix)

    out = Path(out_dir)
    try:
        (out / "lq").mkdir(parents=True, exist_ok=True)
        (out / "hq").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc

    kinds: list = []
    for k in DEGRADATION_TYPES:
        kinds.extend([k] * counts.get(k, 0))

    master = np.random.SeedSequence(seed)
    entry_seeds = master.generate_state(2 * n, dtype=np.uint64)
    manifest = DatasetManifest(split=split, global_seed=seed)
    noise_index = 0
    for i, kind in enumerate(kinds):
        clean_seed = int(entry_seeds[2 * i])
        spec_seed = int(entry_seeds[2 * i + 1])
        rng = np.random.default_rng(spec_seed)
        spec = _sample_spec(kind, rng, spec_seed, noise_index, noise_levels)
        if kind == "noise":
            noise_index += 1
        clean = make_clean_image(clean_seed, size)
        lq, hq = synthesize_pair(clean, spec)
        lq_rel = f"lq/{i:06d}.png"
        hq_rel = f"hq/{i:06d}.png"
        save_png(lq, out / lq_rel)
        save_png(hq, out / hq_rel)
        manifest.entries.append(ManifestEntry(lq_rel, hq_rel, spec))
    manifest.save(out / "manifest.json")
    return manifest


def load_pair(manifest_path, entry: ManifestEntry):
    base = Path(manifest_path).parent
    return load_png(base / entry.lq_path), load_png(base / entry.hq_path)


def degradation_kind(spec: DegradationSpec) -> str:
    """Split label for reports: noise / rain / low / multi / none."""
    active = [k for k, a in (("noise", spec.noise_active), ("rain", spec.rain_active), ("low", spec.light_active)) if a]
    if not active:
        return "none"
    if len(active) > 1:
        return "multi"
    return active[0]
