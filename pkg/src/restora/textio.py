"""Descriptions in, text features out.

The default encoder is fully deterministic and offline: tokens are hashed to
stable ids (CRC-32 of the lowercased token, offset past the sentinel ids) and
each id seeds a PCG64 draw of a unit-norm embedding row; a fixed sinusoidal
position vector (scaled to norm 0.5) is added. Remote adapters with the same
output contract can replace either the description provider (an MLLM endpoint)
or the row encoder (a CLIP-style endpoint).
"""

from __future__ import annotations

import base64
import re
import zlib
from dataclasses import dataclass

import numpy as np

from .degrade import DegradationSpec, DescriptionText, describe
from .images import png_bytes

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
_WORD = re.compile(r"[a-z0-9]+")


class TransportError(RuntimeError):
    """A remote adapter could not produce a response."""


def tokenize(text: str, seq_len: int = 77) -> list:
    """Lowercase, split on whitespace/punctuation, hash words to stable 32-bit ids.

    Word id = 3 + crc32(word) mod (2**32 - 3), so ids never collide with the
    pad/begin/end sentinels (0/1/2). The result always has length `seq_len`:
    begin sentinel, at most seq_len - 2 word ids, end sentinel, then padding.
    """
    if not text:
        raise ValueError("cannot tokenize empty text")
    words = _WORD.findall(text.lower())
    ids = [3 + (zlib.crc32(w.encode("utf-8")) % (2 ** 32 - 3)) for w in words]
    ids = ids[: seq_len - 2]
    seq = [BOS_ID] + ids + [EOS_ID]
    seq.extend([PAD_ID] * (seq_len - len(seq)))
    return seq


@dataclass
class TextFeature:
    """L x D token-embedding matrix plus a mask marking real tokens."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.mask.shape != (self.data.shape[0],):
            raise ValueError("TextFeature needs (L, D) data and an (L,) mask")
        if not np.isfinite(self.data).all():
            raise ValueError("TextFeature contains non-finite values")


def _position_table(seq_len: int, dim: int) -> np.ndarray:
    # classic sin/cos interleave; every row has norm sqrt(dim/2), rescaled to 0.5
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    j = np.arange(0, dim, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, j / dim)
    table = np.zeros((seq_len, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : table[:, 1::2].shape[1]])
    return table * (0.5 / np.sqrt(dim / 2.0))


def _token_embedding(token_id: int, dim: int) -> np.ndarray:
    v = np.random.default_rng(token_id).standard_normal(dim)
    return v / np.linalg.norm(v)


class HashTextEncoder:
    """Deterministic stand-in encoder with a fixed (seq_len, dim) contract."""

    def __init__(self, seq_len: int = 77, dim: int = 512):
        self.seq_len = seq_len
        self.dim = dim
        self._positions = _position_table(seq_len, dim)
        self._cache: dict = {}

    def encode(self, text: str) -> TextFeature:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        ids = tokenize(text, self.seq_len)
        data = np.zeros((self.seq_len, self.dim), dtype=np.float64)
        mask = np.zeros(self.seq_len, dtype=bool)
        for i, tid in enumerate(ids):
            if tid == PAD_ID:
                continue
            data[i] = _token_embedding(tid, self.dim) + self._positions[i]
            mask[i] = True
        feature = TextFeature(data, mask)
        if len(self._cache) < 4096:
            self._cache[text] = feature
        return feature


def encode_text(text: str, seq_len: int = 77, dim: int = 512) -> TextFeature:
    """One-shot deterministic encoding at the default contract shape."""
    return HashTextEncoder(seq_len, dim).encode(text)


class RemoteTextEncoder:
    """CLIP-style remote row encoder: POST {text} -> {rows: L x D}."""

    def __init__(self, endpoint: str, seq_len: int = 77, dim: int = 512, timeout: float = 10.0):
        self.endpoint = endpoint
        self.seq_len = seq_len
        self.dim = dim
        self.timeout = timeout

    def encode(self, text: str) -> TextFeature:
        import httpx

        if not text:
            raise ValueError("cannot encode empty text")
        try:
            resp = httpx.post(self.endpoint, json={"text": text}, timeout=self.timeout)
            resp.raise_for_status()
            rows = np.asarray(resp.json()["rows"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise TransportError(f"remote text encoder failed: {exc}") from exc
        if rows.shape != (self.seq_len, self.dim):
            raise TransportError(
                f"remote encoder returned shape {rows.shape}, expected {(self.seq_len, self.dim)}"
            )
        mask = np.any(rows != 0.0, axis=1)
        return TextFeature(rows, mask)


# ---------------------------------------------------------------------------
# Description providers
# ---------------------------------------------------------------------------

class OracleProvider:
    """Renders the ground-truth description from the image's degradation record."""

    provenance = "oracle"

    def __init__(self, mode: str = "gt", p: float = 0.3):
        self.mode = mode
        self.p = p

    def describe(self, img, prompt: str, spec: DegradationSpec = None, seed: int = 0) -> DescriptionText:
        if spec is None:
            raise ValueError("oracle provider needs the degradation spec for this image")
        return describe(spec, self.mode, seed=seed, p=self.p)


class RemoteMLLMProvider:
    """HTTP adapter: POST {image_b64, prompt} -> {text}."""

    provenance = "mllm"

    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def describe(self, img, prompt: str, spec: DegradationSpec = None, seed: int = 0) -> DescriptionText:
        import httpx

        payload = {
            "image_b64": base64.b64encode(png_bytes(img)).decode("ascii"),
            "prompt": prompt,
        }
        try:
            resp = httpx.post(self.endpoint, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            text = resp.json()["text"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise TransportError(f"remote description provider failed: {exc}") from exc
        if not text:
            raise TransportError("remote description provider returned empty text")
        return DescriptionText(text, "mllm")


def provider_describe(provider, img, prompt: str, spec: DegradationSpec = None, seed: int = 0) -> DescriptionText:
    """Uniform entry point over oracle and remote providers."""
    return provider.describe(img, prompt, spec=spec, seed=seed)


DEFAULT_PROMPT = (
    "Is the image dark or well lit? Are there rain streaks? "
    "Is there gaussian noise, and how strong is it?"
)
