"""Patch-level feature providers behind one contract.

Every provider turns a square raster into a P x P x D feature tensor. The
screening stage depends on providers only through that contract, so backbones
are configuration: the deterministic reference backend for tests and offline
runs, an HTTP backend for real encoders, and a cache wrapper for either.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import InvalidArgumentError, ProtocolError, TransportError
from .raster import RasterImage

log = logging.getLogger(__name__)

DARK_THRESHOLD = 0.5


@dataclass(frozen=True)
class ProviderId:
    """Identity and geometry of a feature provider."""

    name: str
    patch_grid: int  # P
    dim: int  # D
    input_side: int  # expected raster side in pixels

    def __post_init__(self):
        if self.patch_grid < 2:
            raise InvalidArgumentError("patch grid must be >= 2")
        if self.input_side % self.patch_grid != 0:
            raise InvalidArgumentError(
                f"input side {self.input_side} not divisible into a {self.patch_grid}-patch grid"
            )

    def cache_tag(self) -> str:
        return f"{self.name}-p{self.patch_grid}-d{self.dim}-s{self.input_side}"


def reference_embed(image: RasterImage, patch_grid: int) -> np.ndarray:
    """Deterministic 4-feature backend whose geometry is auditable by hand.

    Each of the P x P pixel blocks yields (mean intensity, vertical centroid
    of dark pixels, dark-pixel fraction, vertical spread of dark pixels).
    Centroid and spread are normalized by the block side minus one; a block
    with no dark pixels gets centroid 0.5 and spread 0.
    """
    side = image.height
    if image.width != side:
        raise InvalidArgumentError("reference backend expects square rasters")
    if side % patch_grid != 0:
        raise InvalidArgumentError(f"image side {side} not divisible by patch grid {patch_grid}")
    block = side // patch_grid
    px = image.pixels
    out = np.zeros((patch_grid, patch_grid, 4), dtype=np.float64)
    row_idx = np.arange(block, dtype=np.float64)
    denom = max(block - 1, 1)
    for i in range(patch_grid):
        for j in range(patch_grid):
            tile = px[i * block : (i + 1) * block, j * block : (j + 1) * block]
            dark = tile < DARK_THRESHOLD
            n_dark = int(dark.sum())
            mean_intensity = float(tile.mean())
            fraction = n_dark / (block * block)
            if n_dark == 0:
                centroid, spread = 0.5, 0.0
            else:
                rows = np.repeat(row_idx, block)[dark.ravel()]
                centroid = float(rows.mean()) / denom
                spread = float(rows.std()) / denom
            out[i, j] = (mean_intensity, centroid, fraction, spread)
    return out


class ReferenceProvider:
    """In-process provider wrapping :func:`reference_embed`."""

    def __init__(self, patch_grid: int = 14, input_side: int = 224):
        self.id = ProviderId("reference", patch_grid, 4, input_side)

    def embed(self, image: RasterImage) -> np.ndarray:
        if image.height != self.id.input_side or image.width != self.id.input_side:
            raise InvalidArgumentError(
                f"image side {image.height}x{image.width} != provider input side {self.id.input_side}"
            )
        return reference_embed(image, self.id.patch_grid)


class RemoteProvider:
    """HTTP provider speaking the POST /embed wire contract.

    Request: {"image": base64 PNG, "provider": name}. Reply: {"p", "d",
    "data"} with data a row-major float32 array of length p*p*d. A reply
    whose geometry disagrees with the advertised ProviderId is a protocol
    error, not a silent reshape.
    """

    def __init__(
        self,
        base_url: str,
        provider_id: ProviderId,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.25,
    ):
        self.base_url = base_url.rstrip("/")
        self.id = provider_id
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def embed(self, image: RasterImage) -> np.ndarray:
        if image.height != self.id.input_side or image.width != self.id.input_side:
            raise InvalidArgumentError(
                f"image side {image.height}x{image.width} != provider input side {self.id.input_side}"
            )
        payload = {
            "image": base64.b64encode(image.to_png_bytes()).decode("ascii"),
            "provider": self.id.name,
        }
        reply = self._post(payload)
        return self._decode(reply)

    def _post(self, payload: dict) -> dict:
        url = f"{self.base_url}/embed"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"embed endpoint returned {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError:
                raise ProtocolError("embed endpoint returned non-JSON body") from None
        raise TransportError(f"embed endpoint unreachable after {self.max_retries + 1} attempts: {last_error}",
                             retries=self.max_retries)

    def _decode(self, reply: dict) -> np.ndarray:
        try:
            p, d = int(reply["p"]), int(reply["d"])
            data = reply["data"]
        except (KeyError, TypeError, ValueError):
            raise ProtocolError("embed reply missing p/d/data fields") from None
        if p != self.id.patch_grid or d != self.id.dim:
            raise ProtocolError(
                f"embed reply geometry ({p}, {d}) != advertised ({self.id.patch_grid}, {self.id.dim})"
            )
        arr = np.asarray(data, dtype=np.float32)
        if arr.size != p * p * d:
            raise ProtocolError(f"embed reply data length {arr.size} != p*p*d = {p * p * d}")
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("embed reply contains non-finite values")
        return arr.reshape(p, p, d).astype(np.float64)


class FeatureCache:
    """Content-addressed on-disk store of feature tensors.

    Keys hash the raster pixels plus the provider identity, so a re-rendered
    but identical window hits the cache. Corrupt entries degrade to a miss.
    """

    def __init__(self, root):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, image: RasterImage, provider_id: ProviderId) -> str:
        h = hashlib.sha256()
        h.update(provider_id.cache_tag().encode())
        h.update(image.content_key())
        return os.path.join(self.root, h.hexdigest() + ".npy")

    def get(self, image: RasterImage, provider_id: ProviderId) -> np.ndarray | None:
        path = self._path(image, provider_id)
        if not os.path.exists(path):
            return None
        try:
            arr = np.load(path)
        except Exception as exc:
            log.warning("cache entry %s unreadable (%s); treating as miss", path, exc)
            return None
        if arr.ndim != 3:
            log.warning("cache entry %s has wrong rank; treating as miss", path)
            return None
        return arr

    def put(self, image: RasterImage, provider_id: ProviderId, features: np.ndarray) -> None:
        path = self._path(image, provider_id)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.save(fh, features)
            os.replace(tmp, path)
        except Exception:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


class CachedProvider:
    """Wrap any provider with a FeatureCache; remote inference is the cost center."""

    def __init__(self, inner, cache: FeatureCache):
        self.inner = inner
        self.cache = cache
        self.id = inner.id

    def embed(self, image: RasterImage) -> np.ndarray:
        hit = self.cache.get(image, self.id)
        if hit is not None:
            return hit
        features = self.inner.embed(image)
        self.cache.put(image, self.id, features)
        return features


def check_provider_contract(provider, rng: np.random.Generator | None = None) -> None:
    """Assert a provider honors the feature-map contract; raises on violation.

    Used both against the in-process backends and against live /embed
    services, so conformance is one shared check rather than parallel test
    code.
    """
    rng = rng or np.random.default_rng(0)
    side = provider.id.input_side
    flat = RasterImage(np.ones((side, side)))
    f1 = provider.embed(flat)
    expected = (provider.id.patch_grid, provider.id.patch_grid, provider.id.dim)
    if f1.shape != expected:
        raise ProtocolError(f"provider returned shape {f1.shape}, expected {expected}")
    if not np.all(np.isfinite(f1)):
        raise ProtocolError("provider returned non-finite features")
    f2 = provider.embed(flat)
    if not np.array_equal(f1, f2):
        raise ProtocolError("provider is not deterministic on identical inputs")
    # a second, structured image must produce the advertised geometry too
    px = np.ones((side, side))
    px[side // 2, :] = 0.0
    f3 = provider.embed(RasterImage(px))
    if f3.shape != expected:
        raise ProtocolError(f"provider returned shape {f3.shape} on line image, expected {expected}")
