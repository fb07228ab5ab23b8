"""Synthetic test images and a 3x3 morphological gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .image import GrayImage

KINDS = ("constant", "isolated_peaks", "ridge", "binary_cross", "uniform_random")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    width: int
    height: int
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {KINDS}")
        if self.width < 3 or self.height < 3:
            raise ValueError(f"synthetic images need at least 3x3 pixels, got {self.width}x{self.height}")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parses ``kind:WxH[:key=value,...]``, e.g. ``uniform_random:64x64:seed=3``."""
        parts = text.split(":")
        if len(parts) < 2:
            raise ValueError(f"expected kind:WxH[:k=v,...], got {text!r}")
        try:
            w, h = (int(v) for v in parts[1].lower().split("x"))
        except ValueError:
            raise ValueError(f"bad size {parts[1]!r}") from None
        params = {}
        if len(parts) > 2 and parts[2]:
            for item in parts[2].split(","):
                key, _, val = item.partition("=")
                params[key.strip()] = int(val)
        return cls(parts[0], w, h, params)


def gen_synthetic(spec: SyntheticSpec) -> GrayImage:
    p = spec.params
    w, h = spec.width, spec.height
    if spec.kind == "constant":
        return GrayImage(np.full((h, w), p.get("level", 0), dtype=np.uint8))
    if spec.kind == "isolated_peaks":
        return _isolated_peaks(w, h, p.get("contrast", 10), p.get("count", 1),
                               p.get("seed", 0), p.get("background", 0))
    if spec.kind == "ridge":
        return _ridges(w, h, p.get("contrast", 10), p.get("count", 1), p.get("background", 0),
                       p.get("margin", 2))
    if spec.kind == "binary_cross":
        return _cross(w, h, p.get("thickness", max(1, min(w, h) // 8)))
    rng = np.random.default_rng(p.get("seed", 0))
    lo, hi = p.get("low", 0), p.get("high", 255)
    return GrayImage(rng.integers(lo, hi + 1, size=(h, w), dtype=np.int64))


def _isolated_peaks(w, h, contrast, count, seed, background) -> GrayImage:
    if not 0 <= background + contrast <= 255:
        raise ValueError("peak level out of range")
    a = np.full((h, w), background, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    # peaks need pairwise Chebyshev distance >= 3 so their 3x3 blocks are disjoint
    free = np.zeros((h, w), dtype=bool)
    free[1:h - 1, 1:w - 1] = True
    placed = 0
    while placed < count:
        cells = np.flatnonzero(free)
        if cells.size == 0:
            raise ValueError(f"cannot fit {count} isolated peaks in {w}x{h}")
        y, x = divmod(int(rng.choice(cells)), w)
        a[y, x] = background + contrast
        free[max(0, y - 2):y + 3, max(0, x - 2):x + 3] = False
        placed += 1
    return GrayImage(a)


def _ridges(w, h, contrast, count, background, margin) -> GrayImage:
    a = np.full((h, w), background, dtype=np.uint8)
    rows = np.linspace(1, h - 2, count + 2)[1:-1].round().astype(int) if count else []
    lo, hi = max(1, margin), min(w - 1, w - margin)
    for y in rows:
        a[y, lo:hi] = background + contrast
    return GrayImage(a)


def _cross(w, h, thickness) -> GrayImage:
    a = np.zeros((h, w), dtype=np.uint8)
    cy, cx = h // 2, w // 2
    t0 = thickness // 2
    a[max(1, cy - t0):cy - t0 + thickness, 1:w - 1] = 255
    a[1:h - 1, max(1, cx - t0):cx - t0 + thickness] = 255
    return GrayImage(a)


def gradient3x3(img: GrayImage) -> GrayImage:
    """Max minus min over each 3x3 window; border pixels are 0."""
    a = img.pixels
    out = np.zeros_like(a)
    if a.shape[0] >= 3 and a.shape[1] >= 3:
        g = ndimage.maximum_filter(a, size=3).astype(np.int16) - ndimage.minimum_filter(a, size=3)
        out[1:-1, 1:-1] = g[1:-1, 1:-1]
    return GrayImage(out)
