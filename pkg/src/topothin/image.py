"""Grayscale image container and point addressing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np


class Point(NamedTuple):
    x: int  # column
    y: int  # row


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image stored as a (height, width) uint8 array.

    The array is copied on construction and marked read-only, so a
    GrayImage can be shared freely between threads.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("graylevels must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
                raise ValueError("graylevels must be integers")
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_values(cls, width: int, height: int, values: Iterable[int]) -> "GrayImage":
        vals = np.fromiter((int(v) for v in values), dtype=np.int64)
        if vals.size != width * height:
            raise ValueError(
                f"{vals.size} values given for a {width}x{height} image"
            )
        return cls(vals.reshape(height, width))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def values(self) -> tuple[int, ...]:
        """Row-major graylevels."""
        return tuple(int(v) for v in self.pixels.ravel())

    def __getitem__(self, p: Point) -> int:
        return int(self.pixels[p[1], p[0]])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self) -> int:
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self) -> str:
        return f"GrayImage({self.width}x{self.height})"

    def is_interior(self, p: Point) -> bool:
        return 0 < p[0] < self.width - 1 and 0 < p[1] < self.height - 1

    def interior_points(self) -> Iterable[Point]:
        for y in range(1, self.height - 1):
            for x in range(1, self.width - 1):
                yield Point(x, y)

    def hamming(self, other: "GrayImage") -> int:
        """Number of pixels whose values differ."""
        if self.pixels.shape != other.pixels.shape:
            raise ValueError("images differ in size")
        return int(np.count_nonzero(self.pixels != other.pixels))
