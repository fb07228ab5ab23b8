"""Per-pixel exclusive claims."""

from __future__ import annotations

import threading

NO_OWNER = -1


class ClaimError(RuntimeError):
    pass


class PixelClaimTable:
    """Exclusive claim flags over a flat pixel grid.

    A claim is a test-and-set on a byte flag, made atomic by a small pool
    of striped mutexes. Callers acquire blocks in increasing index order,
    which rules out deadlock between claimants.
    """

    def __init__(self, npixels: int, stripes: int = 256):
        self._flags = bytearray(npixels)
        self._owner = [NO_OWNER] * npixels
        self._stripes = [threading.Lock() for _ in range(stripes)]
        self._nstripes = stripes

    def __len__(self) -> int:
        return len(self._flags)

    def try_claim(self, idx: int, owner: int) -> bool:
        with self._stripes[idx % self._nstripes]:
            if self._flags[idx]:
                return False
            self._flags[idx] = 1
            self._owner[idx] = owner
            return True

    def release(self, idx: int, owner: int) -> None:
        with self._stripes[idx % self._nstripes]:
            if not self._flags[idx] or self._owner[idx] != owner:
                raise ClaimError(
                    f"worker {owner} released pixel {idx} held by {self._owner[idx]}"
                )
            self._owner[idx] = NO_OWNER
            self._flags[idx] = 0

    def owner(self, idx: int) -> int:
        return self._owner[idx] if self._flags[idx] else NO_OWNER

    def held(self) -> int:
        """Number of currently claimed pixels."""
        return sum(self._flags)
