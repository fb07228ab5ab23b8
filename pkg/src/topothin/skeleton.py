"""Sequential lambda-skeleton.

Points are processed lowest graylevel first through a 256-level bucket
queue. Each bucket is an intrusive FIFO linked list threaded through a
per-pixel ``next`` array, so a pixel can sit in at most one bucket and
every queue operation is O(1).
"""

from __future__ import annotations

import numba
import numpy as np

from .image import GrayImage
from .topology import _DX, _DY, lambda_thinning_target, nb_alpha_minus, nb_find_targets

NLEVELS = 256

# slots of the small int64 ``state`` array
_MIN, _COUNT = 0, 1


@numba.njit(cache=True, nogil=True)
def _bq_push(head, tail, nxt, queued, state, idx, level):
    if queued[idx]:
        return False
    nxt[idx] = -1
    if tail[level] < 0:
        head[level] = idx
    else:
        nxt[tail[level]] = idx
    tail[level] = idx
    queued[idx] = True
    if level < state[_MIN]:
        state[_MIN] = level
    state[_COUNT] += 1
    return True


@numba.njit(cache=True, nogil=True)
def _bq_pop(head, tail, nxt, queued, state):
    """Pops the oldest entry of the lowest non-empty bucket; (-1, -1) if empty."""
    if state[_COUNT] == 0:
        return -1, -1
    level = state[_MIN]
    while head[level] < 0:
        level += 1
    state[_MIN] = level
    idx = head[level]
    head[level] = nxt[idx]
    if head[level] < 0:
        tail[level] = -1
    queued[idx] = False
    state[_COUNT] -= 1
    return idx, level


class LevelBucketQueue:
    """FIFO-per-graylevel priority queue of flat pixel indices."""

    def __init__(self, npixels: int, nlevels: int = NLEVELS):
        self.head = np.full(nlevels, -1, dtype=np.int64)
        self.tail = np.full(nlevels, -1, dtype=np.int64)
        self.nxt = np.full(npixels, -1, dtype=np.int64)
        self.queued = np.zeros(npixels, dtype=np.bool_)
        self.state = np.array([nlevels, 0], dtype=np.int64)
        self.nlevels = nlevels

    def push(self, idx: int, level: int) -> bool:
        """Inserts ``idx`` under ``level``; False if it is already queued."""
        if not 0 <= level < self.nlevels:
            raise ValueError(f"level {level} out of range")
        return bool(_bq_push(self.head, self.tail, self.nxt, self.queued, self.state, idx, level))

    def pop(self) -> tuple[int, int]:
        if not len(self):
            raise IndexError("pop from empty LevelBucketQueue")
        idx, level = _bq_pop(self.head, self.tail, self.nxt, self.queued, self.state)
        return int(idx), int(level)

    def __contains__(self, idx: int) -> bool:
        return bool(self.queued[idx])

    def __len__(self) -> int:
        return int(self.state[_COUNT])


@numba.njit(cache=True, nogil=True)
def _skeleton_kernel(a, lam, target):
    h, w = a.shape
    npix = h * w
    head = np.full(NLEVELS, -1, dtype=np.int64)
    tail = np.full(NLEVELS, -1, dtype=np.int64)
    nxt = np.full(npix, -1, dtype=np.int64)
    queued = np.zeros(npix, dtype=np.bool_)
    state = np.array([NLEVELS, 0], dtype=np.int64)
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            idx = y * w + x
            _bq_push(head, tail, nxt, queued, state, idx, a[y, x])
    lowerings = 0
    while True:
        idx, level = _bq_pop(head, tail, nxt, queued, state)
        if idx < 0:
            break
        y = idx // w
        x = idx % w
        if a[y, x] != level:
            # stale key: requeue under the current value
            _bq_push(head, tail, nxt, queued, state, idx, a[y, x])
            continue
        if not target(a, y, x, lam):
            continue
        alpha = nb_alpha_minus(a, y, x)
        if alpha >= a[y, x]:
            continue
        a[y, x] = alpha
        lowerings += 1
        _bq_push(head, tail, nxt, queued, state, idx, alpha)
        for b in range(8):
            yy = y + _DY[b]
            xx = x + _DX[b]
            if 0 < yy < h - 1 and 0 < xx < w - 1:
                _bq_push(head, tail, nxt, queued, state, yy * w + xx, a[yy, xx])
    return lowerings


def lambda_skeleton(F: GrayImage, lam: int, target=lambda_thinning_target) -> GrayImage:
    """Lowers minimal-value target points to their alpha- until none remain.

    ``target`` must be a numba-compiled predicate ``(array, y, x, lam)``;
    the default selects lambda-deletable points that are not lambda-end.
    """
    out, _ = lambda_skeleton_stats(F, lam, target)
    return out


def lambda_skeleton_stats(F: GrayImage, lam: int, target=lambda_thinning_target):
    """Like :func:`lambda_skeleton` but also returns the number of lowerings."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    a = F.pixels.copy()
    n = _skeleton_kernel(a, np.int64(lam), target)
    return GrayImage(a), int(n)


def find_targets(F: GrayImage | np.ndarray, lam: int, target=lambda_thinning_target) -> np.ndarray:
    """Flat indices of all interior target points."""
    a = F.pixels if isinstance(F, GrayImage) else F
    return nb_find_targets(a, np.int64(lam), target)


def count_targets(F: GrayImage | np.ndarray, lam: int, target=lambda_thinning_target) -> int:
    return int(find_targets(F, lam, target).size)


def is_stable(F: GrayImage | np.ndarray, lam: int, target=lambda_thinning_target) -> bool:
    return count_targets(F, lam, target) == 0
