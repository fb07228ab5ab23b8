"""Point characterization on 3x3 neighborhoods of a grayscale image.

Foreground sections use 8-adjacency and their complements 4-adjacency.

Neighbor masks are 8-bit integers. Bit ``i`` refers to the ring
neighbor at offset ``(dx, dy)``::

    bit0 (-1,-1)   bit1 ( 0,-1)   bit2 ( 1,-1)
    bit3 (-1, 0)       center     bit4 ( 1, 0)
    bit5 (-1, 1)   bit6 ( 0, 1)   bit7 ( 1, 1)

i.e. row-major order with the center skipped. The 256-entry lookup
tables ``T_LUT`` and ``TBAR_LUT`` are indexed by this convention.

Every characterization requires an interior point: border pixels act
as neighbors only.

Two implementations live here. The public functions taking
``(GrayImage, Point)`` are plain Python and easy to audit. The
``_nb_*`` functions are numba-compiled and work on raw uint8 arrays;
the engines use those. Tests check that both agree.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .image import GrayImage, Point

# (dx, dy) per mask bit
OFFSETS: tuple[tuple[int, int], ...] = (
    (-1, -1), (0, -1), (1, -1),
    (-1, 0), (1, 0),
    (-1, 1), (0, 1), (1, 1),
)
_DX = np.array([o[0] for o in OFFSETS], dtype=np.int64)
_DY = np.array([o[1] for o in OFFSETS], dtype=np.int64)

# Ring bits in clockwise order starting at the upper-left corner.
RING = (0, 1, 2, 4, 7, 6, 5, 3)
_RING = np.array(RING, dtype=np.int64)
# 4-neighbors of the center in clockwise order (N, E, S, W) and the corner
# lying between edge i and edge i+1.
_EDGES = (1, 4, 6, 3)
_CORNERS = (2, 7, 5, 0)
EDGE_BITS = frozenset(_EDGES)
_IS_EDGE = np.array([b in EDGE_BITS for b in range(8)], dtype=np.bool_)

FULL = 0xFF
N_ADJ = 8
N_BAR_ADJ = 4


class NotInteriorError(ValueError):
    """Raised when a characterization is requested at a border pixel."""


@dataclass(frozen=True)
class PointClass:
    t: int
    t_bar: int
    t_plus: int
    t_plusplus: int
    t_minus: int
    alpha_minus: int
    destructible: bool
    peak: bool
    divergence_k: int
    end_point: bool


def _check_interior(F: GrayImage, p: Point) -> None:
    if not F.is_interior(p):
        raise NotInteriorError(
            f"point {tuple(p)} is not interior to a {F.width}x{F.height} image"
        )


# --- binary connectivity numbers ---------------------------------------


def t_binary(m: int) -> int:
    """Number of 8-components of the set ring neighbors."""
    edge_set = [bool(m >> e & 1) for e in _EDGES]
    if all(edge_set):
        runs = 1
    else:
        runs = sum(1 for i in range(4) if edge_set[i] and not edge_set[i - 1])
    lone_corners = sum(
        1
        for i, c in enumerate(_CORNERS)
        if m >> c & 1 and not edge_set[i] and not edge_set[(i + 1) % 4]
    )
    return runs + lone_corners


def t_bar_binary(m: int) -> int:
    """Number of 4-components of the unset ring neighbors that touch a 4-neighbor."""
    unset = [not (m >> b & 1) for b in RING]
    if all(unset):
        return 1
    start = unset.index(False)
    count = 0
    in_run = touches = False
    for step in range(1, 9):
        i = (start + step) % 8
        if unset[i]:
            in_run = True
            touches = touches or RING[i] in EDGE_BITS
        else:
            if in_run and touches:
                count += 1
            in_run = touches = False
    return count


def build_connectivity_luts() -> tuple[np.ndarray, np.ndarray]:
    t = np.array([t_binary(m) for m in range(256)], dtype=np.uint8)
    tb = np.array([t_bar_binary(m) for m in range(256)], dtype=np.uint8)
    t.setflags(write=False)
    tb.setflags(write=False)
    return t, tb


T_LUT, TBAR_LUT = build_connectivity_luts()


def is_simple(m: int) -> bool:
    return T_LUT[m] == 1 and TBAR_LUT[m] == 1


# --- grayscale characterization (reference implementation) -------------


def neighbor_mask(
    F: GrayImage, p: Point, predicate: Callable[[int, int], bool]
) -> int:
    """Mask of ring neighbors y with ``predicate(F(y), F(p))`` true."""
    _check_interior(F, p)
    center = F[p]
    m = 0
    for bit, (dx, dy) in enumerate(OFFSETS):
        if predicate(int(F.pixels[p[1] + dy, p[0] + dx]), center):
            m |= 1 << bit
    return m


def _ring_values(F: GrayImage, p: Point) -> list[int]:
    return [int(F.pixels[p[1] + dy, p[0] + dx]) for dx, dy in OFFSETS]


def alpha_minus(F: GrayImage, p: Point) -> int:
    _check_interior(F, p)
    center = F[p]
    lower = [v for v in _ring_values(F, p) if v < center]
    return max(lower) if lower else center


def grayscale_connectivity(F: GrayImage, p: Point) -> tuple[int, int, int]:
    """(T+, T++, T-) of an interior point."""
    plus = neighbor_mask(F, p, operator.ge)
    plusplus = neighbor_mask(F, p, operator.gt)
    # the strictly-lower set is the ring complement of the upper one
    return int(T_LUT[plus]), int(T_LUT[plusplus]), int(TBAR_LUT[plus])


def lower_component_maxima(F: GrayImage, p: Point) -> list[int]:
    """Max graylevel of each counted 4-component of the strictly-lower ring set.

    Only components containing a 4-neighbor of ``p`` are returned, so the
    length of the result equals T-.
    """
    _check_interior(F, p)
    center = F[p]
    vals = _ring_values(F, p)
    lower = [vals[b] < center for b in RING]
    if all(lower):
        return [max(vals)]
    start = lower.index(False)
    out = []
    run: list[int] = []
    touches = False
    for step in range(1, 9):
        i = (start + step) % 8
        if lower[i]:
            run.append(vals[RING[i]])
            touches = touches or RING[i] in EDGE_BITS
        else:
            if run and touches:
                out.append(max(run))
            run, touches = [], False
    return out


def is_destructible(F: GrayImage, p: Point) -> bool:
    return is_simple(neighbor_mask(F, p, operator.ge))


def is_end_point(F: GrayImage, p: Point) -> bool:
    return bin(neighbor_mask(F, p, operator.ge)).count("1") == 1


def classify(F: GrayImage, p: Point) -> PointClass:
    _check_interior(F, p)
    a = F.pixels
    t_plus, t_pp, t_minus, alpha, _, n_section = _nb_characterize(a, p[1], p[0], 0)
    t_plus = int(t_plus)
    t_minus = int(t_minus)
    return PointClass(
        t=t_plus,
        t_bar=t_minus,
        t_plus=t_plus,
        t_plusplus=int(t_pp),
        t_minus=t_minus,
        alpha_minus=int(alpha),
        destructible=t_plus == 1 and t_minus == 1,
        peak=t_plus == 0,
        divergence_k=t_minus,
        end_point=int(n_section) == 1,
    )


def is_lambda_destructible(F: GrayImage, p: Point, lam: int) -> bool:
    _check_lambda(lam)
    if is_destructible(F, p):
        return True
    maxima = lower_component_maxima(F, p)
    k = len(maxima)
    if k <= 1:
        return False
    center = F[p]
    return sum(1 for v in maxima if center - v <= lam) >= k - 1


def is_lambda_end(F: GrayImage, p: Point, lam: int) -> bool:
    _check_lambda(lam)
    return is_end_point(F, p) and F[p] - alpha_minus(F, p) > lam


def is_peak(F: GrayImage, p: Point) -> bool:
    return neighbor_mask(F, p, operator.ge) == 0


def is_lambda_deletable(F: GrayImage, p: Point, lam: int) -> bool:
    if is_lambda_destructible(F, p, lam):
        return True
    return is_peak(F, p) and F[p] - alpha_minus(F, p) <= lam


def is_thinning_target(F: GrayImage, p: Point, lam: int) -> bool:
    """lambda-deletable and not lambda-end."""
    return is_lambda_deletable(F, p, lam) and not is_lambda_end(F, p, lam)


def _check_lambda(lam: int) -> None:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")


# --- compiled kernels ----------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _nb_masks(a, y, x):
    c = np.int64(a[y, x])
    plus = 0
    plusplus = 0
    alpha = np.int64(-1)
    for b in range(8):
        v = np.int64(a[y + _DY[b], x + _DX[b]])
        if v >= c:
            plus |= 1 << b
            if v > c:
                plusplus |= 1 << b
        elif v > alpha:
            alpha = v
    if alpha < 0:
        alpha = c
    return plus, plusplus, alpha


@numba.njit(cache=True, nogil=True)
def _nb_characterize(a, y, x, lam):
    """Returns (T+, T++, T-, alpha-, #lower comps within lam, #section neighbors)."""
    c = np.int64(a[y, x])
    plus, plusplus, alpha = _nb_masks(a, y, x)
    t_plus = T_LUT[plus]
    t_minus = TBAR_LUT[plus]
    n_section = 0
    for b in range(8):
        n_section += (plus >> b) & 1
    within = 0
    if t_minus > 1:
        # walk the ring from a non-lower cell; each maximal run of lower
        # cells touching a 4-neighbor is one counted component
        start = 0
        for i in range(8):
            if (plus >> _RING[i]) & 1:
                start = i
                break
        run_max = -1
        touches = False
        for step in range(1, 9):
            i = (start + step) % 8
            b = _RING[i]
            if (plus >> b) & 1:
                if run_max >= 0 and touches and c - run_max <= lam:
                    within += 1
                run_max = -1
                touches = False
            else:
                v = np.int64(a[y + _DY[b], x + _DX[b]])
                if v > run_max:
                    run_max = v
                if _IS_EDGE[b]:
                    touches = True
    return t_plus, T_LUT[plusplus], t_minus, alpha, within, n_section


@numba.njit(cache=True, nogil=True)
def lambda_thinning_target(a, y, x, lam):
    """Default target predicate: lambda-deletable and not lambda-end.

    Works on a raw uint8 array; ``(y, x)`` must be interior. Custom
    predicates for the engines must be numba-compiled functions with this
    same signature and must only read the 3x3 block around ``(y, x)``.
    """
    t_plus, _, t_minus, alpha, within, n_section = _nb_characterize(a, y, x, lam)
    contrast = np.int64(a[y, x]) - np.int64(alpha)
    if n_section == 1 and contrast > lam:
        return False  # lambda-end
    if t_plus == 1 and t_minus == 1:
        return True  # destructible
    if t_minus > 1 and within >= t_minus - 1:
        return True  # lambda-destructible through divergence
    return t_plus == 0 and contrast <= lam


@numba.njit(cache=True, nogil=True)
def destructible_target(a, y, x, lam):
    """Plain homotopic thinning: destructible and not an end point."""
    plus, _, _ = _nb_masks(a, y, x)
    n = 0
    for b in range(8):
        n += (plus >> b) & 1
    return n != 1 and T_LUT[plus] == 1 and TBAR_LUT[plus] == 1


@numba.njit(cache=True, nogil=True)
def nb_alpha_minus(a, y, x):
    c = np.int64(a[y, x])
    alpha = np.int64(-1)
    for b in range(8):
        v = np.int64(a[y + _DY[b], x + _DX[b]])
        if v < c and v > alpha:
            alpha = v
    if alpha < 0:
        return c
    return alpha


@numba.njit(cache=True, nogil=True)
def nb_scan_targets(a, idxs, lam, target):
    """Subset of flat interior indices that satisfy ``target`` right now."""
    w = a.shape[1]
    out = np.empty(idxs.size, dtype=np.int64)
    n = 0
    for i in range(idxs.size):
        idx = idxs[i]
        if target(a, idx // w, idx % w, lam):
            out[n] = idx
            n += 1
    return out[:n]


@numba.njit(cache=True, nogil=True)
def nb_find_targets(a, lam, target):
    h, w = a.shape
    out = np.empty(max(h - 2, 0) * max(w - 2, 0), dtype=np.int64)
    n = 0
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            if target(a, y, x, lam):
                out[n] = y * w + x
                n += 1
    return out[:n]
