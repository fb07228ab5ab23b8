"""Compiled helpers for the parallel engine."""

import functools

import numba

from ..topology import nb_alpha_minus


@functools.lru_cache(maxsize=None)
def lowering_kernel(target):
    """Compiled ``try_lower(a, y, x, lam)`` bound to one target predicate.

    Binding the predicate at compile time keeps the per-call cost low;
    passing it as an argument makes numba re-type it on every call.
    """

    @numba.njit(nogil=True)
    def try_lower(a, y, x, lam):
        # caller holds claims on the whole 3x3 block
        if not target(a, y, x, lam):
            return False
        alpha = nb_alpha_minus(a, y, x)
        if alpha >= a[y, x]:
            return False
        a[y, x] = alpha
        return True

    return try_lower
