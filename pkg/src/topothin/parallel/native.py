"""Compiled worker pass that runs without the GIL.

Claims live in an int32 array (0 = free, otherwise the owner's tag) and
are taken with an atomic compare-and-swap, in row-major order like the
Python claim table. A thread that fails to claim spins and calls
``sched_yield`` after every ``SPIN_LIMIT`` failures.

The kernel does not touch the shared queues. It fills caller-supplied
buffers with the neighbors to push, the rejected candidates and the
lowered pixels, and the Python side pushes them in bulk after each
chunk. ``sched_yield`` is resolved from the C library at link time, so
this backend needs a POSIX system.
"""

from __future__ import annotations

import numba
import numpy as np
from llvmlite import ir
from numba import types
from numba.core import cgutils
from numba.extending import intrinsic

from ..topology import _DX, _DY, nb_alpha_minus
from .queues import SPIN_LIMIT

FREE = 0
# layout of the counts array filled by native_pass
N_PUSH, N_REJECT, N_TOUCHED, N_INVALID, N_SPINS = range(5)


@intrinsic
def _cas_i32(typingctx, ary, idx, expected, desired):
    """Atomic compare-and-swap on ``ary[idx]``; returns the previous value."""
    sig = types.int32(ary, idx, types.int32, types.int32)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        arr = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, arr, [args[1]])
        res = builder.cmpxchg(ptr, args[2], args[3], "seq_cst", "seq_cst")
        return builder.extract_value(res, 0)

    return sig, codegen


@intrinsic
def _xchg_i32(typingctx, ary, idx, value):
    """Atomic exchange on ``ary[idx]``; returns the previous value."""
    sig = types.int32(ary, idx, types.int32)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        arr = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(context, builder, aryty, arr, [args[1]])
        return builder.atomic_rmw("xchg", ptr, args[2], "seq_cst")

    return sig, codegen


@intrinsic
def _sched_yield(typingctx):
    sig = types.int32()

    def codegen(context, builder, signature, args):
        fnty = ir.FunctionType(ir.IntType(32), [])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "sched_yield")
        return builder.call(fn, [])

    return sig, codegen


def new_claims(npixels: int) -> np.ndarray:
    return np.zeros(npixels, dtype=np.int32)


@numba.njit(cache=True, nogil=True)
def try_claim(claims, idx, tag):
    return _cas_i32(claims, idx, np.int32(FREE), np.int32(tag)) == FREE


@numba.njit(cache=True, nogil=True)
def release(claims, idx, tag):
    """Frees ``idx``; returns False (and leaves it alone) if ``tag`` did not hold it."""
    if _cas_i32(claims, idx, np.int32(tag), np.int32(FREE)) != tag:
        return False
    return True


@numba.njit(cache=True, nogil=True)
def _claim_block(claims, idx, w, tag):
    spins = 0
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            i = idx + dy * w + dx
            while _cas_i32(claims, i, np.int32(FREE), np.int32(tag)) != FREE:
                spins += 1
                if spins % SPIN_LIMIT == 0:
                    _sched_yield()
    return spins


@numba.njit(cache=True, nogil=True)
def _release_block(claims, idx, w):
    for dy in range(-1, 2):
        for dx in range(-1, 2):
            _xchg_i32(claims, idx + dy * w + dx, np.int32(FREE))


@numba.njit(cache=True, nogil=True)
def native_pass(a, cands, lam, target, claims, tag, pushes, rejects, touched, counts):
    """Characterizes and lowers ``cands``; see the module docstring for the buffers.

    ``pushes`` needs room for 8 entries per candidate, ``rejects`` and
    ``touched`` for one each.
    """
    h, w = a.shape
    npush = 0
    nrej = 0
    ntouch = 0
    invalid = 0
    spins = 0
    for c in range(cands.size):
        idx = cands[c]
        y = idx // w
        x = idx % w
        if not target(a, y, x, lam):
            rejects[nrej] = idx
            nrej += 1
            continue
        spins += _claim_block(claims, idx, w, tag)
        ok = target(a, y, x, lam)
        if ok:
            alpha = nb_alpha_minus(a, y, x)
            if alpha < a[y, x]:
                a[y, x] = alpha
            else:
                ok = False
        _release_block(claims, idx, w)
        if not ok:
            invalid += 1
            rejects[nrej] = idx
            nrej += 1
            continue
        touched[ntouch] = idx
        ntouch += 1
        for b in range(8):
            yy = y + _DY[b]
            xx = x + _DX[b]
            if 0 < yy < h - 1 and 0 < xx < w - 1:
                pushes[npush] = yy * w + xx
                npush += 1
    counts[N_PUSH] = npush
    counts[N_REJECT] = nrej
    counts[N_TOUCHED] = ntouch
    counts[N_INVALID] = invalid
    counts[N_SPINS] = spins
