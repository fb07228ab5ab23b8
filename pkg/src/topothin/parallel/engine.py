"""Dynamically parallel lambda-skeleton (split, distribute, merge).

One round works as follows:

1. The interior rows are split into ``n`` bands (zones), one per worker.
2. Workers run concurrently. Each one characterizes its candidates and
   lowers the targets it finds. It pushes the interior 8-neighbors of
   every lowered pixel into a queue it shares with exactly one other
   worker. Non-targets go into the worker's private reject set.
3. Queues are handed out first-come, first-served within a generation.
   Generation 0 pairs workers in launch order, so adjacent zones share
   a queue. When both producers of a queue have finished, they merge
   into a successor. The successor's candidates are the drained queue
   and its search space is the union of both parents' zones. It then
   joins the next generation, which has half as many workers (rounded
   up), and so on until a single final worker is left.
4. The round ends when the final worker's own queue has been drained.
   The next round's candidates are whatever is still pending plus the
   lowered points and their neighborhoods.

The run stops once the final worker of a round lowered nothing and a
full rescan finds no target left.

Pixels are lowered only through :func:`commit_steps`. It claims the
3x3 block around the pixel in row-major order and re-checks the target
predicate under those claims before writing. Every lowering is
therefore valid at the moment it happens, and any run is equivalent to
some serial order of single lowerings. The parallel output need not
match the sequential engine pixel for pixel.

Backends
--------
Two implementations of the worker pass exist. The ``python`` backend
runs the step generators below; it is the instrumented reference and
the only one that accepts a schedule hook. The ``native`` backend
(:mod:`.native`) does the same characterize, claim, re-check and lower
sequence in compiled code without holding the GIL, and pushes
neighbors to the shared queue in bulk after each chunk of candidates.
It is the default. Passing a hook selects the python backend.

Step generators
---------------
``commit_steps`` and ``worker_steps`` are generators. When ``trace`` is
on they yield at every claim attempt, commit, push and scan. With
``trace`` off they yield only while a claim is blocked. Production code
drives them with :func:`drive`, which spins on blocked claims and
passes every other step to an optional hook. Tests can drive them one
step at a time to force specific interleavings.
"""

from __future__ import annotations

import itertools
import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from ..image import GrayImage
from ..skeleton import find_targets
from ..topology import lambda_thinning_target, nb_scan_targets
from ._kernels import lowering_kernel
from . import native
from .claims import PixelClaimTable
from .queues import (
    DEFAULT_CAPACITY,
    MIN_CAPACITY,
    VARIANTS,
    backoff,
    SharedNeighborQueue,
    make_queue,
)

log = logging.getLogger(__name__)

Step = tuple
Hook = Callable[[int, Step], None]


BACKENDS = ("native", "python")
NATIVE_CHUNK = 2048


class ConfigError(ValueError):
    pass


class SchedulerError(RuntimeError):
    """A merge that violates the pairing rules."""


@dataclass(frozen=True)
class Zone:
    row_lo: int  # inclusive
    row_hi: int  # exclusive
    owner: int = -1

    def __len__(self) -> int:
        return self.row_hi - self.row_lo

    def contains_row(self, y: int) -> bool:
        return self.row_lo <= y < self.row_hi


@dataclass(frozen=True)
class EngineConfig:
    threads: int = 1
    lam: int = 0
    variant: str = "spin_wait"
    queue_capacity: int = DEFAULT_CAPACITY
    target: Callable = lambda_thinning_target
    backend: str = "native"

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.queue_capacity < MIN_CAPACITY:
            raise ConfigError(f"queue_capacity must be >= {MIN_CAPACITY}")
        variant = "spin_wait" if self.variant == "spin" else self.variant
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "variant", variant)


@dataclass
class WorkSets:
    candidates: list[int] | np.ndarray = field(default_factory=list)
    private_rejects: set[int] = field(default_factory=set)
    shared_out: SharedNeighborQueue | None = None
    touched: list[int] = field(default_factory=list)


@dataclass
class WorkerStats:
    examined: int = 0
    lowered: int = 0
    pushed: int = 0
    dedupe_rejections: int = 0
    forwarded: int = 0
    invalidated: int = 0
    claim_spins: int = 0


@dataclass
class Worker:
    wid: int
    generation: int
    zones: list[Zone]
    work: WorkSets = field(default_factory=WorkSets)
    stats: WorkerStats = field(default_factory=WorkerStats)
    parents: tuple[int, ...] = ()


@dataclass
class CompletionLedger:
    finished: list[int] = field(default_factory=list)
    pairings: list[tuple[tuple[int, ...], int]] = field(default_factory=list)
    _paired: set[int] = field(default_factory=set)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def finish(self, wid: int) -> None:
        with self._lock:
            if wid in self.finished:
                raise SchedulerError(f"worker {wid} finished twice")
            self.finished.append(wid)

    def pair(self, parents: tuple[int, ...], successor: int) -> None:
        with self._lock:
            done = set(self.finished)
            for wid in parents:
                if wid not in done:
                    raise SchedulerError(f"worker {wid} has not finished")
                if wid in self._paired:
                    raise SchedulerError(f"worker {wid} is already paired")
            self._paired.update(parents)
            self.pairings.append((parents, successor))

    def is_paired(self, wid: int) -> bool:
        return wid in self._paired


@dataclass
class EngineStats:
    rounds: int = 0
    lowerings: int = 0
    examined: int = 0
    pushes: int = 0
    dedupe_rejections: int = 0
    spin_retries: int = 0
    forwarded: int = 0
    invalidated: int = 0
    rescans: int = 0
    wall_ms: float = 0.0
    merge_trace: list[list[tuple[tuple[int, ...], int]]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "lowerings": self.lowerings,
            "examined": self.examined,
            "pushes": self.pushes,
            "dedupe_rejections": self.dedupe_rejections,
            "spin_retries": self.spin_retries,
            "forwarded": self.forwarded,
            "invalidated": self.invalidated,
            "rescans": self.rescans,
            "wall_ms": round(self.wall_ms, 3),
        }


# --- splitting -------------------------------------------------------------


def split(F: GrayImage | tuple[int, int], n: int) -> list[Zone]:
    """Partitions the interior rows into ``n`` bands differing by at most one row.

    ``F`` may be an image or a ``(height, width)`` shape.
    """
    h = F.height if isinstance(F, GrayImage) else int(F[0])
    rows = h - 2
    if n < 1:
        raise ConfigError("need at least one zone")
    if n > rows:
        raise ConfigError(f"cannot split {max(rows, 0)} interior rows into {n} zones")
    base, extra = divmod(rows, n)
    zones = []
    lo = 1
    for i in range(n):
        hi = lo + base + (1 if i < extra else 0)
        zones.append(Zone(lo, hi, owner=i))
        lo = hi
    return zones


def _rows_in_zones(rows: np.ndarray, zones: list[Zone]) -> np.ndarray:
    mask = np.zeros(rows.shape, dtype=bool)
    for z in zones:
        mask |= (rows >= z.row_lo) & (rows < z.row_hi)
    return mask


def _interior_neighbors(idx: int, w: int, h: int) -> Iterator[int]:
    y, x = divmod(idx, w)
    for dy in (-1, 0, 1):
        yy = y + dy
        if not 0 < yy < h - 1:
            continue
        for dx in (-1, 0, 1):
            xx = x + dx
            if (dy or dx) and 0 < xx < w - 1:
                yield yy * w + xx


# --- step generators ---------------------------------------------------------


def commit_steps(a, idx, lam, claims, owner, target=lambda_thinning_target, trace=False):
    """Claims the 3x3 block of ``idx``, re-checks the target, lowers to alpha-.

    Generator; its return value says whether the pixel was lowered.
    """
    w = a.shape[1]
    block = (
        idx - w - 1, idx - w, idx - w + 1,
        idx - 1, idx, idx + 1,
        idx + w - 1, idx + w, idx + w + 1,
    )
    held = 0
    try:
        for i in block:
            if trace:
                yield ("claim", i)
            while not claims.try_claim(i, owner):
                yield ("wait", i)
            held += 1
        if trace:
            yield ("commit", idx)
        return lowering_kernel(target)(a, idx // w, idx % w, lam)
    finally:
        for i in block[:held]:
            claims.release(i, owner)


def worker_steps(worker: Worker, a, cfg: EngineConfig, claims: PixelClaimTable, trace=False):
    """One pass of a worker over its candidates. Returns its WorkerStats."""
    h, w = a.shape
    work, stats, wid = worker.work, worker.stats, worker.wid
    out = work.shared_out
    lam, target = cfg.lam, cfg.target
    cands = np.asarray(work.candidates, dtype=np.int64)
    if cands.size:
        inside = _rows_in_zones(cands // w, worker.zones)
        # not ours to lower: hand over to whoever merges with us
        for idx in cands[~inside].tolist():
            if trace:
                yield ("push", idx)
            if out.push(idx, wid):
                stats.forwarded += 1
            else:
                stats.dedupe_rejections += 1
        cands = cands[inside]
    stats.examined += int(cands.size)
    if trace:
        yield ("scan", wid)
    hits = nb_scan_targets(a, cands, lam, target) if cands.size else cands
    if hits.size < cands.size:
        work.private_rejects.update(np.setdiff1d(cands, hits, assume_unique=True).tolist())
    for idx in hits.tolist():
        lowered = yield from commit_steps(a, idx, lam, claims, wid, target, trace)
        if not lowered:
            stats.invalidated += 1
            work.private_rejects.add(idx)
            continue
        stats.lowered += 1
        work.touched.append(idx)
        for n in _interior_neighbors(idx, w, h):
            if trace:
                yield ("push", n)
            if out.push(n, wid):
                stats.pushed += 1
            else:
                stats.dedupe_rejections += 1
    return stats


def drive(gen, hook: Hook | None = None, owner: int = -1):
    """Runs a step generator to completion in the calling thread."""
    spins = 0
    try:
        step = next(gen)
        while True:
            if step[0] == "wait":
                spins += 1
                backoff(spins)
            else:
                spins = 0
                if hook is not None:
                    hook(owner, step)
            step = next(gen)
    except StopIteration as stop:
        return stop.value


def commit_lower(a, p, lam, claims, owner=0, target=lambda_thinning_target, hook=None) -> bool:
    """Lowers pixel ``p`` of the mutable array ``a`` if it is still a target.

    ``p`` is a flat index or a ``Point``.
    """
    idx = p if isinstance(p, (int, np.integer)) else p[1] * a.shape[1] + p[0]
    return drive(commit_steps(a, int(idx), lam, claims, owner, target, hook is not None), hook, owner)


def worker_pass(worker: Worker, a, cfg: EngineConfig, claims: PixelClaimTable | None = None,
                hook: Hook | None = None) -> WorkerStats:
    if claims is None:
        claims = PixelClaimTable(a.size)
    return drive(worker_steps(worker, a, cfg, claims, hook is not None), hook, worker.wid)


def native_worker_pass(worker: Worker, a, cfg: EngineConfig, claims: np.ndarray,
                       chunk: int = NATIVE_CHUNK) -> WorkerStats:
    """Same contract as :func:`worker_pass`, using the compiled kernel.

    ``claims`` is an int32 array from :func:`native.new_claims`.
    """
    w = a.shape[1]
    work, stats, wid = worker.work, worker.stats, worker.wid
    out = work.shared_out
    cands = np.asarray(work.candidates, dtype=np.int64)
    if cands.size:
        inside = _rows_in_zones(cands // w, worker.zones)
        fwd = cands[~inside]
        if fwd.size:
            got = out.push_many(fwd, wid)
            stats.forwarded += got
            stats.dedupe_rejections += int(fwd.size) - got
        cands = cands[inside]
    stats.examined += int(cands.size)
    if not cands.size:
        return stats
    m = min(chunk, int(cands.size))
    pushes = np.empty(8 * m, dtype=np.int64)
    rejects = np.empty(m, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    counts = np.zeros(5, dtype=np.int64)
    lam = np.int64(cfg.lam)
    tag = np.int32(wid + 1)
    for lo in range(0, cands.size, m):
        native.native_pass(a, cands[lo:lo + m], lam, cfg.target, claims, tag,
                           pushes, rejects, touched, counts)
        npush, nrej, ntouch, ninv, nspin = (int(v) for v in counts)
        stats.lowered += ntouch
        stats.invalidated += ninv
        stats.claim_spins += nspin
        work.private_rejects.update(rejects[:nrej].tolist())
        work.touched.extend(touched[:ntouch].tolist())
        if npush:
            got = out.push_many(pushes[:npush], wid)
            stats.pushed += got
            stats.dedupe_rejections += npush - got
    return stats


def merge(ledger: CompletionLedger, a: Worker, b: Worker | None, successor_id: int,
          queue: SharedNeighborQueue | None = None) -> Worker:
    """Records the pairing and builds the successor of ``a`` and ``b``.

    ``b`` is None for the odd worker out of a generation. The successor's
    candidates are the queue's drained items, and the same list keeps
    filling if a consumer is still draining.
    """
    parents = (a.wid,) if b is None else (a.wid, b.wid)
    if queue is not None and not set(parents) <= set(queue.producers):
        raise SchedulerError(f"workers {parents} do not share this queue")
    ledger.pair(parents, successor_id)
    zones = sorted(a.zones + ([] if b is None else b.zones), key=lambda z: z.row_lo)
    rejects = set(a.work.private_rejects)
    if b is not None:
        rejects |= b.work.private_rejects
    work = WorkSets(private_rejects=rejects)
    if queue is not None:
        queue.drain_nowait()
        work.candidates = queue.drained
    return Worker(successor_id, a.generation + 1, _coalesce(zones, successor_id), work,
                  parents=parents)


def _coalesce(zones: list[Zone], owner: int) -> list[Zone]:
    out: list[Zone] = []
    for z in zones:
        if out and out[-1].row_hi == z.row_lo:
            out[-1] = Zone(out[-1].row_lo, z.row_hi, owner)
        else:
            out.append(Zone(z.row_lo, z.row_hi, owner))
    return out


# --- one round ---------------------------------------------------------------


class _Round:
    def __init__(self, a, cfg: EngineConfig, claims, hook: Hook | None):
        self.a = a
        self.cfg = cfg
        self.claims = claims
        self.hook = hook
        self.npix = a.size
        self.ledger = CompletionLedger()
        self.workers: list[Worker] = []
        self.queues: list[SharedNeighborQueue] = []
        self.threads: list[threading.Thread] = []
        self.errors: list[BaseException] = []
        self.final_worker: Worker | None = None
        self.pending: list[int] = []
        self._lock = threading.RLock()
        self._ids = itertools.count()
        self._gen_sizes = [cfg.threads]
        while self._gen_sizes[-1] > 1:
            self._gen_sizes.append(math.ceil(self._gen_sizes[-1] / 2))
        self._arrivals = [0] * len(self._gen_sizes)
        self._open: dict[int, SharedNeighborQueue] = {}
        self._queue_of: dict[int, SharedNeighborQueue] = {}
        self._merged: dict[int, threading.Event] = {}
        self._successor: dict[int, Worker] = {}
        self._final_queue: SharedNeighborQueue | None = None

    def new_id(self) -> int:
        return next(self._ids)

    def attach(self, worker: Worker) -> SharedNeighborQueue:
        """Gives ``worker`` an output queue, first-come first-served in its generation."""
        with self._lock:
            g = worker.generation
            m = self._gen_sizes[g]
            slot = self._arrivals[g]
            self._arrivals[g] += 1
            if slot >= m:
                raise SchedulerError(f"generation {g} has more than {m} workers")
            if slot % 2 == 0:
                expected = 2 if slot + 1 < m else 1
                q = make_queue(self.cfg.variant, self.npix, self.cfg.queue_capacity, expected)
                self.queues.append(q)
                self._merged[id(q)] = threading.Event()
                if m == 1:
                    self._final_queue = q
                    self.final_worker = worker
                if expected == 2:
                    self._open[g] = q
                self._spawn(self._consume, q)
            else:
                q = self._open.pop(g)
            q.register_producer(worker.wid)
            self._queue_of[worker.wid] = q
            worker.work.shared_out = q
            self.workers.append(worker)
            return q

    def _spawn(self, fn, *args) -> None:
        t = threading.Thread(target=self._guard, args=(fn, *args), daemon=True)
        self.threads.append(t)
        t.start()

    def _guard(self, fn, *args) -> None:
        try:
            fn(*args)
        except BaseException as exc:  # surfaced by run()
            log.exception("worker thread failed")
            with self._lock:
                self.errors.append(exc)
                for ev in self._merged.values():
                    ev.set()
                for q in self.queues:
                    q.closed_by.update(q.producers)
                    q._wake.set()

    def _work(self, worker: Worker) -> None:
        try:
            if isinstance(self.claims, np.ndarray):
                native_worker_pass(worker, self.a, self.cfg, self.claims)
            else:
                drive(worker_steps(worker, self.a, self.cfg, self.claims, self.hook is not None),
                      self.hook, worker.wid)
        finally:
            self._finish(worker)

    def _finish(self, worker: Worker) -> None:
        with self._lock:
            self.ledger.finish(worker.wid)
            q = self._queue_of[worker.wid]
            q.close(worker.wid)
            if not q.closed or q is self._final_queue:
                if q is self._final_queue:
                    self._merged[id(q)].set()
                return
            parents = [w for w in self.workers if w.wid in q.producers]
            a = parents[0]
            b = parents[1] if len(parents) > 1 else None
            succ = merge(self.ledger, a, b, self.new_id(), q)
            self._successor[id(q)] = succ
            self.attach(succ)
            self._merged[id(q)].set()

    def _consume(self, q: SharedNeighborQueue) -> None:
        q.drain_until_closed()
        self._merged[id(q)].wait()
        if self.errors:
            return
        if q is self._final_queue:
            self.pending = list(q.drained)
            return
        self._work(self._successor[id(q)])

    def run(self, candidates_per_zone: list[np.ndarray], zones: list[Zone]) -> None:
        gen0 = []
        for zone, cands in zip(zones, candidates_per_zone):
            wid = self.new_id()
            wk = Worker(wid, 0, [Zone(zone.row_lo, zone.row_hi, wid)], WorkSets(candidates=cands))
            self.attach(wk)
            gen0.append(wk)
        for wk in gen0:
            self._spawn(self._work, wk)
        i = 0
        while True:
            with self._lock:
                if i >= len(self.threads):
                    break
                t = self.threads[i]
            t.join()
            i += 1
        if self.errors:
            raise self.errors[0]


# --- driver ------------------------------------------------------------------


def run_parallel(F: GrayImage, cfg: EngineConfig, hook: Hook | None = None) -> GrayImage:
    out, _ = run_parallel_stats(F, cfg, hook)
    return out


def run_parallel_stats(F: GrayImage, cfg: EngineConfig, hook: Hook | None = None):
    """Runs the engine; returns (image, EngineStats). A hook implies the python backend."""
    t0 = time.perf_counter()
    a = F.pixels.copy()
    h, w = a.shape
    stats = EngineStats()
    if h < 3 or w < 3:
        stats.wall_ms = (time.perf_counter() - t0) * 1e3
        return GrayImage(a), stats
    n = min(cfg.threads, h - 2)
    if n != cfg.threads:
        log.info("clamping %d threads to %d interior rows", cfg.threads, n)
        cfg = replace(cfg, threads=n)
    if hook is not None and cfg.backend != "python":
        cfg = replace(cfg, backend="python")
    zones = split((h, w), n)
    claims = native.new_claims(a.size) if cfg.backend == "native" else PixelClaimTable(a.size)
    ys, xs = np.mgrid[1:h - 1, 1:w - 1]
    candidates = (ys * w + xs).ravel().astype(np.int64)
    while True:
        rows = candidates // w
        per_zone = [candidates[(rows >= z.row_lo) & (rows < z.row_hi)] for z in zones]
        rnd = _Round(a, cfg, claims, hook)
        rnd.run(per_zone, zones)
        stats.rounds += 1
        stats.merge_trace.append(list(rnd.ledger.pairings))
        touched: list[int] = []
        for wk in rnd.workers:
            s = wk.stats
            stats.lowerings += s.lowered
            stats.examined += s.examined
            stats.pushes += s.pushed
            stats.dedupe_rejections += s.dedupe_rejections
            stats.forwarded += s.forwarded
            stats.invalidated += s.invalidated
            stats.spin_retries += s.claim_spins
            touched.extend(wk.work.touched)
        for q in rnd.queues:
            stats.spin_retries += q.spin_retries
        nxt = [np.asarray(rnd.pending, dtype=np.int64)]
        if touched:
            nxt.append(_with_neighborhoods(np.asarray(touched, dtype=np.int64), h, w))
        if rnd.final_worker.stats.lowered == 0:
            stats.rescans += 1
            remaining = find_targets(a, cfg.lam, cfg.target)
            if remaining.size == 0:
                break
            nxt.append(remaining)
        candidates = np.unique(np.concatenate(nxt))
    stats.wall_ms = (time.perf_counter() - t0) * 1e3
    return GrayImage(a), stats


def _with_neighborhoods(idx: np.ndarray, h: int, w: int) -> np.ndarray:
    y, x = np.divmod(idx, w)
    dy, dx = np.mgrid[-1:2, -1:2]
    yy = (y[:, None] + dy.ravel()[None, :]).ravel()
    xx = (x[:, None] + dx.ravel()[None, :]).ravel()
    keep = (yy > 0) & (yy < h - 1) & (xx > 0) & (xx < w - 1)
    return np.unique(yy[keep] * w + xx[keep])
