"""Bounded FIFO queues of pixel indices shared by two producers.

Each queue deduplicates: a pixel already waiting in the queue is
rejected. Two synchronization variants exist:

``GuardedQueue``
    every push and pop runs under one mutex; a producer facing a full
    queue sleeps on a condition variable.
``SpinWaitQueue``
    the mutex is taken by busy retrying; a producer facing a full queue
    keeps retrying as well. After every ``SPIN_LIMIT`` failed retries the
    caller backs off (see :func:`backoff`), then resumes spinning.

Exactly one consumer drains a queue. The two producers call ``close``
when they are done, which lets the consumer detect the end of input.
"""

from __future__ import annotations

import threading
import time
from collections import deque

GUARDED = "guarded"
SPIN_WAIT = "spin_wait"
VARIANTS = (GUARDED, SPIN_WAIT)

SPIN_LIMIT = 64
MIN_CAPACITY = 8
DEFAULT_CAPACITY = 4096
MAX_BACKOFF_S = 1e-3


def backoff(spins: int) -> None:
    """Called on every failed retry; sleeps briefly after each ``SPIN_LIMIT`` of them.

    The first back-off is a bare yield. ``sleep(0)`` rarely hands the GIL
    to a waiting thread, so later back-offs sleep for real, doubling from
    2 microseconds up to ``MAX_BACKOFF_S``.
    """
    if spins % SPIN_LIMIT:
        return
    k = spins // SPIN_LIMIT
    time.sleep(0.0 if k == 1 else min(MAX_BACKOFF_S, 1e-6 * (1 << min(k - 1, 20))))


class QueueContractError(RuntimeError):
    """Misuse of a queue by an unknown or surplus producer."""


class SharedNeighborQueue:
    variant = ""

    def __init__(self, npixels: int, capacity: int = DEFAULT_CAPACITY, expected_producers: int = 2):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if expected_producers not in (1, 2):
            raise ValueError("a queue has one or two producers")
        self.capacity = capacity
        self.expected_producers = expected_producers
        self.producers: list[int] = []
        self.closed_by: set[int] = set()
        self.drained: list[int] = []  # consumer-side buffer
        self.accepted = 0
        self.rejected = 0
        self.spin_retries = 0
        self._items: deque[int] = deque()
        self._flags = bytearray(npixels)
        self._wake = threading.Event()
        self._wake_at = max(1, capacity // 2)
        self._reg_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._items)

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(size={len(self)}, capacity={self.capacity}, "
            f"producers={self.producers})"
        )

    def register_producer(self, wid: int) -> None:
        with self._reg_lock:
            if wid in self.producers:
                return
            if len(self.producers) >= self.expected_producers:
                raise QueueContractError(
                    f"queue already has producers {self.producers}; cannot add {wid}"
                )
            self.producers.append(wid)

    def _check_producer(self, wid: int) -> None:
        if wid not in self.producers:
            raise QueueContractError(f"worker {wid} is not a producer of this queue")
        if wid in self.closed_by:
            raise QueueContractError(f"worker {wid} already closed this queue")

    def close(self, wid: int) -> None:
        if wid not in self.producers:
            raise QueueContractError(f"worker {wid} is not a producer of this queue")
        self.closed_by.add(wid)
        self._wake.set()

    @property
    def closed(self) -> bool:
        return len(self.closed_by) >= self.expected_producers

    def is_queued(self, idx: int) -> bool:
        return bool(self._flags[idx])

    def push(self, idx: int, producer: int) -> bool:
        """Appends ``idx``; False if it is already waiting. Blocks while full."""
        raise NotImplementedError

    def push_many(self, idxs, producer: int) -> int:
        """Pushes each index in order; returns how many were accepted.

        Same semantics as repeated :meth:`push`, but the lock is taken
        once per stretch of free capacity instead of once per index.
        """
        raise NotImplementedError

    def _insert_run(self, items: list[int], i: int) -> tuple[int, int]:
        # caller holds the lock; inserts until the queue fills up or items run out
        flags, q = self._flags, self._items
        room = self.capacity - len(q)
        accepted = 0
        n = len(items)
        while i < n and room:
            idx = items[i]
            i += 1
            if flags[idx]:
                self.rejected += 1
                continue
            flags[idx] = 1
            q.append(idx)
            room -= 1
            accepted += 1
        self.accepted += accepted
        if len(q) >= self._wake_at:
            self._wake.set()
        return i, accepted

    def try_pop(self) -> int | None:
        raise NotImplementedError

    def pop_all(self) -> list[int]:
        """Removes and returns everything currently queued, in FIFO order."""
        raise NotImplementedError

    def _take_all(self) -> list[int]:
        # caller holds the lock
        got = list(self._items)
        self._items.clear()
        flags = self._flags
        for idx in got:
            flags[idx] = 0
        return got

    def drain_nowait(self) -> list[int]:
        """Moves everything currently queued into ``drained``."""
        got = self.pop_all()
        self.drained.extend(got)
        return got

    def drain_until_closed(self) -> list[int]:
        """Consumer loop: collects items until every producer has closed."""
        while True:
            self._wake.wait()
            self._wake.clear()
            self.drain_nowait()
            if self.closed and not self._items:
                return self.drained


class GuardedQueue(SharedNeighborQueue):
    variant = GUARDED

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._lock = threading.Lock()
        self._not_full = threading.Condition(self._lock)

    def push(self, idx: int, producer: int) -> bool:
        self._check_producer(producer)
        with self._lock:
            while True:
                if self._flags[idx]:
                    self.rejected += 1
                    return False
                if len(self._items) < self.capacity:
                    break
                self._wake.set()
                self._not_full.wait()
            self._flags[idx] = 1
            self._items.append(idx)
            self.accepted += 1
            if len(self._items) >= self._wake_at:
                self._wake.set()
            return True

    def push_many(self, idxs, producer: int) -> int:
        self._check_producer(producer)
        items = list(idxs.tolist() if hasattr(idxs, "tolist") else idxs)
        i = total = 0
        with self._lock:
            while True:
                i, got = self._insert_run(items, i)
                total += got
                if i >= len(items):
                    return total
                self._wake.set()
                self._not_full.wait()

    def try_pop(self) -> int | None:
        with self._lock:
            if not self._items:
                return None
            idx = self._items.popleft()
            self._flags[idx] = 0
            self._not_full.notify()
            return idx

    def pop_all(self) -> list[int]:
        with self._lock:
            got = self._take_all()
            if got:
                self._not_full.notify_all()
            return got


class SpinWaitQueue(SharedNeighborQueue):
    variant = SPIN_WAIT

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._lock = threading.Lock()

    def _spin_acquire(self) -> int:
        spins = 0
        acquire = self._lock.acquire
        while not acquire(False):
            spins += 1
            backoff(spins)
        return spins

    def push(self, idx: int, producer: int) -> bool:
        self._check_producer(producer)
        spins = 0
        while True:
            spins += self._spin_acquire()
            try:
                if self._flags[idx]:
                    self.rejected += 1
                    self.spin_retries += spins
                    return False
                if len(self._items) < self.capacity:
                    self._flags[idx] = 1
                    self._items.append(idx)
                    self.accepted += 1
                    self.spin_retries += spins
                    if len(self._items) >= self._wake_at:
                        self._wake.set()
                    return True
            finally:
                self._lock.release()
            # full: keep spinning until the consumer frees a slot
            self._wake.set()
            spins += 1
            backoff(spins)

    def push_many(self, idxs, producer: int) -> int:
        self._check_producer(producer)
        items = list(idxs.tolist() if hasattr(idxs, "tolist") else idxs)
        i = total = spins = 0
        while True:
            spins += self._spin_acquire()
            try:
                i, got = self._insert_run(items, i)
                if i >= len(items):
                    self.spin_retries += spins
            finally:
                self._lock.release()
            total += got
            if i >= len(items):
                return total
            self._wake.set()
            spins += 1
            backoff(spins)

    def try_pop(self) -> int | None:
        spins = self._spin_acquire()
        try:
            self.spin_retries += spins
            if not self._items:
                return None
            idx = self._items.popleft()
            self._flags[idx] = 0
            return idx
        finally:
            self._lock.release()

    def pop_all(self) -> list[int]:
        spins = self._spin_acquire()
        try:
            self.spin_retries += spins
            return self._take_all()
        finally:
            self._lock.release()


def make_queue(variant: str, npixels: int, capacity: int = DEFAULT_CAPACITY,
               expected_producers: int = 2) -> SharedNeighborQueue:
    if variant == GUARDED:
        return GuardedQueue(npixels, capacity, expected_producers)
    if variant in (SPIN_WAIT, "spin"):
        return SpinWaitQueue(npixels, capacity, expected_producers)
    raise ValueError(f"unknown queue variant {variant!r}; expected one of {VARIANTS}")
