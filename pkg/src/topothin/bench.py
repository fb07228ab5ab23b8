"""Timing harness plus speedup, efficiency and Amdahl calculations.

The reported time for a configuration is the minimum over its repeats.
Only the thinning call itself is timed. Each engine is run once untimed
first so JIT compilation stays out of the numbers.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .image import GrayImage
from .parallel import BACKENDS, EngineConfig, run_parallel
from .skeleton import lambda_skeleton

ENGINES = ("seq", "guarded", "spin_wait")
CSV_HEADER = ("engine", "threads", "run", "wall_ms")
DEFAULT_THREADS = (1, 2, 4, 8, 16)
DEFAULT_REPEATS = 5


def amdahl_speedup(p: float, n: int) -> float:
    """Amdahl speedup 1 / ((1 - p) + p / n) for parallel fraction ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"parallel fraction must be in [0, 1], got {p}")
    if n < 1:
        raise ValueError(f"processor count must be >= 1, got {n}")
    return 1.0 / ((1.0 - p) + p / n)


def efficiency(seq_ms: float, par_ms: float, n: int) -> float:
    """seq_ms / (n * par_ms)."""
    if seq_ms <= 0 or par_ms <= 0 or n < 1:
        raise ValueError("times must be positive and n >= 1")
    return seq_ms / (n * par_ms)


def amdahl_efficiency(p: float, n: int) -> float:
    """Efficiency implied by Amdahl's law: 1 / (n (1 - p) + p)."""
    return amdahl_speedup(p, n) / n


def amdahl_fit(measured: Iterable[tuple[int, float]]) -> float:
    """Mean over n > 1 of the per-point inversion (1 - 1/S) / (1 - 1/n), clamped to [0, 1]."""
    est = [(1.0 - 1.0 / s) / (1.0 - 1.0 / n) for n, s in measured if n > 1 and s > 0]
    if not est:
        raise ValueError("need at least one point with n > 1 and S > 0")
    return min(1.0, max(0.0, sum(est) / len(est)))


def throughput(best_ms: float) -> float:
    """Images per second."""
    return 1000.0 / best_ms


@dataclass
class ConfigSummary:
    engine: str
    threads: int
    best_ms: float
    speedup: float  # own 1-thread time over this time
    speedup_vs_seq: float  # best sequential time over this time
    efficiency: float  # best sequential / (threads * this)
    images_per_s: float
    hamming_vs_seq: int


@dataclass
class BenchReport:
    rows: list[tuple[str, int, int, float]] = field(default_factory=list)
    hamming: dict[tuple[str, int], int] = field(default_factory=dict)

    def best_ms(self, engine: str, threads: int) -> float:
        times = [r[3] for r in self.rows if r[0] == engine and r[1] == threads]
        if not times:
            raise KeyError((engine, threads))
        return min(times)

    def configs(self) -> list[tuple[str, int]]:
        seen: dict[tuple[str, int], None] = {}
        for r in self.rows:
            seen.setdefault((r[0], r[1]), None)
        return list(seen)

    def seq_best_ms(self) -> float:
        return min(r[3] for r in self.rows if r[0] == "seq")

    def summaries(self) -> list[ConfigSummary]:
        ts = self.seq_best_ms()
        out = []
        for engine, n in self.configs():
            best = self.best_ms(engine, n)
            try:
                own1 = self.best_ms(engine, 1)
            except KeyError:
                own1 = ts if engine == "seq" else float("nan")
            out.append(ConfigSummary(
                engine=engine,
                threads=n,
                best_ms=best,
                speedup=own1 / best,
                speedup_vs_seq=ts / best,
                efficiency=efficiency(ts, best, n),
                images_per_s=throughput(best),
                hamming_vs_seq=self.hamming.get((engine, n), 0),
            ))
        return out

    def fitted_p(self, engine: str) -> float:
        pts = [(s.threads, s.speedup) for s in self.summaries()
               if s.engine == engine and not math.isnan(s.speedup)]
        return amdahl_fit(pts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_HEADER)
        for engine, n, run, ms in self.rows:
            wr.writerow((engine, n, run, f"{ms:.6f}"))
        return buf.getvalue()

    def summary_text(self) -> str:
        lines = ["engine,threads,best_ms,speedup,speedup_vs_seq,efficiency,images_per_s,hamming_vs_seq"]
        for s in self.summaries():
            lines.append(
                f"{s.engine},{s.threads},{s.best_ms:.3f},{s.speedup:.3f},{s.speedup_vs_seq:.3f},"
                f"{s.efficiency:.3f},{s.images_per_s:.1f},{s.hamming_vs_seq}"
            )
        for engine in dict.fromkeys(r[0] for r in self.rows):
            if engine == "seq":
                continue
            try:
                lines.append(f"p_hat[{engine}]={self.fitted_p(engine):.4f}")
            except ValueError:
                pass
        return "\n".join(lines)


def _runner(engine: str, threads: int, lam: int,
            backend: str = BACKENDS[0]) -> Callable[[GrayImage], GrayImage]:
    if engine == "seq":
        return lambda F: lambda_skeleton(F, lam)
    cfg = EngineConfig(threads=threads, lam=lam, variant=engine, backend=backend)
    return lambda F: run_parallel(F, cfg)


def run_bench(
    F: GrayImage,
    lam: int,
    threads: Sequence[int] = DEFAULT_THREADS,
    repeats: int = DEFAULT_REPEATS,
    engines: Sequence[str] = ENGINES,
    clock: Callable[[], float] = time.perf_counter,
    progress: Callable[[str], None] | None = None,
    backend: str = BACKENDS[0],
) -> BenchReport:
    """Times every engine at every thread count.

    The sequential engine ignores the thread count, but it is still run
    once per count so that every engine contributes the same number of rows.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    engines = ["spin_wait" if e == "spin" else e for e in engines]
    report = BenchReport()
    reference = lambda_skeleton(F, lam)
    for engine in engines:
        for n in threads:
            run = _runner(engine, n, lam, backend)
            out = run(F)  # warm-up, untimed
            report.hamming[(engine, n)] = out.hamming(reference)
            for r in range(repeats):
                t0 = clock()
                run(F)
                report.rows.append((engine, n, r, (clock() - t0) * 1e3))
            if progress:
                progress(f"{engine} x{n}: best {report.best_ms(engine, n):.3f} ms")
    return report
