"""Split-distribute-merge parallel thinning engine."""

from .claims import ClaimError, PixelClaimTable
from .engine import (
    BACKENDS,
    CompletionLedger,
    ConfigError,
    EngineConfig,
    EngineStats,
    SchedulerError,
    Worker,
    WorkerStats,
    WorkSets,
    Zone,
    commit_lower,
    commit_steps,
    drive,
    merge,
    native_worker_pass,
    run_parallel,
    run_parallel_stats,
    split,
    worker_pass,
    worker_steps,
)
from .queues import (
    GUARDED,
    SPIN_WAIT,
    GuardedQueue,
    QueueContractError,
    SharedNeighborQueue,
    SpinWaitQueue,
    make_queue,
)

__all__ = [
    "BACKENDS",    "ClaimError", "PixelClaimTable", "CompletionLedger", "ConfigError", "EngineConfig",
    "EngineStats", "SchedulerError", "Worker", "WorkerStats", "WorkSets", "Zone",
    "commit_lower", "commit_steps", "drive", "merge", "native_worker_pass", "run_parallel", "run_parallel_stats",
    "split", "worker_pass", "worker_steps", "GUARDED", "SPIN_WAIT", "GuardedQueue",
    "QueueContractError", "SharedNeighborQueue", "SpinWaitQueue", "make_queue",
]
