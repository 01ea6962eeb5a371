"""Trajectory farm: submit queue, matchmaker, autoscaler, local workers.

The controller is a single loop.  Each tick it asks the autoscaler for pool
changes, lets the negotiator match queued jobs to idle workers, and collects
finished jobs.  Workers only see a job payload and return per-trajectory
records, so the aggregate depends on nothing but ``(circuit, cfg)``.

Two worker backends exist: threads (default) and single-process pools
started with ``spawn``.  :class:`VirtualCluster` drives the same scheduling
functions with simulated time.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, ThreadPoolExecutor, wait
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Sequence

from .circuit import Circuit
from .serialization import circuit_from_json
from .statevector import memory_bytes
from .trajectory import RunSummary, TrajectoryConfig, TrajectoryResult, TrajectorySimulator

log = logging.getLogger(__name__)

DEFAULT_LIMIT = 20
DEFAULT_CAPACITY = 1 << 34


class FarmError(RuntimeError):
    pass


class WorkerFault(RuntimeError):
    """Injected worker failure (thread backend)."""


# ------------------------------------------------------------------ jobs


@dataclass
class Job:
    id: int
    start: int
    stop: int
    requirement_bytes: int = 0
    attempts: int = 0

    @property
    def size(self) -> int:
        return self.stop - self.start


def partition(r: int, chunk: int, requirement_bytes: int = 0) -> list[Job]:
    """Split trajectories ``0..r-1`` into consecutive jobs of at most ``chunk``."""
    if r < 0 or chunk < 1:
        raise ValueError("need r >= 0 and chunk >= 1")
    return [Job(i, s, min(s + chunk, r), requirement_bytes) for i, s in enumerate(range(0, r, chunk))]


def job_requirement(circuit: Circuit, precision: str = "single") -> int:
    """``8 * 2**n`` bytes per state (``16`` in double), doubled when channels need scratch."""
    return memory_bytes(circuit.n_qubits, precision, scratch=circuit.needs_scratch)


# ------------------------------------------------------------------ pool


@dataclass
class Worker:
    id: int
    capacity: int
    status: str = "idle"
    idle_since: float = 0.0
    job: int | None = None


@dataclass
class PoolState:
    workers: list[Worker] = field(default_factory=list)
    queue: list[Job] = field(default_factory=list)
    limit: int = DEFAULT_LIMIT
    next_id: int = 0

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError("worker limit must be at least 1")

    @property
    def idle(self) -> list[Worker]:
        return [w for w in self.workers if w.status == "idle"]

    @property
    def busy(self) -> list[Worker]:
        return [w for w in self.workers if w.status == "busy"]

    def add_worker(self, capacity: int, now: float) -> Worker:
        if len(self.workers) >= self.limit:
            raise FarmError("worker limit reached")
        w = Worker(self.next_id, capacity, "idle", now)
        self.next_id += 1
        self.workers.append(w)
        return w

    def remove_worker(self, wid: int) -> None:
        self.workers = [w for w in self.workers if w.id != wid]

    def enqueue(self, jobs: Iterable[Job]) -> None:
        self.queue.extend(jobs)
        self.queue.sort(key=lambda j: j.id)


@dataclass(frozen=True)
class AutoscalerConfig:
    tick_ms: float = 100.0
    scale_up_batch: int = 4
    idle_timeout_s: float = 5.0

    def __post_init__(self):
        if not self.tick_ms > 0:
            raise ValueError("tick interval must be positive")
        if self.scale_up_batch < 1:
            raise ValueError("scale-up batch must be at least 1")
        if self.idle_timeout_s < 0:
            raise ValueError("idle timeout must be non-negative")


@dataclass(frozen=True)
class ScaleAction:
    add: int = 0
    retire: tuple[int, ...] = ()


def autoscale_tick(pool: PoolState, cfg: AutoscalerConfig, now: float = 0.0) -> ScaleAction:
    """Decide pool changes: grow while jobs wait for workers, retire long-idle workers."""
    pending = len(pool.queue)
    idle = pool.idle
    total = len(pool.workers)
    if pending > len(idle) and total < pool.limit:
        return ScaleAction(add=min(cfg.scale_up_batch, pool.limit - total))
    if pending == 0:
        stale = tuple(w.id for w in idle if now - w.idle_since >= cfg.idle_timeout_s)
        return ScaleAction(retire=stale)
    return ScaleAction()


def apply_scale(pool: PoolState, action: ScaleAction, capacity: int, now: float) -> list[Worker]:
    for wid in action.retire:
        pool.remove_worker(wid)
    return [pool.add_worker(capacity, now) for _ in range(action.add)]


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[Job, Worker], ...] = ()
    unmatchable: tuple[int, ...] = ()


def negotiate(pool: PoolState, jobs: Sequence[Job] | None = None) -> Assignment:
    """Match queued jobs (submission order) to idle workers with enough capacity.

    Jobs no worker in the pool could ever hold are reported as unmatchable and
    stay queued.  The pool is not modified.
    """
    jobs = pool.queue if jobs is None else jobs
    free = sorted(pool.idle, key=lambda w: w.id)
    max_cap = max((w.capacity for w in pool.workers), default=None)
    pairs, unmatchable = [], []
    for job in jobs:
        if max_cap is not None and job.requirement_bytes > max_cap:
            unmatchable.append(job.id)
            continue
        for w in free:
            if w.capacity >= job.requirement_bytes:
                pairs.append((job, w))
                free.remove(w)
                break
    return Assignment(tuple(pairs), tuple(unmatchable))


# ---------------------------------------------------------------- workers


@dataclass(frozen=True)
class JobPayload:
    circuit_json: str
    cfg: dict
    start: int
    stop: int
    job_id: int
    attempt: int
    crash: bool = False


_local = threading.local()


def _simulator(circuit_json: str, cfg: dict) -> TrajectorySimulator:
    key = (circuit_json, json.dumps(cfg, sort_keys=True))
    cache = getattr(_local, "sims", None)
    if cache is None:
        cache = _local.sims = {}
    if key not in cache:
        cache.clear()
        cache[key] = TrajectorySimulator(circuit_from_json(json.loads(circuit_json)), TrajectoryConfig.from_json(cfg))
    return cache[key]


def run_job(payload: JobPayload) -> list[dict]:
    if payload.crash:
        raise WorkerFault(f"injected failure in job {payload.job_id} attempt {payload.attempt}")
    sim = _simulator(payload.circuit_json, payload.cfg)
    return [sim.run(i).to_json() for i in range(payload.start, payload.stop)]


def _run_job_process(payload: JobPayload) -> list[dict]:
    if payload.crash:
        os._exit(17)  # hard worker death
    return run_job(payload)


class _Agent:
    """Local worker behind a one-slot executor."""

    def __init__(self, backend: str):
        if backend == "thread":
            self.pool = ThreadPoolExecutor(max_workers=1)
            self.fn = run_job
        elif backend == "process":
            self.pool = ProcessPoolExecutor(max_workers=1, mp_context=get_context("spawn"))
            self.fn = _run_job_process
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def submit(self, payload: JobPayload) -> Future:
        return self.pool.submit(self.fn, payload)

    def close(self) -> None:
        self.pool.shutdown(wait=False, cancel_futures=True)


# ------------------------------------------------------------------ farm


@dataclass(frozen=True)
class FarmConfig:
    limit: int = DEFAULT_LIMIT
    chunk: int = 100
    tick_ms: float = 100.0
    retries: int = 2
    scale_up_batch: int = 4
    idle_timeout_s: float = 5.0
    backend: str = "thread"
    worker_capacity_bytes: int = DEFAULT_CAPACITY

    def __post_init__(self):
        if self.limit < 1 or self.chunk < 1 or self.retries < 0:
            raise ValueError("need limit >= 1, chunk >= 1, retries >= 0")
        if self.backend not in ("thread", "process"):
            raise ValueError("backend must be 'thread' or 'process'")

    @property
    def autoscaler(self) -> AutoscalerConfig:
        return AutoscalerConfig(self.tick_ms, self.scale_up_batch, self.idle_timeout_s)

    @classmethod
    def from_json(cls, doc: dict | str) -> "FarmConfig":
        if isinstance(doc, str):
            doc = json.loads(doc)
        known = {k: doc[k] for k in cls.__dataclass_fields__ if k in doc}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValueError(f"unknown farm config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class FarmResult:
    summary: RunSummary
    summary_json: dict
    out_dir: Path | None
    attempts: dict[int, int]
    max_workers_seen: int


def merge(partials: Sequence[Sequence[TrajectoryResult]], cfg: TrajectoryConfig, r: int | None = None) -> RunSummary:
    """Combine per-job records; ranges must tile ``0..r-1`` exactly."""
    records = sorted((rec for part in partials for rec in part), key=lambda rec: rec.index)
    indices = [rec.index for rec in records]
    seen = set()
    for i in indices:
        if i in seen:
            raise FarmError(f"overlapping partial results at trajectory {i}")
        seen.add(i)
    total = cfg.r if r is None else r
    if indices != list(range(total)):
        missing = sorted(set(range(total)) - seen)
        raise FarmError(f"missing trajectories: {_ranges(missing)}" if missing else "trajectory indices out of range")
    return RunSummary(cfg, records)


def _ranges(idx: Sequence[int]) -> str:
    out, start = [], None
    for a, b in zip([None, *idx], [*idx, None]):
        if start is None:
            start = b
        elif b is None or b != a + 1:
            out.append(f"[{start},{a + 1})")
            start = b
    return ", ".join(out)


def summary_bytes(summary: RunSummary) -> bytes:
    return (json.dumps(summary.to_json(), sort_keys=True, indent=1, allow_nan=False) + "\n").encode()


def run_farm(
    circuit: Circuit,
    cfg: TrajectoryConfig,
    farm: FarmConfig | None = None,
    out_dir: str | Path | None = None,
    faults: Iterable[tuple[int, int]] = (),
    r: int | None = None,
) -> FarmResult:
    """Run ``cfg.r`` (or ``r``) trajectories on a self-scaling local pool.

    ``faults`` lists ``(job_id, attempt)`` pairs at which the worker dies.
    """
    r = cfg.r if r is None else r
    farm = farm or FarmConfig()
    faults = set(faults)
    requirement = job_requirement(circuit, cfg.precision)
    jobs = partition(r, farm.chunk, requirement)
    pool = PoolState(limit=farm.limit)
    pool.enqueue(jobs)
    agents: dict[int, _Agent] = {}
    running: dict[Future, tuple[Job, Worker]] = {}
    partials: dict[int, list[TrajectoryResult]] = {}
    attempts: dict[int, int] = {}
    lost: list[Job] = []
    max_seen = 0
    circuit_json = json.dumps(circuit.to_json(), sort_keys=True)
    cfg_json = cfg.to_json()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    tick = farm.tick_ms / 1000
    try:
        while pool.queue or running:
            now = time.monotonic() - t0
            action = autoscale_tick(pool, farm.autoscaler, now)
            for wid in action.retire:
                agents.pop(wid).close()
            for w in apply_scale(pool, action, farm.worker_capacity_bytes, now):
                agents[w.id] = _Agent(farm.backend)
            max_seen = max(max_seen, len(pool.workers))
            assignment = negotiate(pool)
            if assignment.unmatchable and not running and len(assignment.unmatchable) == len(pool.queue):
                raise FarmError(
                    f"jobs {list(assignment.unmatchable)} need {requirement} bytes, "
                    f"more than any worker offers ({farm.worker_capacity_bytes})"
                )
            for job, w in assignment.pairs:
                pool.queue.remove(job)
                w.status, w.job = "busy", job.id
                attempts[job.id] = job.attempts + 1
                payload = JobPayload(
                    circuit_json, cfg_json, job.start, job.stop, job.id, job.attempts, (job.id, job.attempts) in faults
                )
                running[agents[w.id].submit(payload)] = (job, w)
            if not running:
                time.sleep(tick)
                continue
            done, _ = wait(list(running), timeout=tick, return_when=FIRST_COMPLETED)
            now = time.monotonic() - t0
            for fut in done:
                job, w = running.pop(fut)
                try:
                    recs = [TrajectoryResult.from_json(d) for d in fut.result()]
                except (WorkerFault, BrokenProcessPool) as exc:
                    log.warning("job %d failed on worker %d: %s", job.id, w.id, exc)
                    # a failed worker is dropped; the autoscaler replaces it
                    agents.pop(w.id).close()
                    pool.remove_worker(w.id)
                    job.attempts += 1
                    if job.attempts > farm.retries:
                        lost.append(job)
                    else:
                        pool.enqueue([job])
                    continue
                partials[job.id] = recs
                w.status, w.job, w.idle_since = "idle", None, now
                if out is not None:
                    _write_json(out / f"{job.id}.json", {
                        "job": job.id,
                        "range": [job.start, job.stop],
                        "records": [rec.to_json() for rec in recs],
                    })
    finally:
        for a in agents.values():
            a.close()
    if lost:
        raise FarmError("jobs exceeded retry limit; lost ranges: " + ", ".join(f"[{j.start},{j.stop})" for j in lost))
    summary = merge([partials[j] for j in sorted(partials)], cfg, r)
    doc = summary.to_json()
    if out is not None:
        (out / "summary.json").write_bytes(summary_bytes(summary))
    return FarmResult(summary, doc, out, attempts, max_seen)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n")


# -------------------------------------------------------- virtual cluster


@dataclass
class VirtualCluster:
    """Tick-driven stand-in for the live farm: jobs take ``job_ticks`` ticks.

    Uses the same :func:`autoscale_tick` and :func:`negotiate` as the real
    controller so limit and liveness properties can be checked cheaply.
    """

    limit: int = DEFAULT_LIMIT
    autoscaler: AutoscalerConfig = field(default_factory=AutoscalerConfig)
    capacity: int = DEFAULT_CAPACITY
    job_ticks: int = 3

    def __post_init__(self):
        self.pool = PoolState(limit=self.limit)
        self.tick_no = 0
        self.remaining: dict[int, int] = {}
        self.done: list[int] = []
        self.max_workers = 0
        self._jobs: dict[int, Job] = {}

    @property
    def now(self) -> float:
        return self.tick_no * self.autoscaler.tick_ms / 1000

    def submit(self, jobs: Iterable[Job]) -> None:
        jobs = list(jobs)
        self._jobs.update({j.id: j for j in jobs})
        self.pool.enqueue(jobs)

    def step(self) -> Assignment:
        now = self.now
        apply_scale(self.pool, autoscale_tick(self.pool, self.autoscaler, now), self.capacity, now)
        assignment = negotiate(self.pool)
        for job, w in assignment.pairs:
            self.pool.queue.remove(job)
            w.status, w.job = "busy", job.id
            self.remaining[w.id] = self.job_ticks
        for w in self.pool.busy:
            self.remaining[w.id] -= 1
            if self.remaining[w.id] <= 0:
                self.done.append(w.job)
                w.status, w.job, w.idle_since = "idle", None, now
                del self.remaining[w.id]
        self.max_workers = max(self.max_workers, len(self.pool.workers))
        self.tick_no += 1
        return assignment

    def run(self, ticks: int) -> None:
        for _ in range(ticks):
            self.step()

    @property
    def drained(self) -> bool:
        return not self.pool.queue and not self.pool.busy

    def conserved(self) -> int:
        """Trajectories accounted for across queued, running and finished jobs."""
        running = [w.job for w in self.pool.busy]
        ids = [j.id for j in self.pool.queue] + running + self.done
        return sum(self._jobs[i].size for i in ids)


__all__ = [
    "Assignment",
    "AutoscalerConfig",
    "FarmConfig",
    "FarmError",
    "FarmResult",
    "Job",
    "PoolState",
    "ScaleAction",
    "VirtualCluster",
    "Worker",
    "autoscale_tick",
    "job_requirement",
    "merge",
    "negotiate",
    "partition",
    "run_farm",
    "summary_bytes",
]
