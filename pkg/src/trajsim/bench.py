"""Benchmark harness: random circuits, parameter sweeps, CSV output, fits."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, replace
from typing import IO, Iterable, Sequence

import numpy as np

from .circuit import Circuit, GateOp, gate
from .noise import ConstantQubitNoiseModel, with_noise
from .statevector import memory_bytes
from .trajectory import TrajectoryConfig, TrajectorySimulator

AXES = ("qubits", "depth", "noise_strength", "fuse_size", "threads", "mode")
CSV_HEADER = ("axis", "value", "rep", "wall_s", "gates_raw", "gates_fused", "inner_products", "deferral_fraction")
MEM_ENV = "TRAJSIM_MEM_BUDGET_BYTES"


class ResourceGuardError(RuntimeError):
    pass


def random_circuit(n: int, depth: int, seed: int = 0, entangler: str = "CZ") -> Circuit:
    """``depth`` cycles of random single-qubit rotations plus a brickwork of 2-qubit gates.

    The brickwork alternates between even and odd pairs.  ``entangler`` is
    ``"CZ"``, ``"SQRT_ISWAP"`` or ``"FSIM"`` (random angles).
    """
    if n < 1 or depth < 0:
        raise ValueError("need n >= 1 and depth >= 0")
    rng = np.random.default_rng(seed)
    ops: list[GateOp] = []
    for t in range(depth):
        for q in range(n):
            name = ("RX", "RY", "RZ")[int(rng.integers(3))]
            ops.append(gate(name, q, phi=float(rng.uniform(0, 2 * math.pi))))
        for q in range(t % 2, n - 1, 2):
            if entangler == "FSIM":
                ops.append(gate("FSIM", q, q + 1, theta=float(rng.uniform(0, math.pi)), phi=float(rng.uniform(0, math.pi))))
            else:
                ops.append(gate(entangler, q, q + 1))
    return Circuit.from_ops(n, ops)


def default_budget() -> int:
    env = os.environ.get(MEM_ENV)
    if env:
        try:
            return int(float(env))
        except ValueError:
            raise ValueError(f"{MEM_ENV} must be a byte count, got {env!r}") from None
    try:
        return os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES") // 2
    except (ValueError, OSError, AttributeError):  # pragma: no cover
        return 1 << 32


def check_memory(n: int, precision: str = "single", noisy: bool = False, budget: int | None = None) -> int:
    """Raise :class:`ResourceGuardError` when a state (and scratch copy) exceeds the budget."""
    need = memory_bytes(n, precision, scratch=noisy)
    budget = default_budget() if budget is None else budget
    if need > budget:
        raise ResourceGuardError(f"{n} qubits need {need} bytes, budget is {budget}")
    return need


@dataclass(frozen=True)
class BenchSpec:
    axis: str
    values: tuple
    repetitions: int = 1
    n: int = 20
    depth: int = 20
    seed: int = 0
    max_fuse_size: int = 4
    noise_strength: float = 0.0
    mode: str = "delayed"
    threads: int = 1
    trajectories: int = 1
    precision: str = "single"
    entangler: str = "CZ"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("sweep range is empty")
        if self.repetitions < 1 or self.trajectories < 1:
            raise ValueError("repetitions and trajectories must be at least 1")

    @classmethod
    def from_json(cls, doc: dict | str) -> "BenchSpec":
        if isinstance(doc, str):
            doc = json.loads(doc)
        doc = dict(doc)
        rng = doc.pop("range", None)
        if rng is not None and "values" not in doc:
            if isinstance(rng, dict):
                doc["values"] = list(range(rng["start"], rng["stop"] + 1, rng.get("step", 1)))
            else:
                doc["values"] = rng
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench spec keys: {sorted(unknown)}")
        return cls(**doc)

    def point(self, value) -> "BenchSpec":
        key = {"qubits": "n", "fuse_size": "max_fuse_size"}.get(self.axis, self.axis)
        cast = str if self.axis == "mode" else (float if self.axis == "noise_strength" else int)
        return replace(self, **{key: cast(value)})


@dataclass(frozen=True)
class BenchRecord:
    axis: str
    value: object
    rep: int
    wall_s: float
    gates_raw: int
    gates_fused: float
    inner_products: float
    deferral_fraction: float

    def row(self) -> list:
        return [self.axis, self.value, self.rep, f"{self.wall_s:.6f}", self.gates_raw,
                _num(self.gates_fused), _num(self.inner_products), f"{self.deferral_fraction:.6f}"]


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.3f}"


def bench_circuit(spec: BenchSpec, rep: int) -> Circuit:
    c = random_circuit(spec.n, spec.depth, spec.seed + rep, spec.entangler)
    if spec.noise_strength > 0:
        c = with_noise(c, ConstantQubitNoiseModel("phase_damp", gamma=spec.noise_strength))
    return c


def run_point(spec: BenchSpec, rep: int, value=None) -> BenchRecord:
    """Time one sweep point.  Setup (circuit build, channel precompute) is not timed."""
    circuit = bench_circuit(spec, rep)
    cfg = TrajectoryConfig(
        r=spec.trajectories,
        base_seed=spec.seed + rep,
        mode=spec.mode,
        precision=spec.precision,
        max_fuse_size=spec.max_fuse_size,
        threads=spec.threads,
    )
    sim = TrajectorySimulator(circuit, cfg)
    t0 = time.perf_counter()
    results = [sim.run(i) for i in range(spec.trajectories)]
    wall = time.perf_counter() - t0
    tot = {k: sum(r.counters[k] for r in results) for k in results[0].counters}
    r = spec.trajectories
    return BenchRecord(
        spec.axis,
        value,
        rep,
        wall,
        circuit.gate_count(),
        tot["fused_applied"] / r,
        tot["inner_products"] / r,
        tot["deferred"] / tot["channels"] if tot["channels"] else 0.0,
    )


def run_bench(spec: BenchSpec, budget: int | None = None, progress=None) -> list[BenchRecord]:
    """One record per (value, repetition).  The memory guard is checked for every point first."""
    points = [spec.point(v) for v in spec.values]
    for p in points:
        check_memory(p.n, p.precision, p.noise_strength > 0, budget)
    out = []
    for v, p in zip(spec.values, points):
        for rep in range(spec.repetitions):
            rec = run_point(p, rep, v)
            out.append(rec)
            if progress:
                progress(rec)
    return out


def write_csv(records: Iterable[BenchRecord], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow(rec.row())


# ------------------------------------------------------------------- fits


def linear_r2(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient of determination of a least-squares line."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0


def log2_slope(n: Sequence[float], seconds: Sequence[float]) -> float:
    """Least-squares slope of ``log2(time)`` against qubit count."""
    return float(np.polyfit(np.asarray(n, float), np.log2(np.asarray(seconds, float)), 1)[0])


def l1_distance(q: Sequence[float], p: Sequence[float]) -> float:
    """``sum_j |q_j - p_j|`` over per-site probabilities."""
    q, p = np.asarray(q, float), np.asarray(p, float)
    if q.shape != p.shape or q.ndim != 1:
        raise ValueError("probability vectors must have equal length")
    if np.any((q < 0) | (q > 1)) or np.any((p < 0) | (p > 1)):
        raise ValueError("entries must lie in [0, 1]")
    return math.fsum(abs(a - b) for a, b in zip(q.tolist(), p.tolist()))


__all__ = [
    "AXES",
    "BenchRecord",
    "BenchSpec",
    "CSV_HEADER",
    "ResourceGuardError",
    "check_memory",
    "default_budget",
    "l1_distance",
    "linear_r2",
    "log2_slope",
    "random_circuit",
    "run_bench",
    "run_point",
    "write_csv",
]
