"""Quantum-trajectory simulation with delayed inner products.

Every channel gets precomputed lower bounds ``pbar_i <= <psi|K_i^dag K_i|psi>``
(the smallest squared singular value of ``K_i``).  A uniform draw that lands
inside the cumulative lower bounds selects ``K_i`` without touching the state:
the operator joins the pending stream of unitaries and is fused with them
later.  Only draws beyond ``s = sum(pbar_i)`` force a flush and an exact pass
over ``p_i - pbar_i``.  Unitary mixtures have ``s = 1`` and never flush.

``mode="conventional"`` always flushes and samples from the exact ``p_i``; it
is kept as the baseline.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .circuit import ChannelOp, Circuit, CircuitError, GateOp, Measurement, proportional_to_unitary
from .fusion import DEFAULT_MAX_FUSE_SIZE, FuseConfig, apply_on_rows, fusion_plan
from .statevector import (
    StateError,
    StateVector,
    apply_gate,
    expectation_pauli,
    normalize,
    parse_pauli,
    sample_bitstrings,
)

MODES = ("delayed", "conventional")
LEAK_TOL = 1e-6
JACOBI_TOL = 1e-12


class LeakError(RuntimeError):
    """Sampling draw fell outside the channel's probability mass."""


# ------------------------------------------------------------ lower bounds


def _jacobi_min_eig(a: np.ndarray) -> float:
    """Smallest eigenvalue of a real symmetric matrix by cyclic Jacobi sweeps."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    for _ in range(100):
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off <= JACOBI_TOL * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * rp - s * rq, s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
    return float(np.min(np.diag(a)))


def kraus_lower_bound(k: np.ndarray) -> float:
    """``sigma_min(K)**2``, a state-independent lower bound on ``<psi|K^dag K|psi>``."""
    k = np.asarray(k, dtype=complex)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError("Kraus operator must be square")
    if k.shape == (1, 1):
        return float(abs(k[0, 0]) ** 2)
    if k.shape == (2, 2):
        fro = float(np.sum(np.abs(k) ** 2))
        det = abs(k[0, 0] * k[1, 1] - k[0, 1] * k[1, 0]) ** 2
        disc = max(0.0, fro * fro - 4 * det)
        # stable form of (fro - sqrt(disc)) / 2
        return max(0.0, 2 * det / (fro + math.sqrt(disc))) if fro > 0 else 0.0
    h = k.conj().T @ k
    d = k.shape[0]
    if np.max(np.abs(h - np.eye(d) * (np.trace(h).real / d))) < 1e-14:
        return float(np.trace(h).real / d)  # scaled unitary
    # Hermitian h -> real symmetric [[Re, -Im], [Im, Re]]; same spectrum, doubled
    big = np.block([[h.real, -h.imag], [h.imag, h.real]])
    return max(0.0, _jacobi_min_eig(big))


@dataclass(frozen=True, eq=False)
class BoundedKraus:
    channel: ChannelOp
    lower_bounds: tuple[float, ...]
    s: float
    kdk: tuple[np.ndarray, ...] = field(repr=False)
    deferred: tuple[np.ndarray | None, ...] = field(repr=False)  # None: identity, skip
    unitary: tuple[bool, ...] = field(repr=False)
    cumulative: np.ndarray = field(repr=False)

    @classmethod
    def from_channel(cls, ch: ChannelOp) -> "BoundedKraus":
        lbs = [kraus_lower_bound(k) for k in ch.kraus]
        s = math.fsum(lbs)
        unitary = tuple(proportional_to_unitary(k) for k in ch.kraus)
        if ch.is_unitary_mixture or all(unitary):
            if abs(s - 1) > 1e-9:
                raise CircuitError(f"unitary mixture {ch.name} has weights summing to {s!r}")
            lbs = [x / s for x in lbs]
            s = 1.0
        elif s > 1 + 1e-9:
            raise CircuitError(f"channel {ch.name} has lower bounds summing to {s!r} > 1")
        deferred = []
        for k, pb, u in zip(ch.kraus, lbs, unitary):
            if pb <= 0:
                deferred.append(None if u else k)
                continue
            m = k / math.sqrt(pb) if u else k
            eye = np.eye(k.shape[0])
            deferred.append(None if u and np.max(np.abs(m - eye)) < 1e-14 else m)
        cum = np.cumsum(lbs)
        if s == 1.0:
            cum[-1] = 1.0
        return cls(
            ch,
            tuple(lbs),
            s,
            tuple(k.conj().T @ k for k in ch.kraus),
            tuple(deferred),
            unitary,
            cum,
        )


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class TrajectoryConfig:
    r: int = 1000
    base_seed: int = 0
    mode: str = "delayed"
    observables: tuple[str, ...] = ()
    histogram: bool = False
    precision: str = "single"
    max_fuse_size: int = DEFAULT_MAX_FUSE_SIZE
    threads: int = 1

    def __post_init__(self):
        if int(self.r) < 1:
            raise ValueError("trajectory count r must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.base_seed < 0:
            raise ValueError("base seed must be non-negative")
        FuseConfig(self.max_fuse_size)
        object.__setattr__(self, "observables", tuple(self.observables))
        for obs in self.observables:
            parse_pauli(obs)

    def to_json(self) -> dict:
        return {
            "r": self.r,
            "base_seed": self.base_seed,
            "mode": self.mode,
            "observables": list(self.observables),
            "histogram": self.histogram,
            "precision": self.precision,
            "max_fuse_size": self.max_fuse_size,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrajectoryConfig":
        doc = dict(doc)
        doc["observables"] = tuple(doc.get("observables", ()))
        return cls(**doc)


def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    """Independent stream per trajectory, fixed by ``(base_seed, index)`` alone."""
    return np.random.default_rng([int(base_seed), int(index)])


COUNTERS = ("channels", "deferred", "inner_products", "flushes", "fused_applied", "gates")


@dataclass
class TrajectoryResult:
    index: int
    measurements: dict[str, str] = field(default_factory=dict)
    kraus_indices: dict[str, int] = field(default_factory=dict)
    observables: dict[str, float] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=lambda: dict.fromkeys(COUNTERS, 0))
    final_bitstring: str | None = None
    state: StateVector | None = field(default=None, repr=False, compare=False)

    def to_json(self) -> dict:
        d = {
            "index": self.index,
            "measurements": dict(self.measurements),
            "kraus_indices": dict(self.kraus_indices),
            "observables": dict(self.observables),
            "counters": dict(self.counters),
        }
        if self.final_bitstring is not None:
            d["final"] = self.final_bitstring
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrajectoryResult":
        return cls(
            d["index"],
            dict(d["measurements"]),
            dict(d["kraus_indices"]),
            dict(d["observables"]),
            dict(d.get("counters", {})),
            d.get("final"),
        )


@dataclass(frozen=True)
class ObservableEstimate:
    mean: float
    stderr: float | None
    r: int

    def to_json(self) -> dict:
        d = {"mean": self.mean, "r": self.r}
        if self.stderr is not None:
            d["stderr"] = self.stderr
        return d


def estimate_from_values(values: Sequence[float]) -> ObservableEstimate:
    """Mean and standard error (sample std / sqrt(r)); stderr is None below 2 samples."""
    r = len(values)
    if r == 0:
        raise ValueError("no samples")
    mean = math.fsum(values) / r
    if r < 2:
        return ObservableEstimate(mean, None, r)
    var = math.fsum((v - mean) ** 2 for v in values) / (r - 1)
    return ObservableEstimate(mean, math.sqrt(var / r), r)


def apply_readout_error(bits: str, p00_err: Sequence[float], p11_err: Sequence[float], rng: np.random.Generator) -> str:
    """Flip each recorded bit: 0 -> 1 with ``p00_err``, 1 -> 0 with ``p11_err``."""
    if not len(bits) == len(p00_err) == len(p11_err):
        raise ValueError("need one readout parameter per bit")
    draws = rng.random(len(bits))
    out = []
    for b, u, e0, e1 in zip(bits, draws, p00_err, p11_err):
        if b == "0":
            out.append("1" if u < e0 else "0")
        else:
            out.append("0" if u < e1 else "1")
    return "".join(out)


# ------------------------------------------------------------ state helpers


def _slices(state: StateVector, qubits: Sequence[int]) -> list[np.ndarray]:
    """Views of the amplitudes for each basis value of ``qubits`` (``qubits[0]`` = MSB)."""
    n, m = state.n, len(qubits)
    t = state.data.reshape((2,) * n)
    out = []
    for a in range(1 << m):
        idx: list = [slice(None)] * n
        for j, q in enumerate(qubits):
            idx[n - 1 - q] = (a >> (m - 1 - j)) & 1
        out.append(t[tuple(idx)])
    return out


def reduced_gram(state: StateVector, qubits: Sequence[int]) -> np.ndarray:
    """``G[a, b] = sum_r conj(psi[r, a]) psi[r, b]`` over the remaining qubits.

    Computed from strided views of the state, so no full copy is made.
    """
    sl = _slices(state, qubits)
    d = len(sl)
    g = np.empty((d, d), dtype=complex)
    for a in range(d):
        for b in range(a, d):
            g[a, b] = np.vdot(sl[a], sl[b])
            g[b, a] = np.conj(g[a, b])
    return g


def kraus_probabilities(state: StateVector, bk: BoundedKraus) -> np.ndarray:
    """Exact ``p_i`` for the (normalized) current state."""
    g = reduced_gram(state, bk.channel.qubits)
    nrm = g.trace().real
    if not nrm > 0:
        raise StateError("zero state")
    return np.array([float(np.sum(m * g).real) for m in bk.kdk]) / nrm


# ------------------------------------------------------------------ engine


@dataclass
class _Pending:
    key: tuple
    qubits: tuple[int, ...]
    matrix: np.ndarray


class _LRU(OrderedDict):
    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def get_or(self, key, make):
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = make()
        self[key] = val
        if len(self) > self.size:
            self.popitem(last=False)
        return val


class TrajectorySimulator:
    """Compiled circuit plus caches; runs trajectories by index."""

    def __init__(self, circuit: Circuit, cfg: TrajectoryConfig | None = None, cache_size: int = 4096):
        self.circuit = circuit
        self.cfg = cfg or TrajectoryConfig()
        self.program: list[tuple[str, object]] = []
        for op in circuit.all_operations():
            if isinstance(op, GateOp):
                self.program.append(("gate", op))
            elif isinstance(op, ChannelOp):
                self.program.append(("channel", BoundedKraus.from_channel(op)))
            elif isinstance(op, Measurement):
                self.program.append(("measure", op))
            else:  # pragma: no cover
                raise CircuitError(f"unsupported operation {op!r}")
        for obs in self.cfg.observables:
            if any(q >= circuit.n_qubits for q in parse_pauli(obs)):
                raise CircuitError(f"observable {obs!r} refers to qubits outside the circuit")
        self._plans = _LRU(cache_size)
        self._matrices = _LRU(cache_size)
        self.keys = sorted(
            {op.key for kind, op in self.program if kind == "measure"}
            | {bk.channel.key for kind, bk in self.program if kind == "channel" and bk.channel.key}
        )

    # ---- pending stream
    def _flush(self, state: StateVector, pending: list[_Pending], counters: dict) -> None:
        if not pending:
            return
        counters["flushes"] += 1
        structure = tuple(p.qubits for p in pending)
        plan = self._plans.get_or(
            (structure, self.cfg.max_fuse_size),
            lambda: [
                (tuple(idx), tuple(sorted({q for i in idx for q in structure[i]})))
                for idx in fusion_plan(structure, self.cfg.max_fuse_size)
            ],
        )
        for idx, qubits in plan:
            if len(idx) == 1:
                p = pending[idx[0]]
                apply_gate(state, p.matrix, p.qubits)
            else:
                parts = [pending[i] for i in idx]
                m = self._matrices.get_or(tuple(p.key for p in parts), lambda: _product(parts, qubits))
                apply_gate(state, m, qubits)
            counters["fused_applied"] += 1
        pending.clear()

    def sample_channel(
        self,
        state: StateVector,
        bk: BoundedKraus,
        rng: np.random.Generator,
        pending: list[_Pending],
        counters: dict,
        key: tuple,
    ) -> tuple[int, bool]:
        """Select a Kraus operator; returns ``(index, needs_normalization)``."""
        counters["channels"] += 1
        u = rng.random()
        if self.cfg.mode == "delayed" and u < bk.s:
            i = int(np.searchsorted(bk.cumulative, u, side="right"))
            i = min(i, len(bk.lower_bounds) - 1)
            counters["deferred"] += 1
            m = bk.deferred[i]
            if m is not None:
                pending.append(_Pending(key + (i,), bk.channel.qubits, m))
            return i, not bk.unitary[i]
        self._flush(state, pending, counters)
        p = kraus_probabilities(state, bk)
        counters["inner_products"] += len(p)
        if self.cfg.mode == "delayed":
            i = _select(u - bk.s, np.maximum(p - np.array(bk.lower_bounds), 0.0), p)
        else:
            i = _select(u, p, p)
        # scaled by the true norm, so the state leaves the exact pass normalized
        apply_gate(state, bk.channel.kraus[i] / math.sqrt(p[i] * _norm2_from(state)), bk.channel.qubits)
        return i, False

    def _measure(self, state: StateVector, m: Measurement, rng: np.random.Generator) -> str:
        normalize(state)
        a = state.data
        probs = a.real.astype(float) ** 2 + a.imag.astype(float) ** 2
        cdf = np.cumsum(probs)
        pick = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        pick = min(pick, probs.size - 1)
        mask = sum(1 << q for q in m.qubits)
        idx = np.arange(a.size, dtype=np.int64)
        a[(idx & mask) != (pick & mask)] = 0
        normalize(state)
        bits = "".join("1" if (pick >> q) & 1 else "0" for q in m.qubits)
        if m.has_readout_error:
            bits = apply_readout_error(bits, m.p00_err, m.p11_err, rng)
        return bits

    def run(self, index: int, keep_state: bool = False) -> TrajectoryResult:
        cfg = self.cfg
        rng = trajectory_rng(cfg.base_seed, index)
        state = StateVector.zero(self.circuit.n_qubits, cfg.precision, threads=cfg.threads)
        res = TrajectoryResult(index)
        counters = res.counters
        pending: list[_Pending] = []
        dirty = False
        for pos, (kind, item) in enumerate(self.program):
            if kind == "gate":
                pending.append(_Pending(("g", pos), item.qubits, item.matrix))
                counters["gates"] += 1
            elif kind == "channel":
                i, nn = self.sample_channel(state, item, rng, pending, counters, ("k", pos))
                dirty |= nn
                if item.channel.key:
                    res.kraus_indices[item.channel.key] = i
            else:
                self._flush(state, pending, counters)
                res.measurements[item.key] = self._measure(state, item, rng)
                dirty = False
        self._flush(state, pending, counters)
        if dirty:
            normalize(state)
        for obs in cfg.observables:
            res.observables[obs] = expectation_pauli(state, obs)
        if cfg.histogram:
            res.final_bitstring = sample_bitstrings(state, 1, rng)[0]
        if keep_state:
            res.state = state
        return res

    def run_range(self, start: int, stop: int) -> list[TrajectoryResult]:
        return [self.run(i) for i in range(start, stop)]


def _norm2_from(state: StateVector) -> float:
    a = state.data
    return float(np.vdot(a, a).real)


def _select(u: float, weights: np.ndarray, p: np.ndarray) -> int:
    cum = np.cumsum(weights)
    i = int(np.searchsorted(cum, u, side="right"))
    if i < len(weights):
        return i
    if u - cum[-1] > LEAK_TOL:
        raise LeakError(f"sampling residual {u - cum[-1]:.3g} exceeds tolerance")
    nz = np.nonzero(p > 0)[0]
    return int(nz[-1]) if nz.size else len(p) - 1


def _product(parts: Sequence[_Pending], qubits: tuple[int, ...]) -> np.ndarray:
    t = len(qubits)
    out = np.eye(1 << t, dtype=complex)
    order = list(qubits)
    for p in parts:
        out = apply_on_rows(out, p.matrix, [order.index(q) for q in p.qubits], t)
    return out


# ----------------------------------------------------------------- drivers


def run_trajectory(circuit: Circuit, cfg: TrajectoryConfig, trajectory_index: int) -> TrajectoryResult:
    return TrajectorySimulator(circuit, cfg).run(trajectory_index)


def sample_channel_delayed(state, bk, rng, deferred, counters=None) -> int:
    """One delayed-mode draw; ``deferred`` is the pending list of the caller."""
    sim = _channel_only_sim(state, "delayed")
    return sim.sample_channel(state, bk, rng, deferred, counters or dict.fromkeys(COUNTERS, 0), ("k", id(bk)))[0]


def sample_channel_conventional(state, bk, rng, counters=None) -> int:
    sim = _channel_only_sim(state, "conventional")
    return sim.sample_channel(state, bk, rng, [], counters or dict.fromkeys(COUNTERS, 0), ("k", id(bk)))[0]


def _channel_only_sim(state: StateVector, mode: str) -> TrajectorySimulator:
    return TrajectorySimulator(Circuit(state.n, ()), TrajectoryConfig(r=1, mode=mode, precision=state.precision))


@dataclass
class RunSummary:
    config: TrajectoryConfig
    records: list[TrajectoryResult]

    @property
    def counters(self) -> dict[str, int]:
        out = dict.fromkeys(COUNTERS, 0)
        for rec in self.records:
            for k, v in rec.counters.items():
                out[k] = out.get(k, 0) + v
        return out

    @property
    def deferral_fraction(self) -> float:
        c = self.counters
        return c["deferred"] / c["channels"] if c["channels"] else 0.0

    def estimates(self) -> dict[str, ObservableEstimate]:
        if not self.records:
            return {}
        return {
            obs: estimate_from_values([rec.observables[obs] for rec in self.records]) for obs in self.config.observables
        }

    def histograms(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for rec in self.records:
            items = list(rec.measurements.items())
            if rec.final_bitstring is not None:
                items.append(("final", rec.final_bitstring))
            for key, bits in items:
                h = out.setdefault(key, {})
                h[bits] = h.get(bits, 0) + 1
        return {k: dict(sorted(v.items())) for k, v in sorted(out.items())}

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "trajectories": len(self.records),
            "estimates": {k: v.to_json() for k, v in self.estimates().items()},
            "histograms": self.histograms(),
            "counters": self.counters,
        }


def run_trajectories(circuit: Circuit, cfg: TrajectoryConfig, indices: Iterable[int] | None = None) -> RunSummary:
    sim = TrajectorySimulator(circuit, cfg)
    idx = range(cfg.r) if indices is None else indices
    return RunSummary(cfg, [sim.run(i) for i in idx])


def estimate(circuit: Circuit, cfg: TrajectoryConfig) -> dict[str, ObservableEstimate]:
    return run_trajectories(circuit, cfg).estimates()


def write_stream(records: Iterable[TrajectoryResult], fh: IO[str]) -> None:
    """One JSON object per line, keys sorted."""
    for rec in records:
        fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_stream(fh: IO[str]) -> list[TrajectoryResult]:
    return [TrajectoryResult.from_json(json.loads(line)) for line in fh if line.strip()]


__all__ = [
    "BoundedKraus",
    "LeakError",
    "ObservableEstimate",
    "RunSummary",
    "TrajectoryConfig",
    "TrajectoryResult",
    "TrajectorySimulator",
    "apply_readout_error",
    "estimate",
    "estimate_from_values",
    "kraus_lower_bound",
    "kraus_probabilities",
    "read_stream",
    "reduced_gram",
    "run_trajectories",
    "run_trajectory",
    "sample_channel_conventional",
    "sample_channel_delayed",
    "trajectory_rng",
    "write_stream",
]
