"""Circuit intermediate representation.

A :class:`Circuit` is an ordered list of :class:`Moment` objects; each moment
holds operations on disjoint qubits.  Operations are unitary gates
(:class:`GateOp`), Kraus channels (:class:`ChannelOp`) or computational-basis
measurements (:class:`Measurement`).  All values are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator, Sequence, Union

import numpy as np

from . import gates as _gates

MAX_GATE_QUBITS = 6

# Default operation durations (ns) when neither the op nor calibration data
# provides one.
DEFAULT_DURATIONS_NS = {"1q": 25.0, "2q": 32.0, "measure": 4000.0}

UNITARY_TOL = {"single": 1e-6, "double": 1e-12}
COMPLETENESS_TOL = 1e-9


class CircuitError(ValueError):
    """Raised for malformed circuits, documents or channel parameters."""


def _frozen(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=complex)
    m.flags.writeable = False
    return m


def matrix_to_json(m: np.ndarray) -> list:
    """Row-major nested list of ``[re, im]`` pairs."""
    m = np.asarray(m)
    # + 0.0 folds -0.0 into 0.0 so documents are stable across round trips
    return [[[float(z.real) + 0.0, float(z.imag) + 0.0] for z in row] for row in m]


def matrix_from_json(data: Any) -> np.ndarray:
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise CircuitError(f"bad matrix encoding: {exc}") from None
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise CircuitError(f"matrix must be a square array of [re, im] pairs, got shape {arr.shape}")
    out = np.empty(arr.shape[:2], dtype=complex)
    out.real, out.imag = arr[..., 0], arr[..., 1]
    return out


def _params_to_json(params: dict) -> dict:
    out = {}
    for key, value in params.items():
        if key == "matrix":
            out[key] = matrix_to_json(value)
        elif key == "kraus":
            out[key] = [matrix_to_json(k) for k in value]
        elif key == "mixture":
            out[key] = [[float(p), matrix_to_json(u)] for p, u in value]
        elif isinstance(value, (list, tuple)):
            out[key] = [None if v is None else float(v) for v in value]
        elif value is None or isinstance(value, (bool, str)):
            out[key] = value
        else:
            out[key] = float(value)
    return out


def params_from_json(params: dict) -> dict:
    out = dict(params)
    if "matrix" in out:
        out["matrix"] = matrix_from_json(out["matrix"])
    if "kraus" in out:
        out["kraus"] = [matrix_from_json(k) for k in out["kraus"]]
    if "mixture" in out:
        try:
            out["mixture"] = [(float(p), matrix_from_json(u)) for p, u in out["mixture"]]
        except (TypeError, ValueError) as exc:
            raise CircuitError(f"bad mixture encoding: {exc}") from None
    return out


def _check_qubits(qubits: Sequence[int]) -> tuple[int, ...]:
    qs = tuple(int(q) for q in qubits)
    if any(q < 0 for q in qs):
        raise CircuitError(f"negative qubit index in {qs}")
    if len(set(qs)) != len(qs):
        raise CircuitError(f"duplicate qubit in operation {qs}")
    if not qs:
        raise CircuitError("operation acts on no qubits")
    return qs


@dataclass(frozen=True, eq=False)
class GateOp:
    name: str
    qubits: tuple[int, ...]
    matrix: np.ndarray
    params: dict = field(default_factory=dict)
    duration_ns: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", _check_qubits(self.qubits))
        object.__setattr__(self, "matrix", _frozen(self.matrix))
        dim = 2 ** len(self.qubits)
        if self.matrix.shape != (dim, dim):
            raise CircuitError(
                f"arity mismatch: gate {self.name} on {len(self.qubits)} qubits "
                f"has matrix of shape {self.matrix.shape}"
            )

    @property
    def kind(self) -> str:
        return self.name

    def to_json(self) -> dict:
        d = {"gate": self.name, "qubits": list(self.qubits), "params": _params_to_json(self.params)}
        if self.duration_ns is not None:
            d["duration_ns"] = float(self.duration_ns)
        return d

    def __eq__(self, other):
        return isinstance(other, GateOp) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash((self.name, self.qubits))


@dataclass(frozen=True, eq=False)
class ChannelOp:
    name: str
    qubits: tuple[int, ...]
    kraus: tuple[np.ndarray, ...]
    params: dict = field(default_factory=dict)
    key: str | None = None
    is_unitary_mixture: bool = False

    def __post_init__(self):
        object.__setattr__(self, "qubits", _check_qubits(self.qubits))
        ks = tuple(_frozen(k) for k in self.kraus)
        if not ks:
            raise CircuitError(f"channel {self.name} has no Kraus operators")
        dim = 2 ** len(self.qubits)
        for k in ks:
            if k.shape != (dim, dim):
                raise CircuitError(
                    f"arity mismatch: channel {self.name} on {len(self.qubits)} qubits "
                    f"has Kraus operator of shape {k.shape}"
                )
        object.__setattr__(self, "kraus", ks)

    @property
    def kind(self) -> str:
        return "channel:" + self.name

    def to_json(self) -> dict:
        d = {"channel": self.name, "qubits": list(self.qubits), "params": _params_to_json(self.params)}
        if self.key is not None:
            d["key"] = self.key
        return d

    def __eq__(self, other):
        return isinstance(other, ChannelOp) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash((self.name, self.qubits))


@dataclass(frozen=True)
class Measurement:
    """Computational-basis measurement recorded under ``key``.

    ``p00_err``/``p11_err`` hold per-qubit readout error probabilities attached
    by a noise model (``None`` = ideal readout).  ``p00_err`` is the chance a
    true 0 is reported as 1; ``p11_err`` the chance a true 1 is reported as 0.
    """

    qubits: tuple[int, ...]
    key: str
    p00_err: tuple[float, ...] | None = None
    p11_err: tuple[float, ...] | None = None
    duration_ns: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", _check_qubits(self.qubits))
        if (self.p00_err is None) != (self.p11_err is None):
            zeros = (0.0,) * len(self.qubits)
            object.__setattr__(self, "p00_err", self.p00_err or zeros)
            object.__setattr__(self, "p11_err", self.p11_err or zeros)
        for name in ("p00_err", "p11_err"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != len(self.qubits):
                    raise CircuitError(f"{name} needs one entry per measured qubit")
                if any(not 0.0 <= v <= 1.0 for v in val):
                    raise CircuitError(f"{name} entries must lie in [0, 1]")
                object.__setattr__(self, name, val)

    @property
    def kind(self) -> str:
        return "measure"

    @property
    def has_readout_error(self) -> bool:
        return self.p00_err is not None or self.p11_err is not None

    def without_readout(self) -> "Measurement":
        return replace(self, p00_err=None, p11_err=None)

    def to_json(self) -> dict:
        d: dict[str, Any] = {"measure": list(self.qubits), "key": self.key}
        if self.has_readout_error:
            d["readout"] = {"p00_err": list(self.p00_err), "p11_err": list(self.p11_err)}
        if self.duration_ns is not None:
            d["duration_ns"] = float(self.duration_ns)
        return d


Operation = Union[GateOp, ChannelOp, Measurement]


@dataclass(frozen=True)
class Moment:
    operations: tuple[Operation, ...] = ()

    def __post_init__(self):
        ops = tuple(self.operations)
        seen: set[int] = set()
        for op in ops:
            clash = seen.intersection(op.qubits)
            if clash:
                raise CircuitError(f"duplicate qubit in moment: qubit {min(clash)}")
            seen.update(op.qubits)
        object.__setattr__(self, "operations", ops)

    @property
    def qubits(self) -> frozenset[int]:
        return frozenset(q for op in self.operations for q in op.qubits)

    def __iter__(self) -> Iterator[Operation]:
        return iter(self.operations)

    def __len__(self) -> int:
        return len(self.operations)


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    moments: tuple[Moment, ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise CircuitError("a circuit needs at least one qubit")
        moments = tuple(m if isinstance(m, Moment) else Moment(tuple(m)) for m in self.moments)
        for i, m in enumerate(moments):
            for op in m:
                bad = [q for q in op.qubits if q >= self.n_qubits]
                if bad:
                    raise CircuitError(
                        f"qubit {bad[0]} out of range for {self.n_qubits}-qubit circuit (moment {i})"
                    )
        object.__setattr__(self, "moments", moments)

    @classmethod
    def from_ops(cls, n_qubits: int, ops: Iterable[Operation]) -> "Circuit":
        """Pack operations into moments, earliest-fit (each op after the last op on its qubits)."""
        frontier = [0] * n_qubits
        layers: list[list[Operation]] = []
        for op in ops:
            t = max(frontier[q] for q in op.qubits)
            while len(layers) <= t:
                layers.append([])
            layers[t].append(op)
            for q in op.qubits:
                frontier[q] = t + 1
        return cls(n_qubits, tuple(Moment(tuple(layer)) for layer in layers))

    def all_operations(self) -> Iterator[Operation]:
        for m in self.moments:
            yield from m.operations

    @property
    def has_channels(self) -> bool:
        return any(isinstance(op, ChannelOp) for op in self.all_operations())

    @property
    def needs_scratch(self) -> bool:
        """True when some channel is not a unitary mixture (trajectory memory doubles)."""
        return any(isinstance(op, ChannelOp) and not op.is_unitary_mixture for op in self.all_operations())

    def gate_count(self) -> int:
        return sum(isinstance(op, GateOp) for op in self.all_operations())

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "moments": [[op.to_json() for op in m] for m in self.moments],
        }


# ---------------------------------------------------------------- builders


def gate(name: str, *qubits: int, duration_ns: float | None = None, **params) -> GateOp:
    """Build a named gate, e.g. ``gate("RZ", 0, phi=0.3)`` or ``gate("U", 0, 1, matrix=m)``."""
    name = name.upper()
    if name == "U":
        if "matrix" not in params:
            raise CircuitError("gate U requires a 'matrix' parameter")
        m = np.asarray(params["matrix"], dtype=complex)
        return GateOp("U", qubits, m, {"matrix": m}, duration_ns)
    if name not in _gates.NAMED_GATES:
        raise CircuitError(f"unknown gate name {name!r}")
    arity, names, builder = _gates.NAMED_GATES[name]
    if len(qubits) != arity:
        raise CircuitError(f"arity mismatch: {name} takes {arity} qubit(s), got {len(qubits)}")
    missing = [p for p in names if p not in params]
    extra = [p for p in params if p not in names]
    if missing or extra:
        raise CircuitError(f"gate {name} expects params {list(names)}, got {sorted(params)}")
    vals = {p: float(params[p]) for p in names}
    return GateOp(name, qubits, builder(*(vals[p] for p in names)), vals, duration_ns)


def measure(*qubits: int, key: str) -> Measurement:
    return Measurement(tuple(qubits), key)


# --------------------------------------------------------------- validation


def is_unitary(m: np.ndarray, tol: float) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) < tol)


def completeness_error(kraus: Sequence[np.ndarray]) -> float:
    """max-norm of ``sum K^dag K - I``."""
    acc = sum(np.asarray(k).conj().T @ np.asarray(k) for k in kraus)
    return float(np.max(np.abs(acc - np.eye(acc.shape[0]))))


def proportional_to_unitary(k: np.ndarray, tol: float = 1e-9) -> bool:
    kk = np.asarray(k).conj().T @ np.asarray(k)
    c = np.trace(kk).real / kk.shape[0]
    return bool(np.max(np.abs(kk - c * np.eye(kk.shape[0]))) <= tol * max(1.0, c))


def validate(circuit: Circuit, precision: str = "double") -> list[str]:
    """Return human-readable invariant violations (empty list = valid)."""
    tol = UNITARY_TOL[precision]
    problems: list[str] = []
    for mi, m in enumerate(circuit.moments):
        seen: set[int] = set()
        for oi, op in enumerate(m):
            where = f"moment {mi}, op {oi}"
            if seen.intersection(op.qubits):
                problems.append(f"duplicate qubit in moment at {where}")
            seen.update(op.qubits)
            if any(q >= circuit.n_qubits for q in op.qubits):
                problems.append(f"qubit out of range at {where}")
            if isinstance(op, GateOp):
                if len(op.qubits) > MAX_GATE_QUBITS:
                    problems.append(f"gate acts on more than {MAX_GATE_QUBITS} qubits at {where}")
                if not np.all(np.isfinite(op.matrix)) or not is_unitary(op.matrix, tol):
                    problems.append(f"non-unitary matrix at {where}")
                if op.duration_ns is not None and not op.duration_ns > 0:
                    problems.append(f"non-positive duration at {where}")
            elif isinstance(op, ChannelOp):
                err = completeness_error(op.kraus)
                if not err < COMPLETENESS_TOL:
                    problems.append(f"non-trace-preserving channel at {where} (|sum K^dag K - I| = {err:.3g})")
                if op.is_unitary_mixture and not all(proportional_to_unitary(k) for k in op.kraus):
                    problems.append(f"channel flagged as unitary mixture is not one at {where}")
    return problems


def strip_noise(circuit: Circuit) -> Circuit:
    """Remove every channel and readout annotation.

    Moments that become empty are dropped; moments that were already empty stay.
    """
    moments = []
    for m in circuit.moments:
        kept = tuple(
            op.without_readout() if isinstance(op, Measurement) else op
            for op in m
            if not isinstance(op, ChannelOp)
        )
        if kept or not m.operations:
            moments.append(Moment(kept))
    return Circuit(circuit.n_qubits, tuple(moments))


def op_duration_ns(op: Operation, durations: dict | None = None) -> float:
    """Duration of an operation: explicit value, then calibration table, then defaults."""
    explicit = getattr(op, "duration_ns", None)
    if explicit is not None:
        return float(explicit)
    if isinstance(op, ChannelOp):
        return 0.0
    table = dict(DEFAULT_DURATIONS_NS)
    if durations:
        table.update(durations)
    if isinstance(op, Measurement):
        return float(table["measure"])
    return float(table["1q"] if len(op.qubits) == 1 else table["2q"])


def moment_duration_ns(moment: Moment, durations: dict | None = None) -> float:
    return max((op_duration_ns(op, durations) for op in moment), default=0.0)


def finite_or_none(x: float) -> float | None:
    return None if x is None or math.isinf(x) else x
