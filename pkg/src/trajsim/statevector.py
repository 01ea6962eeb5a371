"""Full state vector storage and the reference gate-application kernel.

Amplitude index convention: qubit ``q`` is bit ``q`` of the amplitude index
(qubit 0 is the least significant bit).  Bitstrings printed by this package
list qubit 0 first.

Two storage layouts are supported:

* interleaved -- a plain complex array (real and imaginary parts alternate);
* blocked(k) -- ``k`` real parts followed by ``k`` imaginary parts, repeated,
  i.e. a real array of shape ``(2**n / k, 2, k)``.  States smaller than one
  block are zero-padded to ``k`` lanes.
"""

from __future__ import annotations

import itertools
import math
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

PRECISIONS = {"single": (np.complex64, np.float32), "double": (np.complex128, np.float64)}
LANE_COUNTS = (4, 8, 16, 32)
# Below this many qubits thread fan-out only adds overhead.
MIN_THREADED_QUBITS = 17
DUMP_MAGIC = b"QSV1"
_DUMP_HEADER = struct.Struct("<4sIII")


class StateError(ValueError):
    pass


class StateVector:
    """An ``n``-qubit pure state.

    ``lanes=None`` selects the interleaved layout, an integer ``k`` the blocked
    layout.  ``threads`` controls the data-parallel split of the gate kernel.
    """

    def __init__(self, n: int, precision: str = "single", lanes: int | None = None, threads: int = 1, data=None):
        if n < 1:
            raise StateError("need at least one qubit")
        if precision not in PRECISIONS:
            raise StateError(f"precision must be one of {sorted(PRECISIONS)}")
        if lanes is not None and lanes not in LANE_COUNTS:
            raise StateError(f"lane count must be one of {LANE_COUNTS}")
        self.n = n
        self.precision = precision
        self.lanes = lanes
        self.threads = max(1, int(threads))
        if data is None:
            data = np.zeros(self._storage_len(), dtype=self.storage_dtype)
            data[0] = 1
        data = np.asarray(data)
        if data.dtype != self.storage_dtype or data.shape != (self._storage_len(),):
            raise StateError("storage does not match the declared precision/layout")
        self.data = data

    # ------------------------------------------------------------ layout
    @property
    def complex_dtype(self):
        return PRECISIONS[self.precision][0]

    @property
    def real_dtype(self):
        return PRECISIONS[self.precision][1]

    @property
    def storage_dtype(self):
        return self.complex_dtype if self.lanes is None else self.real_dtype

    @property
    def size(self) -> int:
        return 1 << self.n

    def _storage_len(self) -> int:
        if self.lanes is None:
            return self.size
        return 2 * max(self.size, self.lanes)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    @property
    def layout(self) -> str:
        return "interleaved" if self.lanes is None else f"blocked({self.lanes})"

    def blocks(self) -> np.ndarray:
        """Blocked storage viewed as ``(n_blocks, 2, k)``."""
        if self.lanes is None:
            raise StateError("state is not in blocked layout")
        return self.data.reshape(-1, 2, self.lanes)

    @classmethod
    def zero(cls, n: int, precision: str = "single", lanes: int | None = None, threads: int = 1) -> "StateVector":
        return cls(n, precision, lanes, threads)

    @classmethod
    def from_amplitudes(cls, amps, precision: str = "single", lanes: int | None = None, threads: int = 1) -> "StateVector":
        amps = np.asarray(amps)
        n = int(round(math.log2(amps.size)))
        if amps.ndim != 1 or 1 << n != amps.size:
            raise StateError("amplitude count must be a power of two")
        sv = cls(n, precision, None, threads, np.array(amps, dtype=PRECISIONS[precision][0]))
        return sv if lanes is None else sv.to_blocked(lanes)

    def amplitudes(self) -> np.ndarray:
        """Amplitudes as a complex array in index order (a copy for blocked states)."""
        if self.lanes is None:
            return self.data
        b = self.blocks()
        return (b[:, 0, :] + 1j * b[:, 1, :]).astype(self.complex_dtype).reshape(-1)[: self.size]

    def to_blocked(self, lanes: int) -> "StateVector":
        if lanes not in LANE_COUNTS:
            raise StateError(f"lane count must be one of {LANE_COUNTS}")
        amps = self.amplitudes()
        padded = np.zeros(max(self.size, lanes), dtype=self.complex_dtype)
        padded[: self.size] = amps
        blocks = np.empty((padded.size // lanes, 2, lanes), dtype=self.real_dtype)
        blocks[:, 0, :] = padded.real.reshape(-1, lanes)
        blocks[:, 1, :] = padded.imag.reshape(-1, lanes)
        return StateVector(self.n, self.precision, lanes, self.threads, blocks.reshape(-1))

    def to_interleaved(self) -> "StateVector":
        return StateVector(self.n, self.precision, None, self.threads, np.array(self.amplitudes(), dtype=self.complex_dtype))

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.precision, self.lanes, self.threads, self.data.copy())

    def __repr__(self) -> str:
        return f"StateVector(n={self.n}, precision={self.precision!r}, layout={self.layout!r})"


def memory_bytes(n: int, precision: str = "single", scratch: bool = False) -> int:
    """Bytes needed for an ``n``-qubit state: ``8 * 2**n`` in single precision.

    ``scratch`` doubles the figure for trajectories with non-unitary channels.
    """
    per_amp = 8 if precision == "single" else 16
    return per_amp * (1 << n) * (2 if scratch else 1)


# ------------------------------------------------------------------ kernel

_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(threads: int) -> ThreadPoolExecutor:
    if threads not in _POOLS:
        _POOLS[threads] = ThreadPoolExecutor(max_workers=threads, thread_name_prefix="trajsim-kernel")
    return _POOLS[threads]


def _chunk_bits(n: int, q: int) -> int:
    # Fixed by problem shape only, so results never depend on the thread count.
    return 0 if n < MIN_THREADED_QUBITS else min(n - q, 3)


def _check_gate(n: int, matrix: np.ndarray, qubits: Sequence[int]) -> None:
    if len(set(qubits)) != len(qubits):
        raise StateError(f"duplicate gate qubits {tuple(qubits)}")
    if any(q < 0 or q >= n for q in qubits):
        raise StateError(f"qubit out of range in {tuple(qubits)} for {n} qubits")
    dim = 1 << len(qubits)
    if matrix.shape != (dim, dim):
        raise StateError(f"dimension mismatch: {matrix.shape} matrix on {len(qubits)} qubit(s)")


def _apply_subvectors(view: np.ndarray, mt: np.ndarray) -> None:
    """Multiply every trailing subvector of ``view`` by the matrix whose transpose is ``mt``."""
    dim = mt.shape[0]
    v = view.reshape(-1, dim)
    view[...] = (v @ mt).reshape(view.shape)


def apply_matrix(psi: np.ndarray, n: int, matrix: np.ndarray, qubits: Sequence[int], threads: int = 1) -> None:
    """In-place ``psi <- U psi`` on a complex amplitude array.

    The state is viewed as ``2**(n-q)`` subvectors of length ``2**q`` (one per
    assignment of the non-gate qubits); each is read, multiplied and written
    back.  ``matrix`` need not be unitary.
    """
    q = len(qubits)
    t = psi.reshape((2,) * n)
    gate_axes = [n - 1 - b for b in qubits]
    rest = [a for a in range(n) if a not in gate_axes]
    view = t.transpose(rest + gate_axes)
    mt = np.ascontiguousarray(np.asarray(matrix).T, dtype=psi.dtype)
    c = _chunk_bits(n, q)
    if c == 0:
        _apply_subvectors(view, mt)
        return
    subs = [view[idx] for idx in itertools.product((0, 1), repeat=c)]
    if threads > 1:
        list(_pool(threads).map(lambda s: _apply_subvectors(s, mt), subs))
    else:
        for s in subs:
            _apply_subvectors(s, mt)


def apply_gate_naive(state: StateVector, matrix, qubits: Sequence[int]) -> StateVector:
    """Apply ``matrix`` to ``qubits`` of an interleaved state (in place; returns ``state``).

    ``qubits[0]`` is the most significant bit of the matrix index.
    """
    matrix = np.asarray(matrix)
    _check_gate(state.n, matrix, qubits)
    if state.lanes is not None:
        raise StateError("apply_gate_naive needs the interleaved layout")
    apply_matrix(state.data, state.n, matrix, qubits, state.threads if state.n >= MIN_THREADED_QUBITS else 1)
    return state


def apply_gate(state: StateVector, matrix, qubits: Sequence[int]) -> StateVector:
    """Apply a gate using the kernel that matches the state's layout."""
    if state.lanes is None:
        return apply_gate_naive(state, matrix, qubits)
    from .blocked import apply_gate_blocked

    return apply_gate_blocked(state, matrix, qubits)


# ------------------------------------------------------------ reductions


def _real_view(state: StateVector) -> np.ndarray:
    return state.data.view(state.real_dtype) if state.lanes is None else state.data


def norm2(state: StateVector) -> float:
    """<psi|psi>."""
    x = _real_view(state)
    return float(np.dot(x, x))


def normalize(state: StateVector) -> StateVector:
    """Scale to unit norm in place."""
    nrm = norm2(state)
    if not nrm > 0 or not math.isfinite(nrm):
        raise StateError("cannot normalize a zero (or non-finite) state")
    state.data *= state.real_dtype(1 / math.sqrt(nrm))
    return state


_PAULI_TERM = re.compile(r"([IXYZ])\s*(\d+)")


def parse_pauli(pauli: str) -> dict[int, str]:
    """``"X0 Z3"`` / ``"X0*Z3"`` / ``"X0Z3"`` -> ``{0: "X", 3: "Z"}``."""
    text = pauli.replace("*", " ").strip().upper()
    terms = _PAULI_TERM.findall(text)
    if not terms or _PAULI_TERM.sub("", text).strip():
        raise StateError(f"bad Pauli string {pauli!r}")
    out: dict[int, str] = {}
    for p, q in terms:
        q = int(q)
        if q in out:
            raise StateError(f"qubit {q} repeated in Pauli string {pauli!r}")
        if p != "I":
            out[q] = p
    return out


@lru_cache(maxsize=64)
def _pauli_tables(n: int, xmask: int, zmask: int):
    idx = np.arange(1 << n, dtype=np.int64)
    sign = 1.0 - 2.0 * (np.bitwise_count(idx & zmask) & 1)
    return idx ^ xmask, sign


def expectation_pauli(state: StateVector, pauli: str | dict) -> float:
    """<psi|P|psi> / <psi|psi> for a Pauli string."""
    ops = parse_pauli(pauli) if isinstance(pauli, str) else dict(pauli)
    if any(q >= state.n for q in ops):
        raise StateError(f"Pauli string {pauli!r} refers to qubits beyond {state.n}")
    a = state.amplitudes()
    nrm = float(np.vdot(a, a).real)
    if nrm == 0:
        raise StateError("expectation of a zero-norm state")
    xmask = sum(1 << q for q, p in ops.items() if p in "XY")
    zmask = sum(1 << q for q, p in ops.items() if p in "ZY")
    ny = sum(p == "Y" for p in ops.values())
    flip, sign = _pauli_tables(state.n, xmask, zmask)
    if xmask == 0:
        val = complex(np.dot(sign, (a.real.astype(float) ** 2 + a.imag.astype(float) ** 2)))
    else:
        val = complex(np.vdot(a[flip], sign * a)) * (1j**ny)
    return val.real / nrm


def probabilities(state: StateVector) -> np.ndarray:
    a = state.amplitudes()
    return a.real.astype(float) ** 2 + a.imag.astype(float) ** 2


def bitstring(index: int, n: int) -> str:
    """Bitstring with qubit 0 first."""
    return "".join("1" if (index >> q) & 1 else "0" for q in range(n))


def sample_bitstrings(state: StateVector, shots: int, rng: np.random.Generator, strict: bool = True) -> list[str]:
    """Draw ``shots`` computational-basis samples from ``|amplitude|**2``."""
    p = probabilities(state)
    total = p.sum()
    if strict and abs(total - 1) > 1e-4:
        raise StateError(f"state not normalized (norm^2 = {total:.6g})")
    cdf = np.cumsum(p)
    picks = np.searchsorted(cdf, rng.random(shots) * cdf[-1], side="right")
    picks = np.minimum(picks, p.size - 1)
    return [bitstring(int(i), state.n) for i in picks]


# ------------------------------------------------------------------ dumps


def save_state(state: StateVector, path: str | Path) -> None:
    """Binary dump: header ``<4sIII`` (magic, n, precision bits, lanes or 0) then raw storage."""
    bits = 32 if state.precision == "single" else 64
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(DUMP_MAGIC, state.n, bits, state.lanes or 0))
        fh.write(state.data.astype(state.data.dtype.newbyteorder("<"), copy=False).tobytes())


def load_state(path: str | Path) -> StateVector:
    raw = Path(path).read_bytes()
    magic, n, bits, lanes = _DUMP_HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise StateError("not a state dump (bad magic)")
    precision = {32: "single", 64: "double"}[bits]
    lanes = lanes or None
    proto = StateVector(n, precision, lanes)
    data = np.frombuffer(raw, dtype=np.dtype(proto.storage_dtype).newbyteorder("<"), offset=_DUMP_HEADER.size)
    return StateVector(n, precision, lanes, data=data.astype(proto.storage_dtype))
