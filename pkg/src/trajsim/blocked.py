"""Lane-blocked gate application.

Mirrors a SIMD register scheme in portable numpy: the state is stored as
blocks of ``k`` real parts followed by ``k`` imaginary parts and each block is
treated as one ``k``-lane register.  Qubits below ``log2(k)`` are *low* (they
index lanes inside a register), the rest are *high* (they select registers).

For a gate with ``l`` low qubits every loaded register is expanded into
``2**l - 1`` additional lane-permuted registers, and the gate matrix is laid
out per lane so that each lane accumulates one output amplitude with purely
vertical (lane-wise) multiply-adds.

Matrices here are in *canonical* order: bit ``t`` of the row/column index is
the ``t``-th smallest gate qubit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .statevector import StateError, StateVector, _check_gate


def compress_bits(i: int, mask: int) -> int:
    """Gather the bits of ``i`` selected by ``mask`` into the low bits of the result."""
    out, t, b = 0, 0, 0
    while mask >> b:
        if (mask >> b) & 1:
            out |= ((i >> b) & 1) << t
            t += 1
        b += 1
    return out


def expand_bits(r: int, mask: int) -> int:
    """Inverse of :func:`compress_bits`: scatter the low bits of ``r`` onto ``mask``."""
    out, t, b = 0, 0, 0
    while mask >> b:
        if (mask >> b) & 1:
            out |= ((r >> t) & 1) << b
            t += 1
        b += 1
    return out


def deposit(values: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    """Vectorised bit scatter: bit ``t`` of each value goes to bit ``positions[t]``."""
    values = np.asarray(values, dtype=np.int64)
    out = np.zeros_like(values)
    for t, pos in enumerate(positions):
        out |= ((values >> t) & 1) << pos
    return out


@dataclass(frozen=True)
class LaneGeometry:
    k: int
    low: tuple[int, ...]
    high: tuple[int, ...]

    @classmethod
    def from_qubits(cls, qubits: Sequence[int], k: int) -> "LaneGeometry":
        lk = k.bit_length() - 1
        if k < 1 or 1 << lk != k:
            raise StateError(f"lane count must be a power of two, got {k}")
        qs = sorted(qubits)
        return cls(k, tuple(q for q in qs if q < lk), tuple(q for q in qs if q >= lk))

    @property
    def log2k(self) -> int:
        return self.k.bit_length() - 1

    @property
    def q(self) -> int:
        return len(self.low) + len(self.high)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.low)

    @property
    def h(self) -> int:
        return len(self.high)

    @property
    def m(self) -> int:
        """Low-qubit lane mask."""
        return sum(1 << q for q in self.low)


def lane_permutation(i: int, reg: int, m: int, k: int) -> int:
    """Source lane for lane ``i`` of additional register ``reg``.

    ``p = ((i + reg) on the masked bits) | (i & ~m)``: the masked bits of ``i``
    are compressed, ``reg`` is added modulo ``2**popcount(m)`` and the sum is
    scattered back; unmasked bits pass through.  Additional register ``reg``
    holds, at lane ``i``, element ``p`` of the register loaded from memory.
    ``reg = 0`` is the identity.
    """
    if not 0 <= i < k:
        raise ValueError(f"lane {i} outside 0..{k - 1}")
    if m & ~(k - 1):
        raise ValueError("mask has bits outside the lane index")
    size = 1 << bin(m).count("1")
    return expand_bits((compress_bits(i, m) + reg) % size, m) | (i & ~m & (k - 1))


@lru_cache(maxsize=256)
def lane_permutations(m: int, k: int) -> np.ndarray:
    """Table ``perm[reg, i]`` for ``reg = 0 .. 2**l - 1`` (row 0 is the identity)."""
    size = 1 << bin(m).count("1")
    table = np.array([[lane_permutation(i, r, m, k) for i in range(k)] for r in range(size)], dtype=np.int64)
    table.flags.writeable = False
    return table


def permute_register(register: Sequence, reg: int, m: int) -> list:
    """Build additional register ``reg`` from a loaded register (list indexed by lane)."""
    k = len(register)
    return [register[lane_permutation(i, reg, m, k)] for i in range(k)]


def canonical_matrix(matrix: np.ndarray, qubits: Sequence[int]) -> tuple[np.ndarray, tuple[int, ...]]:
    """Reorder a gate matrix so index bit ``t`` is the ``t``-th smallest qubit.

    Input convention: ``qubits[0]`` is the most significant index bit.
    """
    matrix = np.asarray(matrix)
    q = len(qubits)
    srt = tuple(sorted(qubits))
    # tensor axis order for canonical form, most significant first
    order = [list(qubits).index(s) for s in reversed(srt)]
    t = matrix.reshape((2,) * (2 * q)).transpose(order + [q + a for a in order])
    return t.reshape(1 << q, 1 << q), srt


def matrix_lane_layout(matrix: np.ndarray, geom: LaneGeometry) -> np.ndarray:
    """Lane-replicated matrix table ``T[j, c, i]`` of shape ``(2**h, 2**q, k)``.

    ``T[j, c, i] = U[s // 2**q, s % 2**q]`` with
    ``s = j 2**(l+q) + r_i 2**q + 2**l (c // 2**l) + (r_i + c) mod 2**l`` and
    ``r_i`` = lane ``i`` compressed with respect to the low-qubit mask.
    ``matrix`` must be canonical (see :func:`canonical_matrix`).
    """
    q, l, h, k = geom.q, geom.l, geom.h, geom.k
    matrix = np.asarray(matrix)
    if matrix.shape != (1 << q, 1 << q):
        raise StateError("matrix does not match lane geometry")
    r = np.array([compress_bits(i, geom.m) for i in range(k)], dtype=np.int64)
    j = np.arange(1 << h)[:, None, None]
    c = np.arange(1 << q)[None, :, None]
    ri = r[None, None, :]
    s = j * (1 << (l + q)) + ri * (1 << q) + (1 << l) * (c // (1 << l)) + (ri + c) % (1 << l)
    return matrix[s // (1 << q), s % (1 << q)]


def outer_iterations(n: int, qubits: Sequence[int], k: int) -> int:
    """Iterations of the blocked outer loop: ``2**(n - h - log2 k)``."""
    geom = LaneGeometry.from_qubits(qubits, k)
    return 1 << max(0, n - geom.h - geom.log2k)


def apply_gate_blocked(state: StateVector, matrix, qubits: Sequence[int]) -> StateVector:
    """Apply a gate to a blocked-layout state in place.

    ``matrix`` follows the package convention (``qubits[0]`` most significant).
    """
    matrix = np.asarray(matrix)
    _check_gate(state.n, matrix, qubits)
    if state.lanes is None:
        raise StateError("apply_gate_blocked needs a blocked layout")
    k = state.lanes
    geom = LaneGeometry.from_qubits(qubits, k)
    canon, _ = canonical_matrix(matrix, qubits)
    table = matrix_lane_layout(canon, geom)
    ur = np.ascontiguousarray(table.real, dtype=state.real_dtype)
    ui = np.ascontiguousarray(table.imag, dtype=state.real_dtype)

    regs = state.blocks()
    block_bits = regs.shape[0].bit_length() - 1
    high_bits = [qh - geom.log2k for qh in geom.high]
    other_bits = [b for b in range(block_bits) if b not in high_bits]
    blk = deposit(np.arange(1 << len(other_bits)), other_bits)[:, None] | deposit(
        np.arange(1 << geom.h), high_bits
    )[None, :]

    loaded = regs[blk]  # (outer, 2**h, 2, k)
    perms = lane_permutations(geom.m, k)  # (2**l, k)
    expanded = loaded[..., perms]  # (outer, 2**h, 2, 2**l, k)
    expanded = expanded.transpose(0, 1, 3, 2, 4).reshape(blk.shape[0], 1 << geom.q, 2, k)
    pr, pi = expanded[:, :, 0, :], expanded[:, :, 1, :]
    out_r = np.einsum("jci,oci->oji", ur, pr) - np.einsum("jci,oci->oji", ui, pi)
    out_i = np.einsum("jci,oci->oji", ur, pi) + np.einsum("jci,oci->oji", ui, pr)
    regs[blk, 0, :] = out_r
    regs[blk, 1, :] = out_i
    return state
