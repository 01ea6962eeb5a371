"""Named gate matrices.

Matrix convention used throughout the package: for a gate acting on the
ordered qubit list ``(q0, q1, ...)``, ``q0`` is the most significant bit of
the row/column index.  ``kron(A, B)`` is therefore ``A`` on the first listed
qubit and ``B`` on the second.
"""

from __future__ import annotations

import cmath
import math
from typing import Callable

import numpy as np

_S2 = 1 / math.sqrt(2)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex)
S = np.array([[1, 0], [0, 1j]], dtype=complex)
T = np.array([[1, 0], [0, cmath.exp(1j * math.pi / 4)]], dtype=complex)

PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}


def rx(phi: float) -> np.ndarray:
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(phi: float) -> np.ndarray:
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(phi: float) -> np.ndarray:
    return np.diag([cmath.exp(-0.5j * phi), cmath.exp(0.5j * phi)])


def zphase(phi: float) -> np.ndarray:
    """Single-qubit phase error ``exp(i*phi*Z)``."""
    return np.diag([cmath.exp(1j * phi), cmath.exp(-1j * phi)])


def fsim(theta: float, phi: float) -> np.ndarray:
    """Fermionic simulation gate.

    ``theta`` is the |01> <-> |10> swap angle, ``phi`` the conditional phase
    on |11>.
    """
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [
            [1, 0, 0, 0],
            [0, c, -1j * s, 0],
            [0, -1j * s, c, 0],
            [0, 0, 0, cmath.exp(-1j * phi)],
        ],
        dtype=complex,
    )


CZ = np.diag([1, 1, 1, -1]).astype(complex)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)
ISWAP = fsim(-math.pi / 2, 0.0)
SQRT_ISWAP = fsim(-math.pi / 4, 0.0)


def uzz(zeta: float, gate_time: float) -> np.ndarray:
    """Control-error unitary ``exp(-i 2 pi zeta T |11><11|)``; quarter turns are exact."""
    turns = (zeta * gate_time) % 1.0
    quarter = 4 * turns
    if quarter == int(quarter):
        phase = (1, -1j, -1, 1j)[int(quarter)]
    else:
        phase = cmath.exp(-2j * math.pi * turns)
    return np.diag([1, 1, 1, phase]).astype(complex)


# name -> (arity, parameter names, builder)
GateBuilder = Callable[..., np.ndarray]
NAMED_GATES: dict[str, tuple[int, tuple[str, ...], GateBuilder]] = {
    "I": (1, (), lambda: I2),
    "X": (1, (), lambda: X),
    "Y": (1, (), lambda: Y),
    "Z": (1, (), lambda: Z),
    "H": (1, (), lambda: H),
    "S": (1, (), lambda: S),
    "T": (1, (), lambda: T),
    "RX": (1, ("phi",), rx),
    "RY": (1, ("phi",), ry),
    "RZ": (1, ("phi",), rz),
    "ZPHASE": (1, ("phi",), zphase),
    "CZ": (2, (), lambda: CZ),
    "CNOT": (2, (), lambda: CNOT),
    "SWAP": (2, (), lambda: SWAP),
    "ISWAP": (2, (), lambda: ISWAP),
    "SQRT_ISWAP": (2, (), lambda: SQRT_ISWAP),
    "FSIM": (2, ("theta", "phi"), fsim),
    "UZZ": (2, ("zeta", "gate_time"), uzz),
}

# Gates that carry fSim-style coherent errors on hardware.
FSIM_FAMILY = frozenset({"CZ", "ISWAP", "SQRT_ISWAP", "FSIM"})


def pauli_matrix(label: str) -> np.ndarray:
    """Dense matrix of a Pauli word such as ``"XZ"`` (first letter = MSB)."""
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, PAULIS[ch])
    return out
