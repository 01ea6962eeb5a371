"""Kraus representations of the built-in noise channels.

Channels are looked up by name in a registry so that the JSON format can refer
to them symbolically.  :mod:`trajsim.hardware_noise` registers the calibrated
hardware channels on import.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from . import gates
from .circuit import (
    COMPLETENESS_TOL,
    ChannelOp,
    CircuitError,
    completeness_error,
    proportional_to_unitary,
)

# builder(params, n_qubits) -> (kraus list, is_unitary_mixture)
ChannelBuilder = Callable[[dict, int], tuple[list[np.ndarray], bool]]
_REGISTRY: dict[str, ChannelBuilder] = {}


def register_channel(name: str, builder: ChannelBuilder) -> None:
    _REGISTRY[name] = builder


def channel_names() -> list[str]:
    return sorted(_REGISTRY)


def check_probability(value, name: str) -> float:
    p = float(value)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise CircuitError(f"{name} must lie in [0, 1], got {value!r}")
    return p


def pauli_words(n_qubits: int) -> list[str]:
    """All Pauli words on ``n_qubits``, identity first."""
    return ["".join(w) for w in itertools.product("IXYZ", repeat=n_qubits)]


def _one_qubit(name: str, n_qubits: int) -> None:
    if n_qubits != 1:
        raise CircuitError(f"channel {name} acts on exactly one qubit")


def _depolarize(params: dict, n: int):
    p = check_probability(params["p"], "p")
    words = pauli_words(n)
    weight = p / (len(words) - 1)
    ks = [math.sqrt(1 - p) * np.eye(2**n, dtype=complex)] if p < 1 else []
    if weight > 0:
        ks += [math.sqrt(weight) * gates.pauli_matrix(w) for w in words[1:]]
    return ks, True


def _bit_flip(params: dict, n: int):
    _one_qubit("bit_flip", n)
    p = check_probability(params["p"], "p")
    ks = []
    if p < 1:
        ks.append(math.sqrt(1 - p) * gates.I2)
    if p > 0:
        ks.append(math.sqrt(p) * gates.X)
    return ks, True


def _phase_damp(params: dict, n: int):
    _one_qubit("phase_damp", n)
    g = check_probability(params["gamma"], "gamma")
    return [np.diag([1, math.sqrt(1 - g)]).astype(complex), np.diag([0, math.sqrt(g)]).astype(complex)], False


def _amplitude_damp(params: dict, n: int):
    _one_qubit("amplitude_damp", n)
    g = check_probability(params["gamma"], "gamma")
    k0 = np.diag([1, math.sqrt(1 - g)]).astype(complex)
    k1 = np.array([[0, math.sqrt(g)], [0, 0]], dtype=complex)
    return [k0, k1], False


def _mixed_unitary(params: dict, n: int):
    mixture = params["mixture"]
    total = 0.0
    ks = []
    for p, u in mixture:
        p = check_probability(p, "mixture probability")
        u = np.asarray(u, dtype=complex)
        if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-10):
            raise CircuitError("mixed_unitary entries must be unitary")
        total += p
        if p > 0:
            ks.append(math.sqrt(p) * u)
    if abs(total - 1) > 1e-10:
        raise CircuitError(f"mixture probabilities sum to {total}, not 1")
    return ks, True


def _kraus(params: dict, n: int):
    ks = [np.asarray(k, dtype=complex) for k in params["kraus"]]
    if not ks:
        raise CircuitError("kraus channel needs at least one operator")
    err = completeness_error(ks)
    if err >= COMPLETENESS_TOL:
        raise CircuitError(f"Kraus operators are not complete (|sum K^dag K - I| = {err:.3g})")
    return ks, all(proportional_to_unitary(k) for k in ks)


def _unitary(params: dict, n: int):
    u = np.asarray(params["matrix"], dtype=complex)
    if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-10):
        raise CircuitError("unitary channel requires a unitary matrix")
    return [u], True


for _name, _builder in {
    "depolarize": _depolarize,
    "bit_flip": _bit_flip,
    "phase_damp": _phase_damp,
    "amplitude_damp": _amplitude_damp,
    "mixed_unitary": _mixed_unitary,
    "kraus": _kraus,
    "unitary": _unitary,
}.items():
    register_channel(_name, _builder)


def kraus_of(name: str, params: dict | None = None, n_qubits: int = 1) -> list[np.ndarray]:
    """Kraus operators of a named channel."""
    ks, _ = _build(name, params or {}, n_qubits)
    return ks


def _build(name: str, params: dict, n_qubits: int):
    if name not in _REGISTRY:
        raise CircuitError(f"unknown channel name {name!r}")
    try:
        return _REGISTRY[name](params, n_qubits)
    except KeyError as exc:
        raise CircuitError(f"channel {name} missing parameter {exc.args[0]!r}") from None


def channel(name: str, *qubits: int, key: str | None = None, **params) -> ChannelOp:
    """Build a :class:`ChannelOp`, e.g. ``channel("depolarize", 0, p=0.01)``."""
    ks, mixture = _build(name, params, len(qubits))
    return ChannelOp(name, tuple(qubits), tuple(ks), dict(params), key, mixture)


def apply_channel_to_density(rho: np.ndarray, kraus: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i K_i rho K_i^dag`` for a density matrix on the channel's own qubits."""
    return sum(k @ rho @ k.conj().T for k in kraus)
