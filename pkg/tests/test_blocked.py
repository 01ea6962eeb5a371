import itertools

import numpy as np
import pytest

from oracles import random_state, random_unitary
from trajsim import gates
from trajsim.blocked import (
    LaneGeometry,
    apply_gate_blocked,
    canonical_matrix,
    compress_bits,
    expand_bits,
    lane_permutation,
    lane_permutations,
    matrix_lane_layout,
    outer_iterations,
    permute_register,
)
from trajsim.statevector import StateError, StateVector, apply_gate_naive

# ulp-scale tolerance for reassociated multiply-adds
ATOL = {"single": 2e-6, "double": 5e-15}


def _both(psi, u, qubits, k, precision="double"):
    naive = apply_gate_naive(StateVector.from_amplitudes(psi, precision), u, qubits).amplitudes()
    blocked = apply_gate_blocked(StateVector.from_amplitudes(psi, precision, lanes=k), u, qubits).amplitudes()
    return naive, blocked


def _register_text(register):
    return "".join(register[::-1])


def test_lane_permutation_three_register_example():
    source = [f"a{i}" for i in range(8)]
    assert _register_text(source) == "a7a6a5a4a3a2a1a0"
    got = [_register_text(permute_register(source, reg, 3)) for reg in (1, 2, 3)]
    assert got == ["a4a7a6a5a0a3a2a1", "a5a4a7a6a1a0a3a2", "a6a5a4a7a2a1a0a3"]


def test_lane_permutation_empty_family_for_zero_mask():
    table = lane_permutations(0, 8)
    assert table.shape == (1, 8)
    np.testing.assert_array_equal(table[0], np.arange(8))


@pytest.mark.parametrize("k", [4, 8, 16, 32])
def test_lane_permutation_is_bijection(k):
    for m in range(k):
        for reg in range(1 << bin(m).count("1")):
            assert sorted(lane_permutation(i, reg, m, k) for i in range(k)) == list(range(k))


def test_lane_permutation_errors():
    with pytest.raises(ValueError):
        lane_permutation(8, 1, 3, 8)
    with pytest.raises(ValueError):
        lane_permutation(0, 1, 8, 8)


def test_compress_expand_inverse():
    for mask in (0b1011, 0b110, 0b1):
        for r in range(1 << bin(mask).count("1")):
            assert compress_bits(expand_bits(r, mask), mask) == r


def test_matrix_layout_broadcast_when_no_low_qubits(rng):
    u = random_unitary(4, rng)
    geom = LaneGeometry.from_qubits([3, 4], 8)
    table = matrix_lane_layout(u, geom)
    assert geom.l == 0
    for i in range(8):
        np.testing.assert_array_equal(table[:, :, i], u)


def test_k4_m1_one_extra_register(rng):
    geom = LaneGeometry.from_qubits([0], 4)
    assert (geom.l, geom.m) == (1, 1)
    assert lane_permutations(geom.m, 4).shape == (2, 4)
    for _ in range(5):
        naive, blocked = _both(random_state(4, rng), random_unitary(2, rng), [0], 4)
        np.testing.assert_allclose(blocked, naive, atol=ATOL["double"])


def test_q1_l1_k4_all_basis_states(rng):
    u = random_unitary(2, rng)
    for b in range(16):
        psi = np.zeros(16, complex)
        psi[b] = 1
        naive, blocked = _both(psi, u, [1], 4)
        np.testing.assert_allclose(blocked, naive, atol=ATOL["double"])


def test_q2_l2_k8_m3(rng):
    geom = LaneGeometry.from_qubits([0, 1], 8)
    assert (geom.q, geom.l, geom.m) == (2, 2, 3)
    naive, blocked = _both(random_state(6, rng), random_unitary(4, rng), [1, 0], 8, "single")
    np.testing.assert_allclose(blocked, naive, atol=ATOL["single"])


def test_all_high_qubits_outer_loop(rng):
    n, qubits, k = 8, [5, 3], 8
    assert outer_iterations(n, qubits, k) == 2 ** (n - 2 - 3)
    naive, blocked = _both(random_state(n, rng), random_unitary(4, rng), qubits, k)
    np.testing.assert_allclose(blocked, naive, atol=ATOL["double"])


def test_single_qubit_low_k8(rng):
    for _ in range(5):
        naive, blocked = _both(random_state(5, rng), random_unitary(2, rng), [0], 8)
        np.testing.assert_allclose(blocked, naive, atol=ATOL["double"])


@pytest.mark.parametrize("k", [4, 8, 16, 32])
def test_identity_any_placement(rng, k):
    psi = random_state(6, rng)
    for qubits in itertools.permutations(range(6), 2):
        s = StateVector.from_amplitudes(psi, "double", lanes=k)
        before = s.data.copy()
        apply_gate_blocked(s, np.eye(4), list(qubits))
        np.testing.assert_array_equal(s.data, before)


@pytest.mark.parametrize("k", [4, 8, 16, 32])
@pytest.mark.parametrize("precision", ["single", "double"])
def test_mixed_low_high_placements(rng, k, precision):
    for qubits in ([0, 5], [4, 1, 2], [2, 0, 6, 3], [6, 5, 4, 3, 2, 1]):
        u = random_unitary(1 << len(qubits), rng)
        naive, blocked = _both(random_state(7, rng), u, qubits, k, precision)
        np.testing.assert_allclose(blocked, naive, atol=10 * ATOL[precision])


def test_state_smaller_than_lane_count(rng):
    psi = random_state(2, rng)
    naive, blocked = _both(psi, gates.CNOT, [1, 0], 32)
    np.testing.assert_allclose(blocked, naive, atol=ATOL["double"])


def test_layout_round_trip(rng):
    psi = random_state(6, rng)
    s = StateVector.from_amplitudes(psi, "double", lanes=16)
    np.testing.assert_array_equal(s.to_interleaved().amplitudes(), psi)
    assert s.layout == "blocked(16)"


def test_canonical_matrix_reorders_bits(rng):
    u = random_unitary(4, rng)
    canon, srt = canonical_matrix(u, [0, 3])
    assert srt == (0, 3)
    swap = gates.SWAP
    np.testing.assert_allclose(canon, swap @ u @ swap)


def test_blocked_requires_blocked_layout():
    with pytest.raises(StateError, match="blocked"):
        apply_gate_blocked(StateVector.zero(3), gates.X, [0])
