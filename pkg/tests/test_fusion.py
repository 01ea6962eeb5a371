import numpy as np
import pytest

from oracles import dense_run, embed, random_gate_ops, random_unitary
from trajsim import gates
from trajsim.channels import channel
from trajsim.circuit import ChannelOp, Circuit, Measurement, gate, measure
from trajsim.fusion import (
    FuseConfig,
    FusedGate,
    FusionError,
    embed_matrix,
    fuse,
    fuse_circuit,
    fused_matrix,
    fusion_plan,
    plan_to_json,
)
from trajsim.statevector import StateVector, apply_gate


def _final(n, ops):
    s = StateVector.zero(n, "double")
    for op in ops:
        apply_gate(s, op.matrix, op.qubits)
    return s.amplitudes()


def test_x_then_cz_fuses_to_one_gate():
    (fg,) = fuse([gate("X", 0), gate("CZ", 0, 1)], FuseConfig(2))
    assert fg.qubits == (0, 1)
    np.testing.assert_allclose(fg.matrix, gates.CZ @ np.kron(gates.X, gates.I2))


def test_single_gate_unchanged(rng):
    u = random_unitary(4, rng)
    (fg,) = fuse([gate("U", 2, 1, matrix=u)])
    assert fg.qubits == (1, 2)
    np.testing.assert_allclose(embed(fg.matrix, fg.qubits, 3), embed(u, (2, 1), 3), atol=1e-15)


def test_fused_matrix_single_h():
    fg = FusedGate((0,), (0,), (gate("H", 0),))
    np.testing.assert_allclose(fused_matrix(fg), gates.H)


def test_fused_matrix_involution():
    fg = FusedGate((0,), (0, 1), (gate("X", 0), gate("X", 0)))
    np.testing.assert_allclose(fused_matrix(fg), np.eye(2))


def test_fused_matrix_three_gates_dense():
    ops = (gate("CZ", 0, 1), gate("X", 1), gate("CZ", 1, 2))
    fg = FusedGate((0, 1, 2), (0, 1, 2), ops)
    dense = embed(gates.CZ, [1, 2], 3) @ embed(gates.X, [1], 3) @ embed(gates.CZ, [0, 1], 3)
    np.testing.assert_allclose(embed(fg.matrix, fg.qubits, 3), dense, atol=1e-15)


@pytest.mark.parametrize("f", [1, 7])
def test_config_range(f):
    with pytest.raises(FusionError):
        FuseConfig(f)


def test_gate_wider_than_limit():
    with pytest.raises(FusionError):
        fusion_plan([(0, 1, 2)], 2)


def test_embed_matrix_convention(rng):
    u = random_unitary(2, rng)
    np.testing.assert_allclose(embed_matrix(u, [3], [1, 3]), np.kron(gates.I2, u))
    np.testing.assert_allclose(embed_matrix(u, [1], [1, 3]), np.kron(u, gates.I2))


def test_plan_is_deterministic_and_complete(rng):
    ops = random_gate_ops(8, 20, 2, rng)
    qubits = [op.qubits for op in ops]
    a, b = fusion_plan(qubits, 4), fusion_plan(qubits, 4)
    assert a == b
    assert sorted(i for grp in a for i in grp) == list(range(len(ops)))
    for grp in a:
        assert grp == sorted(grp)


@pytest.mark.parametrize("f", [2, 3, 4, 5, 6])
def test_random_circuits_equivalent(rng, f):
    for trial in range(6):
        n = int(rng.integers(2, 8))
        ops = random_gate_ops(n, int(rng.integers(1, 12)), min(f, 3), rng)
        fused = fuse(ops, f)
        assert len(fused) <= len(ops)
        assert all(len(fg.qubits) <= f for fg in fused)
        np.testing.assert_allclose(_final(n, fused), dense_run(n, ops), atol=1e-12)


def test_larger_limit_gives_fewer_gates(rng):
    ops = random_gate_ops(10, 30, 2, rng)
    counts = [len(fuse(ops, f)) for f in (2, 3, 4, 5, 6)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] < counts[0]


def test_channels_and_measurements_are_barriers():
    c = Circuit.from_ops(
        2,
        [gate("H", 0), channel("depolarize", 0, p=0.1), gate("X", 0), gate("CZ", 0, 1), measure(0, 1, key="m"), gate("H", 1)],
    )
    out = fuse_circuit(c, 4)
    kinds = [type(x).__name__ for x in out]
    assert kinds == ["FusedGate", "ChannelOp", "FusedGate", "Measurement", "FusedGate"]
    assert isinstance(out[1], ChannelOp)
    assert isinstance(out[3], Measurement)
    assert len(out[2].constituents) == 2


def test_plan_to_json():
    c = Circuit.from_ops(2, [gate("H", 0), gate("CZ", 0, 1), channel("bit_flip", 1, p=0.1), gate("X", 1)])
    doc = plan_to_json(c, 2)
    assert doc == {
        "max_fuse_size": 2,
        "fused": [{"ops": [0, 1], "qubits": [0, 1]}, {"barrier": 2, "kind": "channel"}, {"ops": [3], "qubits": [1]}],
    }


def test_empty_sequence():
    assert fuse([]) == []
