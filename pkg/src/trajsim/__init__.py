"""trajsim: state-vector simulation with gate fusion and quantum trajectories."""

from . import hardware_noise  # registers calibrated channels
from .channels import channel, kraus_of
from .circuit import Circuit, CircuitError, GateOp, ChannelOp, Measurement, Moment, gate, measure, validate
from .fusion import FuseConfig, FusedGate, fuse, fuse_circuit, fused_matrix, fusion_plan
from .noise import ConstantQubitNoiseModel, NoiseModel, OperationNoiseModel, with_noise
from .serialization import load_circuit, parse_circuit, save_circuit, serialize_circuit
from .statevector import StateVector, apply_gate, expectation_pauli, memory_bytes
from .trajectory import (
    BoundedKraus,
    ObservableEstimate,
    TrajectoryConfig,
    TrajectoryResult,
    estimate,
    kraus_lower_bound,
    run_trajectories,
    run_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "BoundedKraus",
    "ChannelOp",
    "Circuit",
    "CircuitError",
    "ConstantQubitNoiseModel",
    "FuseConfig",
    "FusedGate",
    "GateOp",
    "Measurement",
    "Moment",
    "NoiseModel",
    "ObservableEstimate",
    "OperationNoiseModel",
    "StateVector",
    "TrajectoryConfig",
    "TrajectoryResult",
    "apply_gate",
    "channel",
    "estimate",
    "expectation_pauli",
    "fuse",
    "fuse_circuit",
    "fused_matrix",
    "fusion_plan",
    "gate",
    "hardware_noise",
    "kraus_lower_bound",
    "kraus_of",
    "load_circuit",
    "measure",
    "memory_bytes",
    "parse_circuit",
    "run_trajectories",
    "run_trajectory",
    "save_circuit",
    "serialize_circuit",
    "validate",
    "with_noise",
]
