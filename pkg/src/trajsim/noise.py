"""Clean-to-noisy circuit transformation.

A :class:`NoiseModel` works in one of three modes:

* ``"operation"`` -- :meth:`NoiseModel.noisy_operation` returns the channels to
  insert after each operation;
* ``"moment"`` -- :meth:`NoiseModel.noisy_moment` rewrites one moment into a
  list of moments;
* ``"circuit"`` -- :meth:`NoiseModel.noisy_moments` rewrites the whole moment list.

Models only ever insert channels (and, for measurements, attach readout error
parameters); original gates keep their order, so
``strip_noise(with_noise(c, m)) == c``.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

from .channels import channel
from .circuit import ChannelOp, Circuit, CircuitError, Moment, Operation

MODES = ("operation", "moment", "circuit")


class NoiseModel:
    """Base model; with no overrides it leaves circuits unchanged."""

    mode = "moment"

    def noisy_operation(self, op: Operation) -> list[ChannelOp]:
        return []

    def noisy_moment(self, moment: Moment, circuit: Circuit) -> list[Moment]:
        return [moment]

    def noisy_moments(self, circuit: Circuit) -> list[Moment]:
        return list(circuit.moments)


def _layer_after(noise: Sequence[Sequence[ChannelOp]]) -> list[Moment]:
    """Channel moments after a moment, packed earliest-fit; each op's channels keep their order."""
    frontier: dict[int, int] = {}
    layers: list[list[ChannelOp]] = []
    for chs in noise:
        for ch in chs:
            t = max((frontier.get(q, 0) for q in ch.qubits), default=0)
            while len(layers) <= t:
                layers.append([])
            layers[t].append(ch)
            for q in ch.qubits:
                frontier[q] = t + 1
    return [Moment(tuple(layer)) for layer in layers]


def with_noise(circuit: Circuit, model: NoiseModel | None) -> Circuit:
    if model is None:
        return circuit
    mode = model.mode
    if mode not in MODES:
        raise CircuitError(f"unknown noise model mode {mode!r}")
    if mode == "circuit":
        moments = model.noisy_moments(circuit)
    elif mode == "moment":
        moments = [out for m in circuit.moments for out in model.noisy_moment(m, circuit)]
    else:
        moments = []
        for m in circuit.moments:
            moments.append(m)
            per_op = []
            for op in m:
                chs = model.noisy_operation(op)
                if any(not set(ch.qubits) <= set(op.qubits) for ch in chs):
                    raise CircuitError("per-operation noise must act on the operation's own qubits")
                per_op.append(chs)
            moments.extend(_layer_after(per_op))
    return Circuit(circuit.n_qubits, tuple(moments))


class ConstantQubitNoiseModel(NoiseModel):
    """Insert one channel on every qubit at the start of each moment.

    ``name``/``params`` select a single-qubit channel from the registry, e.g.
    ``ConstantQubitNoiseModel("depolarize", p=0.01)``.  Moments holding only
    channels are left alone.
    """

    mode = "moment"

    def __init__(self, name: str, **params):
        self.name = name
        self.params = params
        channel(name, 0, **params)  # fail early on bad params

    def noisy_moment(self, moment: Moment, circuit: Circuit) -> list[Moment]:
        if moment.operations and all(isinstance(op, ChannelOp) for op in moment):
            return [moment]
        noise = Moment(tuple(channel(self.name, q, **self.params) for q in range(circuit.n_qubits)))
        return [noise, moment]


Rule = Callable[[Operation], Sequence[ChannelOp]]


class OperationNoiseModel(NoiseModel):
    """Rule table keyed by operation kind (gate name, ``"measure"``, ``"channel:<name>"``).

    ``"*"`` matches any kind without its own rule.  In strict mode a gate or
    measurement kind with no rule raises :class:`CircuitError`; channels never
    need a rule.
    """

    mode = "operation"

    def __init__(self, rules: Mapping[str, Rule], strict: bool = True):
        self.rules = dict(rules)
        self.strict = strict

    def noisy_operation(self, op: Operation) -> list[ChannelOp]:
        rule = self.rules.get(op.kind, self.rules.get("*"))
        if rule is None:
            if self.strict and not isinstance(op, ChannelOp):
                raise CircuitError(f"noise model has no rule for operation kind {op.kind!r}")
            return []
        return list(rule(op))


def per_qubit(name: str, **params) -> Rule:
    """Rule inserting the named single-qubit channel on each qubit of the op."""

    def rule(op: Operation) -> list[ChannelOp]:
        return [channel(name, q, **params) for q in op.qubits]

    return rule


def on_op(name: str, **params) -> Rule:
    """Rule inserting the named channel on all of the op's qubits at once."""

    def rule(op: Operation) -> list[ChannelOp]:
        return [channel(name, *op.qubits, **params)]

    return rule


def noise_model_from_json(doc: dict) -> NoiseModel:
    """Build a simple model from a JSON document.

    ``{"model": "constant", "channel": "depolarize", "params": {"p": 0.01}}`` or
    ``{"model": "per_operation", "rules": {"*": {"channel": ..., "params": ..., "per_qubit": true}}}``.
    """
    kind = doc.get("model")
    if kind == "constant":
        return ConstantQubitNoiseModel(doc["channel"], **doc.get("params", {}))
    if kind == "per_operation":
        rules = {}
        for op_kind, spec in doc["rules"].items():
            make = per_qubit if spec.get("per_qubit", True) else on_op
            rules[op_kind] = make(spec["channel"], **spec.get("params", {}))
        return OperationNoiseModel(rules, strict=doc.get("strict", False))
    raise CircuitError(f"unknown noise model {kind!r}")
