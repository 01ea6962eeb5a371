"""JSON circuit documents.

Top level: ``{"n_qubits": int, "moments": [[op, ...], ...]}`` where each op is
one of::

    {"gate": name, "qubits": [...], "params": {...}, "duration_ns": optional}
    {"channel": name, "qubits": [...], "params": {...}, "key": optional}
    {"measure": [...], "key": str, "readout": optional {"p00_err": [...], "p11_err": [...]}}

Matrices are row-major nested lists of ``[re, im]`` pairs.
"""

from __future__ import annotations

import json
from pathlib import Path

from .channels import channel
from .circuit import Circuit, CircuitError, Measurement, Moment, gate, params_from_json


def _parse_op(raw, where: str):
    if not isinstance(raw, dict):
        raise CircuitError(f"{where}: operation must be an object")
    kinds = [k for k in ("gate", "channel", "measure") if k in raw]
    if len(kinds) != 1:
        raise CircuitError(f"{where}: operation needs exactly one of 'gate', 'channel', 'measure'")
    kind = kinds[0]
    try:
        if kind == "measure":
            ro = raw.get("readout") or {}
            return Measurement(
                tuple(raw["measure"]),
                str(raw["key"]),
                tuple(ro["p00_err"]) if "p00_err" in ro else None,
                tuple(ro["p11_err"]) if "p11_err" in ro else None,
                raw.get("duration_ns"),
            )
        qubits = raw["qubits"]
        params = params_from_json(raw.get("params") or {})
        if kind == "gate":
            return gate(raw["gate"], *qubits, duration_ns=raw.get("duration_ns"), **params)
        return channel(raw["channel"], *qubits, key=raw.get("key"), **params)
    except KeyError as exc:
        raise CircuitError(f"{where}: missing field {exc.args[0]!r}") from None
    except CircuitError as exc:
        raise CircuitError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise CircuitError(f"{where}: {exc}") from None


def circuit_from_json(doc) -> Circuit:
    if not isinstance(doc, dict) or "n_qubits" not in doc or "moments" not in doc:
        raise CircuitError("document must be an object with 'n_qubits' and 'moments'")
    moments = []
    for mi, raw_moment in enumerate(doc["moments"]):
        if not isinstance(raw_moment, list):
            raise CircuitError(f"moment {mi}: must be a list of operations")
        ops = tuple(_parse_op(raw, f"moment {mi}, op {oi}") for oi, raw in enumerate(raw_moment))
        try:
            moments.append(Moment(ops))
        except CircuitError as exc:
            raise CircuitError(f"moment {mi}: {exc}") from None
    return Circuit(int(doc["n_qubits"]), tuple(moments))


def parse_circuit(text: str) -> Circuit:
    """Parse and validate a circuit document.

    Syntax errors are reported with line/column position.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CircuitError(f"syntax error at line {exc.lineno} column {exc.colno} (char {exc.pos}): {exc.msg}") from None
    return circuit_from_json(doc)


def serialize_circuit(circuit: Circuit, indent: int | None = 1) -> str:
    return json.dumps(circuit.to_json(), indent=indent, allow_nan=False)


def load_circuit(path: str | Path) -> Circuit:
    return parse_circuit(Path(path).read_text(encoding="utf-8"))


def save_circuit(circuit: Circuit, path: str | Path) -> None:
    Path(path).write_text(serialize_circuit(circuit), encoding="utf-8")
