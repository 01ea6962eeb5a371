"""Command-line front end.

Exit codes: 0 ok, 1 usage, 2 validation, 3 resource guard.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import BenchSpec, ResourceGuardError, check_memory, l1_distance, run_bench, write_csv
from .circuit import Circuit, CircuitError, Measurement, Moment, validate
from .farm import FarmConfig, FarmError, run_farm, summary_bytes
from .fusion import FuseConfig, FusionError, fuse_circuit, plan_to_json
from .hardware_noise import CalibrationData, CalibrationError, build_noise_model
from .noise import noise_model_from_json, with_noise
from .serialization import load_circuit
from .statevector import StateError, StateVector, apply_gate, bitstring, probabilities
from .trajectory import TrajectoryConfig

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RESOURCE = 0, 1, 2, 3
AMPLITUDE_LIMIT = 10


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajsim", description="State-vector and quantum-trajectory simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--precision", choices=("single", "double"), default="single")
        sp.add_argument("--max-fuse-size", type=int, default=4)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    r = sub.add_parser("run", help="noiseless fused simulation")
    r.add_argument("circuit")
    common(r)
    r.add_argument("--shots", type=int, default=0, help="samples to draw from the final state")
    r.add_argument("--lanes", type=int, choices=(4, 8, 16, 32), help="use the blocked kernel")
    r.add_argument("--amplitudes", action="store_true", help="print amplitudes even when sampling")

    t = sub.add_parser("trajectories", help="noisy simulation on the trajectory farm")
    t.add_argument("circuit")
    common(t)
    t.add_argument("--noise", help="noise model JSON")
    t.add_argument("--calibration", help="calibration JSON")
    t.add_argument("--trajectories", type=int, default=1000)
    t.add_argument("--workers", type=int, default=None, help="worker limit (default 20)")
    t.add_argument("--mode", choices=("delayed", "conventional"), default="delayed")
    t.add_argument("--observables", nargs="*", help="Pauli strings (default Z on every qubit)")
    t.add_argument("--histogram", action="store_true")
    t.add_argument("--out", default="out")
    t.add_argument("--chunk", type=int, default=None)
    t.add_argument("--backend", choices=("thread", "process"), default=None)
    t.add_argument("--farm-config", help="farm config JSON {limit, chunk, tick_ms, retries}")
    t.add_argument("--zphase-mode", choices=("fixed", "per_trajectory"), default="fixed")

    b = sub.add_parser("bench", help="runtime sweep to CSV")
    b.add_argument("spec")
    b.add_argument("--out", help="CSV path (default stdout)")

    l1 = sub.add_parser("l1", help="l1 distance of two per-site probability lists")
    l1.add_argument("q", help="JSON list or path to a JSON file")
    l1.add_argument("p", help="JSON list or path to a JSON file")

    f = sub.add_parser("fuse", help="print the fusion plan as JSON")
    f.add_argument("circuit")
    f.add_argument("--max-fuse-size", type=int, default=4)
    return p


# ------------------------------------------------------------------ commands


def _strip_measurements(c: Circuit) -> Circuit:
    moments = [Moment(tuple(op for op in m if not isinstance(op, Measurement))) for m in c.moments]
    return Circuit(c.n_qubits, tuple(m for m in moments if m.operations))


def _load_checked(path: str, precision: str = "double") -> Circuit:
    c = load_circuit(path)
    problems = validate(c, precision)
    if problems:
        raise CircuitError("; ".join(problems))
    return c


def cmd_run(args) -> dict:
    FuseConfig(args.max_fuse_size)
    c = _load_checked(args.circuit)
    if c.has_channels:
        raise CircuitError("circuit contains noise channels; use 'trajsim trajectories'")
    check_memory(c.n_qubits, args.precision)
    state = StateVector.zero(c.n_qubits, args.precision, lanes=args.lanes, threads=args.threads)
    fused = fuse_circuit(_strip_measurements(c), args.max_fuse_size)
    for fg in fused:
        apply_gate(state, fg.matrix, fg.qubits)
    out: dict = {"n_qubits": c.n_qubits, "gates": c.gate_count(), "fused_gates": len(fused)}
    if args.shots:
        rng = np.random.default_rng(args.seed)
        p = probabilities(state)
        p = p / p.sum()
        picks = rng.choice(p.size, size=args.shots, p=p)
        counts: dict[str, int] = {}
        for i in picks:
            s = bitstring(int(i), c.n_qubits)
            counts[s] = counts.get(s, 0) + 1
        out["samples"] = dict(sorted(counts.items()))
    if (not args.shots or args.amplitudes) and c.n_qubits <= AMPLITUDE_LIMIT:
        out["amplitudes"] = [[float(a.real), float(a.imag)] for a in state.amplitudes()]
    return out


def cmd_trajectories(args) -> dict:
    c = _load_checked(args.circuit)
    if args.noise and args.calibration:
        raise CircuitError("give either --noise or --calibration, not both")
    if args.noise:
        c = with_noise(c, noise_model_from_json(json.loads(Path(args.noise).read_text())))
    elif args.calibration:
        cal = CalibrationData.from_json(Path(args.calibration))
        c = with_noise(c, build_noise_model(cal, seed=args.seed, zphase_mode=args.zphase_mode))
    observables = tuple(args.observables) if args.observables else tuple(f"Z{q}" for q in range(c.n_qubits))
    cfg = TrajectoryConfig(
        r=args.trajectories,
        base_seed=args.seed,
        mode=args.mode,
        observables=observables,
        histogram=args.histogram,
        precision=args.precision,
        max_fuse_size=args.max_fuse_size,
    )
    check_memory(c.n_qubits, args.precision, c.needs_scratch)
    farm_doc = json.loads(Path(args.farm_config).read_text()) if args.farm_config else {}
    if args.workers is not None:
        farm_doc["limit"] = args.workers
    if args.chunk is not None:
        farm_doc["chunk"] = args.chunk
    if args.backend is not None:
        farm_doc["backend"] = args.backend
    farm_doc.setdefault("chunk", max(1, -(-args.trajectories // 16)))
    res = run_farm(c, cfg, FarmConfig.from_json(farm_doc), args.out)
    return json.loads(summary_bytes(res.summary))


def cmd_bench(args) -> None:
    spec = BenchSpec.from_json(json.loads(Path(args.spec).read_text()))
    records = run_bench(spec)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(records, fh)
    else:
        write_csv(records, sys.stdout)


def _vector(text: str) -> list[float]:
    if Path(text).is_file():
        text = Path(text).read_text()
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of probabilities")
    return [float(x) for x in data]


def cmd_l1(args) -> dict:
    return {"l1": l1_distance(_vector(args.q), _vector(args.p))}


def cmd_fuse(args) -> dict:
    c = load_circuit(args.circuit)
    return plan_to_json(c, FuseConfig(args.max_fuse_size))


COMMANDS = {"run": cmd_run, "trajectories": cmd_trajectories, "bench": cmd_bench, "l1": cmd_l1, "fuse": cmd_fuse}
VALIDATION_ERRORS = (
    CircuitError,
    CalibrationError,
    FusionError,
    StateError,
    FarmError,
    ValueError,
    KeyError,
    OSError,
)


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        out = COMMANDS[args.cmd](args)
    except ResourceGuardError as exc:
        print(f"trajsim: resource guard: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except VALIDATION_ERRORS as exc:
        print(f"trajsim: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if out is not None:
        print(json.dumps(out, sort_keys=True, indent=1))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
