"""Calibration-driven hardware noise.

Four error sources are added around every gate: amplitude decay with pure
dephasing, coherent errors on fSim-family two-qubit gates, a residual
depolarizing channel sized to the measured error budget, and readout
misclassification on measurements.

Units: durations in ns, coherence times in us.  Within a function all times
share one unit.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import gates
from .channels import channel, check_probability, pauli_words, register_channel
from .circuit import (
    ChannelOp,
    Circuit,
    CircuitError,
    GateOp,
    Measurement,
    Moment,
    op_duration_ns,
)
from .gates import fsim, uzz
from .noise import NoiseModel


class CalibrationError(ValueError):
    pass


class BudgetWarning(UserWarning):
    """The error budget left nothing for the depolarizing channel."""


# ------------------------------------------------------------ coherence times


def t2_from(t1: float, tphi: float) -> float:
    """``1/T2 = 1/(2 T1) + 1/Tphi``; either time may be ``inf``."""
    if not t1 > 0 or not tphi > 0:
        raise CalibrationError("T1 and Tphi must be positive")
    rate = 1 / (2 * t1) + 1 / tphi
    return math.inf if rate == 0 else 1 / rate


def tphi_from_incoherent(eps_inc: float, t: float, t1: float) -> float:
    """Leading-order inversion of ``eps_inc = t/(3 T1) + t/(3 Tphi)``.

    An incoherent error exactly equal to the T1 share means no pure dephasing
    (``inf``); anything smaller has no positive solution.
    """
    if not t > 0 or not t1 > 0 or eps_inc < 0:
        raise CalibrationError("need t > 0, T1 > 0 and eps_inc >= 0")
    denom = 3 * eps_inc - t / t1
    if denom < 0 and not math.isclose(3 * eps_inc, t / t1, rel_tol=1e-12, abs_tol=1e-300):
        raise CalibrationError("incoherent error inconsistent with T1")
    return math.inf if denom <= 0 else t / denom


def decay_dephase_kraus(t: float, t1: float, tphi: float) -> list[np.ndarray]:
    """Three Kraus operators for decay over time ``t`` (any consistent unit)."""
    if t < 0 or not t1 > 0 or not tphi > 0:
        raise CalibrationError("need t >= 0, T1 > 0, Tphi > 0")
    t2 = t2_from(t1, tphi)
    e1 = math.exp(-t / t1)
    e2 = math.exp(-t / t2)
    rest = e1 - e2 * e2
    if rest < -1e-15:
        raise CalibrationError("unphysical decay parameters (exp(-t/T1) < exp(-2t/T2))")
    rest = max(rest, 0.0)
    k0 = np.diag([1.0, e2]).astype(complex)
    k1 = np.array([[0, math.sqrt(1 - e1)], [0, 0]], dtype=complex)
    k2 = np.diag([0.0, math.sqrt(rest)]).astype(complex)
    return [k0, k1, k2]


def _time(v) -> float:
    return math.inf if v is None else float(v)


def _decay_builder(params: dict, n: int):
    if n != 1:
        raise CircuitError("decay_dephase acts on one qubit")
    t = float(params["t_ns"]) * 1e-3
    return decay_dephase_kraus(t, _time(params.get("t1_us")), _time(params.get("tphi_us"))), False


def decay_dephase_channel(t_ns: float, t1_us: float, tphi_us: float, qubit: int = 0) -> ChannelOp:
    """Decay/dephasing channel; infinite times are stored as ``None``."""
    return channel(
        "decay_dephase",
        qubit,
        t_ns=float(t_ns),
        t1_us=None if math.isinf(t1_us) else float(t1_us),
        tphi_us=None if math.isinf(tphi_us) else float(tphi_us),
    )


def decay_closed_form(rho: np.ndarray, t: float, t1: float, tphi: float) -> np.ndarray:
    """Closed-form single-qubit decay map (reference for the Kraus form)."""
    e1 = math.exp(-t / t1)
    e2 = math.exp(-t / t2_from(t1, tphi))
    return np.array(
        [
            [rho[0, 0] + (1 - e1) * rho[1, 1], e2 * rho[0, 1]],
            [e2 * rho[1, 0], e1 * rho[1, 1]],
        ],
        dtype=complex,
    )


# ---------------------------------------------------------- pauli accounting


def pauli_error(kraus: Sequence[np.ndarray]) -> float:
    """Process infidelity ``1 - sum |tr K|^2 / D^2`` of a channel."""
    d = kraus[0].shape[0]
    return max(0.0, 1.0 - math.fsum(abs(np.trace(k)) ** 2 for k in kraus) / d**2)


def entangling_error(v: np.ndarray) -> float:
    """``r_ent = 1 - |tr V|^2 / D^2`` for the composite coherent-error unitary."""
    d = v.shape[0]
    return max(0.0, 1.0 - abs(np.trace(v)) ** 2 / d**2)


def residual_depolarizing(r_p_tot: float, r_inc_0: float, r_inc_1: float, r_ent: float) -> float:
    """Budget left for depolarizing; clamps at 0 with a :class:`BudgetWarning`."""
    parts = (r_p_tot, r_inc_0, r_inc_1, r_ent)
    if any(x < 0 for x in parts):
        raise CalibrationError("error budget terms must be non-negative")
    r = r_p_tot - r_inc_0 - r_inc_1 - r_ent
    if r < 0:
        if r < -1e-15:
            warnings.warn(
                f"error budget over-subscribed by {-r:.3g}; depolarizing error clamped to 0",
                BudgetWarning,
                stacklevel=2,
            )
        return 0.0
    return r


def rb_to_pauli(r_avg: float, d: int = 2) -> float:
    """Average-gate-error to Pauli-error conversion ``r (D+1)/D``."""
    return r_avg * (d + 1) / d


def depolarizing_channel(r_dep: float, n_qubits: int, qubits: Sequence[int] | None = None) -> ChannelOp:
    """Standard depolarizing channel with Pauli error ``r_dep`` on 1 or 2 qubits."""
    if n_qubits not in (1, 2):
        raise CalibrationError("depolarizing channel supports 1 or 2 qubits")
    check_probability(r_dep, "r_dep")
    qs = tuple(range(n_qubits)) if qubits is None else tuple(qubits)
    if len(qs) != n_qubits:
        raise CalibrationError("qubit list does not match n_qubits")
    return channel("depolarize", *qs, p=r_dep)


# ------------------------------------------------------------ fiducial forms


def _fiducial_builder(params: dict, n: int):
    eps = check_probability(params["eps"], "eps")
    d2 = 4**n
    words = [gates.pauli_matrix(w) for w in pauli_words(n)]
    ks = [math.sqrt(1 - eps + eps / d2) * words[0]]
    if eps > 0:
        ks += [math.sqrt(eps / d2) * p for p in words[1:]]
    return ks, True


def depol_fiducial(eps: float, n: int = 1, qubits: Sequence[int] | None = None) -> ChannelOp:
    """``D_n[eps](rho) = (1 - eps) rho + eps I / 2**n``.

    Same map as the standard channel with ``r_dep = eps (1 - 1/D**2)``.
    """
    qs = tuple(range(n)) if qubits is None else tuple(qubits)
    return channel("depol_fiducial", *qs, eps=eps)


def fiducial_to_standard(eps: float, n: int) -> float:
    return eps * (1 - 1 / 4**n)


def uzz_gate(zeta: float, gate_time: float) -> np.ndarray:
    """``diag(1, 1, 1, exp(-2 pi i zeta T))``."""
    if not math.isfinite(zeta) or not gate_time > 0:
        raise CalibrationError("need finite zeta and T > 0")
    return uzz(zeta, gate_time)


# ------------------------------------------------------------ coherent errors

GH_ORDER = 7


def _zphase_mixture_builder(params: dict, n: int):
    if n != 1:
        raise CircuitError("zphase_mixture acts on one qubit")
    mean, std = float(params["mean_rad"]), float(params["std_rad"])
    order = int(params.get("order", GH_ORDER))
    if std < 0:
        raise CircuitError("std_rad must be non-negative")
    if std == 0:
        return [gates.zphase(mean)], True
    # Gauss-Hermite quadrature of the Gaussian phase average
    x, w = np.polynomial.hermite.hermgauss(order)
    w = w / math.sqrt(math.pi)
    return [math.sqrt(wi) * gates.zphase(mean + math.sqrt(2) * std * xi) for xi, wi in zip(x, w)], True


def fsim_coherent_error(
    dtheta: float,
    dphi: float,
    z_phases: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    intended: GateOp | None = None,
    qubits: Sequence[int] = (0, 1),
) -> list[GateOp]:
    """Gate sequence: Z phases before, intended gate, ``fsim(dtheta, dphi)``, Z phases after."""
    if not all(math.isfinite(v) for v in (dtheta, dphi, *z_phases)):
        raise CalibrationError("coherent error angles must be finite")
    q0, q1 = qubits if intended is None else intended.qubits
    pre0, pre1, post0, post1 = z_phases
    seq = []
    if pre0 or pre1:
        seq += [GateOp("ZPHASE", (q0,), gates.zphase(pre0), {"phi": pre0}), GateOp("ZPHASE", (q1,), gates.zphase(pre1), {"phi": pre1})]
    if intended is not None:
        seq.append(intended)
    if dtheta or dphi:
        seq.append(GateOp("FSIM", (q0, q1), fsim(dtheta, dphi), {"theta": dtheta, "phi": dphi}))
    if post0 or post1:
        seq += [GateOp("ZPHASE", (q0,), gates.zphase(post0), {"phi": post0}), GateOp("ZPHASE", (q1,), gates.zphase(post1), {"phi": post1})]
    return seq


def coherent_unitary(dtheta: float, dphi: float, z_phases: Sequence[float]) -> np.ndarray:
    """Composite error ``V = Zpost fsim(dtheta, dphi) Zpre`` (error relative to the intended gate)."""
    pre0, pre1, post0, post1 = z_phases
    zpre = np.kron(gates.zphase(pre0), gates.zphase(pre1))
    zpost = np.kron(gates.zphase(post0), gates.zphase(post1))
    return zpost @ fsim(dtheta, dphi) @ zpre


for _name, _builder in {
    "decay_dephase": _decay_builder,
    "zphase_mixture": _zphase_mixture_builder,
    "depol_fiducial": _fiducial_builder,
}.items():
    register_channel(_name, _builder)


# ------------------------------------------------------------------ calibration


@dataclass(frozen=True)
class QubitCal:
    t1_us: float = math.inf
    tphi_us: float = math.inf
    p00_err: float = 0.0
    p11_err: float = 0.0
    rb_avg_err: float | None = None


@dataclass(frozen=True)
class PairCal:
    dtheta_rad: float = 0.0
    dphi_rad: float = 0.0
    zphase_mean_rad: float = 0.0
    zphase_std_rad: float = 0.0
    xeb_pauli_err: float = 0.0


@dataclass(frozen=True)
class CalibrationData:
    qubits: Mapping[int, QubitCal]
    pairs: Mapping[tuple[int, int], PairCal] = field(default_factory=dict)
    durations_ns: Mapping[str, float] = field(default_factory=lambda: {"1q": 25.0, "2q": 32.0, "measure": 4000.0})
    zeta: float | None = None
    uzz_gate_ns: float | None = None

    def __post_init__(self):
        for q, c in self.qubits.items():
            if not c.t1_us > 0 or not c.tphi_us > 0:
                raise CalibrationError(f"qubit {q}: T1 and Tphi must be positive")
            for name in ("p00_err", "p11_err"):
                if not 0 <= getattr(c, name) <= 1:
                    raise CalibrationError(f"qubit {q}: {name} outside [0, 1]")
            if c.rb_avg_err is not None and not 0 <= c.rb_avg_err <= 1:
                raise CalibrationError(f"qubit {q}: rb_avg_err outside [0, 1]")
        for pair, c in self.pairs.items():
            if not 0 <= c.xeb_pauli_err <= 1:
                raise CalibrationError(f"pair {pair}: xeb_pauli_err outside [0, 1]")
            if c.zphase_std_rad < 0:
                raise CalibrationError(f"pair {pair}: zphase_std_rad must be non-negative")
        for k, v in self.durations_ns.items():
            if not v > 0:
                raise CalibrationError(f"duration {k} must be positive")
        if self.zeta is not None and (self.uzz_gate_ns is None or not self.uzz_gate_ns > 0):
            raise CalibrationError("zeta requires a positive uzz_gate_ns")

    def qubit(self, q: int) -> QubitCal:
        if q not in self.qubits:
            raise CalibrationError(f"missing calibration for qubit {q}")
        return self.qubits[q]

    def pair(self, a: int, b: int) -> PairCal:
        for key in ((a, b), (b, a)):
            if key in self.pairs:
                return self.pairs[key]
        raise CalibrationError(f"missing calibration for pair {a}-{b}")

    @classmethod
    def from_json(cls, doc: dict | str | Path) -> "CalibrationData":
        if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
            doc = json.loads(Path(doc).read_text())
        elif isinstance(doc, str):
            doc = json.loads(doc)
        durations = {"1q": 25.0, "2q": 32.0, "measure": 4000.0}
        durations.update({k: float(v) for k, v in doc.get("durations_ns", {}).items()})
        qubits = {}
        for key, entry in doc.get("qubits", {}).items():
            q = int(key)
            t1 = _time(entry.get("t1_us"))
            if "tphi_us" in entry:
                tphi = _time(entry["tphi_us"])
            elif "eps_inc" in entry:
                probe = float(entry.get("probe_ns", durations["1q"])) * 1e-3
                try:
                    tphi = tphi_from_incoherent(float(entry["eps_inc"]), probe, t1)
                except CalibrationError as exc:
                    raise CalibrationError(f"qubit {q}: {exc}") from None
            else:
                tphi = math.inf
            qubits[q] = QubitCal(
                t1,
                tphi,
                float(entry.get("p00_err", 0.0)),
                float(entry.get("p11_err", 0.0)),
                None if entry.get("rb_avg_err") is None else float(entry["rb_avg_err"]),
            )
        pairs = {}
        for key, entry in doc.get("pairs", {}).items():
            a, b = (int(x) for x in key.split("-"))
            pairs[(a, b)] = PairCal(**{k: float(v) for k, v in entry.items()})
        return cls(qubits, pairs, durations, doc.get("zeta"), doc.get("uzz_gate_ns"))

    def to_json(self) -> dict:
        def t(v):
            return None if math.isinf(v) else v

        return {
            "qubits": {
                str(q): {
                    "t1_us": t(c.t1_us),
                    "tphi_us": t(c.tphi_us),
                    "p00_err": c.p00_err,
                    "p11_err": c.p11_err,
                    **({"rb_avg_err": c.rb_avg_err} if c.rb_avg_err is not None else {}),
                }
                for q, c in sorted(self.qubits.items())
            },
            "pairs": {f"{a}-{b}": vars(c).copy() for (a, b), c in sorted(self.pairs.items())},
            "durations_ns": dict(self.durations_ns),
            **({"zeta": self.zeta, "uzz_gate_ns": self.uzz_gate_ns} if self.zeta is not None else {}),
        }


# ------------------------------------------------------------------- model


def _is_identity(op: ChannelOp) -> bool:
    if len(op.kraus) != 1:
        return False
    k = op.kraus[0]
    return bool(np.max(np.abs(k - np.eye(k.shape[0]))) == 0)


def _unitary_op(qubits, matrix) -> ChannelOp:
    # registered name, so noisy circuits survive a JSON round trip
    return channel("unitary", *qubits, matrix=np.asarray(matrix, dtype=complex))


class QcsNoiseModel(NoiseModel):
    """Noise from calibration data.

    Per moment the output is: Z phases before fSim-family gates, the moment
    itself, the ``fsim(dtheta, dphi)`` error, Z phases after, the optional
    ``U_ZZ`` control error after sqrt-iSWAP gates, depolarizing channels, and
    decay on every qubit (idle qubits use the moment's longest duration).
    Measurement-only moments get readout parameters and no decay.

    ``zphase_mode="fixed"`` draws the Z-phase errors once, from ``seed``;
    ``"per_trajectory"`` inserts a Gaussian phase mixture instead, so every
    trajectory samples fresh phases.
    """

    mode = "moment"

    def __init__(self, cal: CalibrationData, seed: int = 0, zphase_mode: str = "fixed"):
        if zphase_mode not in ("fixed", "per_trajectory"):
            raise CalibrationError("zphase_mode must be 'fixed' or 'per_trajectory'")
        self.calibration = cal
        self.seed = seed
        self.zphase_mode = zphase_mode
        self.warnings: list[str] = []
        rng = np.random.default_rng(seed)
        self._zphases: dict[tuple[int, int], tuple[float, float, float, float]] = {}
        for pair, pc in sorted(cal.pairs.items()):
            draw = rng.normal(pc.zphase_mean_rad, pc.zphase_std_rad, size=4) if pc.zphase_std_rad > 0 else [pc.zphase_mean_rad] * 4
            self._zphases[pair] = tuple(float(x) for x in draw)

    # ---- derived rates
    def decay(self, q: int, t_ns: float) -> ChannelOp:
        c = self.calibration.qubit(q)
        return decay_dephase_channel(t_ns, c.t1_us, c.tphi_us, q)

    def r_inc(self, q: int, t_ns: float) -> float:
        return pauli_error(self.decay(q, t_ns).kraus)

    def zphases(self, a: int, b: int) -> tuple[float, float, float, float]:
        self.calibration.pair(a, b)
        if (a, b) in self._zphases:
            return self._zphases[(a, b)]
        pre0, pre1, post0, post1 = self._zphases[(b, a)]
        return (pre1, pre0, post1, post0)

    def r_dep_1q(self, q: int, t_ns: float) -> float:
        c = self.calibration.qubit(q)
        if c.rb_avg_err is None:
            return 0.0
        return self._clamped(rb_to_pauli(c.rb_avg_err), self.r_inc(q, t_ns), 0.0, 0.0, f"qubit {q}")

    def r_dep_2q(self, op: GateOp, t_ns: float) -> float:
        a, b = op.qubits
        pc = self.calibration.pair(a, b)
        r_ent = 0.0
        if op.name in gates.FSIM_FAMILY:
            dth, dph = self._angles(op)
            r_ent = entangling_error(coherent_unitary(dth, dph, self._zphase_means(a, b)))
        return self._clamped(pc.xeb_pauli_err, self.r_inc(a, t_ns), self.r_inc(b, t_ns), r_ent, f"pair {a}-{b}")

    def _zphase_means(self, a: int, b: int):
        return self.zphases(a, b) if self.zphase_mode == "fixed" else (self.calibration.pair(a, b).zphase_mean_rad,) * 4

    def _angles(self, op: GateOp) -> tuple[float, float]:
        pc = self.calibration.pair(*op.qubits)
        return pc.dtheta_rad, pc.dphi_rad

    def _clamped(self, total, r0, r1, r_ent, where) -> float:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r = residual_depolarizing(total, r0, r1, r_ent)
        for w in caught:
            msg = f"{where}: {w.message}"
            if msg not in self.warnings:
                self.warnings.append(msg)
                warnings.warn(msg, BudgetWarning, stacklevel=3)
        return r

    # ---- rewriting
    def _zlayer(self, ops, which: int) -> list[ChannelOp]:
        out = []
        for op in ops:
            a, b = op.qubits
            if self.zphase_mode == "fixed":
                phases = self.zphases(a, b)
                for q, phi in ((a, phases[2 * which]), (b, phases[2 * which + 1])):
                    out.append(_unitary_op((q,), gates.zphase(phi)))
            else:
                pc = self.calibration.pair(a, b)
                for q in (a, b):
                    out.append(channel("zphase_mixture", q, mean_rad=pc.zphase_mean_rad, std_rad=pc.zphase_std_rad))
        return [c for c in out if not _is_identity(c)]

    def noisy_moment(self, moment: Moment, circuit: Circuit) -> list[Moment]:
        ops = list(moment)
        if ops and all(isinstance(op, ChannelOp) for op in ops):
            return [moment]
        cal = self.calibration
        durations = cal.durations_ns
        gate_ops = [op for op in ops if isinstance(op, GateOp)]
        for op in gate_ops:
            if len(op.qubits) > 2:
                raise CalibrationError(f"no calibration model for {len(op.qubits)}-qubit gate {op.name}")
            for q in op.qubits:
                cal.qubit(q)
            if len(op.qubits) == 2:
                cal.pair(*op.qubits)
        two_q = [op for op in gate_ops if len(op.qubits) == 2 and op.name in gates.FSIM_FAMILY]

        pre = self._zlayer(two_q, 0)
        main = []
        for op in ops:
            if isinstance(op, Measurement):
                c = [cal.qubit(q) for q in op.qubits]
                op = Measurement(op.qubits, op.key, tuple(x.p00_err for x in c), tuple(x.p11_err for x in c), op.duration_ns)
            main.append(op)
        fsim_err = []
        for op in two_q:
            dth, dph = self._angles(op)
            if dth or dph:
                fsim_err.append(_unitary_op(op.qubits, fsim(dth, dph)))
        post = self._zlayer(two_q, 1)
        uzz_layer = []
        if cal.zeta is not None:
            for op in gate_ops:
                if op.name == "SQRT_ISWAP":
                    uzz_layer.append(_unitary_op(op.qubits, uzz_gate(cal.zeta, cal.uzz_gate_ns)))
        depol = []
        for op in gate_ops:
            t = op_duration_ns(op, durations)
            r = self.r_dep_1q(op.qubits[0], t) if len(op.qubits) == 1 else self.r_dep_2q(op, t)
            if r > 0:
                depol.append(depolarizing_channel(r, len(op.qubits), op.qubits))
        decay = []
        if gate_ops:
            busy = {q: op_duration_ns(op, durations) for op in gate_ops for q in op.qubits}
            measured = {q for op in ops if isinstance(op, Measurement) for q in op.qubits}
            idle_t = max(busy.values())
            for q in range(circuit.n_qubits):
                if q in measured:
                    continue
                if q not in busy and q not in cal.qubits:
                    raise CalibrationError(f"missing calibration for qubit {q}")
                ch = self.decay(q, busy.get(q, idle_t))
                if not _is_identity_kraus(ch):
                    decay.append(ch)
        layers = [pre, main, fsim_err, post, uzz_layer, depol, decay]
        return [Moment(tuple(layer)) for layer in layers if layer]


def _is_identity_kraus(ch: ChannelOp) -> bool:
    eye = np.eye(2)
    k0 = ch.kraus[0]
    return bool(np.max(np.abs(k0 - eye)) == 0 and all(np.max(np.abs(k)) == 0 for k in ch.kraus[1:]))


def build_noise_model(cal: CalibrationData | dict, seed: int = 0, zphase_mode: str = "fixed") -> QcsNoiseModel:
    if not isinstance(cal, CalibrationData):
        cal = CalibrationData.from_json(cal)
    return QcsNoiseModel(cal, seed, zphase_mode)


__all__ = [
    "BudgetWarning",
    "CalibrationData",
    "CalibrationError",
    "PairCal",
    "QcsNoiseModel",
    "QubitCal",
    "build_noise_model",
    "coherent_unitary",
    "decay_closed_form",
    "decay_dephase_channel",
    "decay_dephase_kraus",
    "depol_fiducial",
    "depolarizing_channel",
    "entangling_error",
    "fiducial_to_standard",
    "fsim",
    "fsim_coherent_error",
    "pauli_error",
    "rb_to_pauli",
    "residual_depolarizing",
    "t2_from",
    "tphi_from_incoherent",
    "uzz_gate",
]
