"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""

import itertools
import math
import time

import warnings

import numpy as np
import pytest
import scipy.stats

from oracles import DensityMatrix, embed_scatter, random_gate_ops, random_state, random_unitary
from trajsim import gates
from trajsim.bench import BenchSpec, linear_r2, log2_slope, random_circuit, run_bench, run_point
from trajsim.blocked import apply_gate_blocked, permute_register
from trajsim.channels import apply_channel_to_density, channel
from trajsim.circuit import ChannelOp, Circuit, completeness_error, gate, measure
from trajsim.farm import FarmConfig, VirtualCluster, partition, run_farm, summary_bytes
from trajsim.fusion import fuse
from trajsim.hardware_noise import (
    BudgetWarning,
    CalibrationData,
    PairCal,
    QubitCal,
    build_noise_model,
    decay_closed_form,
    decay_dephase_channel,
    decay_dephase_kraus,
    residual_depolarizing,
    uzz_gate,
)
from trajsim.noise import with_noise
from trajsim.statevector import StateVector, apply_gate, apply_gate_naive
from trajsim.trajectory import COUNTERS, BoundedKraus, TrajectoryConfig, TrajectorySimulator, run_trajectories

pytestmark = pytest.mark.slow

TOL = {"single": 1e-5, "double": 1e-12}
LANES = (4, 8, 16, 32)


# ------------------------------------------------------------ 1: kernels


def _kernel_case(psi, u, qubits, precision, k):
    n = int(psi.size).bit_length() - 1
    naive = apply_gate_naive(StateVector.from_amplitudes(psi, precision), u, qubits).amplitudes()
    blocked = apply_gate_blocked(StateVector.from_amplitudes(psi, precision, lanes=k), u, qubits).amplitudes()
    dense = embed_scatter(u, qubits, n) @ psi
    return max(np.max(np.abs(blocked - naive)), np.max(np.abs(blocked - dense)), np.max(np.abs(naive - dense)))


def test_c1_kernel_oracle_equivalence(rng, verdict):
    n = 10
    t0 = time.perf_counter()
    worst = {"single": 0.0, "double": 0.0}
    cases = 0
    for q in range(1, 7):
        for combo in itertools.combinations(range(n), q):
            qubits = [int(x) for x in rng.permutation(combo)]
            precision = ("single", "double")[cases % 2]
            k = LANES[cases % 4]
            err = _kernel_case(random_state(n, rng), random_unitary(1 << q, rng), qubits, precision, k)
            worst[precision] = max(worst[precision], err)
            cases += 1
    placements = cases
    for _ in range(200):
        q = int(rng.integers(1, 7))
        qubits = [int(x) for x in rng.choice(n, size=q, replace=False)]
        for precision in ("single", "double"):
            k = LANES[int(rng.integers(4))]
            err = _kernel_case(random_state(n, rng), random_unitary(1 << q, rng), qubits, precision, k)
            worst[precision] = max(worst[precision], err)
    wall = time.perf_counter() - t0
    ok = worst["single"] < TOL["single"] and worst["double"] < TOL["double"] and wall < 120
    verdict(
        1,
        "kernel oracle equivalence",
        ok,
        f"{placements} placements + 200 random cases; max err single {worst['single']:.2e}, "
        f"double {worst['double']:.2e}; {wall:.1f} s",
    )
    assert ok


# ------------------------------------------------------------ 2: lane permutation


def test_c2_lane_permutation_golden(verdict):
    source = [f"a{i}" for i in range(8)]
    got = ["".join(permute_register(source, reg, 3)[::-1]) for reg in (1, 2, 3)]
    want = ["a4a7a6a5a0a3a2a1", "a5a4a7a6a1a0a3a2", "a6a5a4a7a2a1a0a3"]
    ok = got == want
    verdict(2, "lane permutation golden example", ok, " ".join(got))
    assert ok


# ------------------------------------------------------------ 3: fusion


def _run_single(n, ops):
    s = StateVector.zero(n, "single")
    for op in ops:
        apply_gate(s, op.matrix, op.qubits)
    return s.amplitudes()


def test_c3_fusion_equivalence(rng, verdict):
    t0 = time.perf_counter()
    worst, count_ok, arity_ok = 0.0, True, True
    for _ in range(50):
        n = int(rng.integers(2, 13))
        ops = random_gate_ops(n, int(rng.integers(1, 51)), 2, rng)
        ref = _run_single(n, ops)
        for f in (2, 3, 4, 5):
            fused = fuse(ops, f)
            count_ok &= len(fused) <= len(ops)
            arity_ok &= all(len(fg.qubits) <= f for fg in fused)
            worst = max(worst, float(np.max(np.abs(_run_single(n, fused) - ref))))
    wall = time.perf_counter() - t0
    ok = worst < 1e-4 and count_ok and arity_ok and wall < 300
    verdict(3, "fusion equivalence", ok, f"max diff {worst:.2e}, counts ok {count_ok}, arity ok {arity_ok}; {wall:.1f} s")
    assert ok


# ------------------------------------------------------------ 4: trajectories vs density matrix


def _c4_circuit():
    ops = []
    for op in random_circuit(8, 4, seed=2024).all_operations():
        ops.append(op)
        ops.append(channel("depolarize", *op.qubits, p=0.01))
        for q in op.qubits:
            ops.append(channel("amplitude_damp", q, gamma=0.02))
            ops.append(channel("phase_damp", q, gamma=0.03))
    return Circuit.from_ops(8, ops)


def test_c4_trajectories_match_density_matrix(verdict):
    c = _c4_circuit()
    exact = DensityMatrix(8).run(c)
    cfg = TrajectoryConfig(r=20_000, base_seed=4, observables=tuple(f"Z{q}" for q in range(8)))
    t0 = time.perf_counter()
    est = run_trajectories(c, cfg).estimates()
    wall = time.perf_counter() - t0
    z = [abs(est[f"Z{q}"].mean - exact.expectation_z(q)) / est[f"Z{q}"].stderr for q in range(8)]
    ok = max(z) < 4 and wall < 600
    verdict(4, "trajectories vs density matrix", ok, f"max |z| {max(z):.2f} over 8 qubits, r=2e4; {wall:.1f} s")
    assert ok


# ------------------------------------------------------------ 5: delayed == conventional


def _s07(a, b):
    p0, p1 = np.diag([1, 0]).astype(complex), np.diag([0, 1]).astype(complex)
    return channel(
        "kraus", a, b, kraus=[math.sqrt(0.7) * np.eye(4), math.sqrt(0.3) * np.kron(p0, gates.I2), math.sqrt(0.3) * np.kron(p1, gates.X)]
    )


def _stinespring(rng, a, b, r=3):
    v = random_unitary(4 * r, rng)[:, :4]
    return channel("kraus", a, b, kraus=[v[4 * i : 4 * i + 4] for i in range(r)])


def _draw_counts(psi, bk, mode, draws, seed):
    sim = TrajectorySimulator(Circuit(4, ()), TrajectoryConfig(r=1, mode=mode, precision="double"))
    rng = np.random.Generator(np.random.PCG64(seed))
    state = StateVector.from_amplitudes(psi, "double")
    counters = dict.fromkeys(COUNTERS, 0)
    counts = np.zeros(len(bk.channel.kraus), dtype=np.int64)
    for _ in range(draws):
        state.data[:] = psi
        i, _ = sim.sample_channel(state, bk, rng, [], counters, ("k", 0))
        counts[i] += 1
    return counts


def test_c5_delayed_equals_conventional(rng, verdict):
    psi = random_state(4, rng)
    suite = [
        channel("amplitude_damp", 1, gamma=0.3),
        channel("phase_damp", 0, gamma=0.4),
        decay_dephase_channel(4000.0, 10.0, 7.0, 3),
        _s07(2, 0),
        channel("depolarize", 1, 3, p=0.2),
        _stinespring(rng, 0, 2),
    ]
    draws = 100_000
    # one independent stream per (channel, mode)
    seeds = iter(np.random.SeedSequence(5).spawn(2 * len(suite)))
    worst_p, lines = 1.0, []
    for ch in suite:
        bk = BoundedKraus.from_channel(ch)
        exact = np.array([np.linalg.norm(embed_scatter(k, ch.qubits, 4) @ psi) ** 2 for k in ch.kraus])
        exact /= exact.sum()
        for mode in ("delayed", "conventional"):
            counts = _draw_counts(psi, bk, mode, draws, next(seeds))
            live = exact > 1e-12
            assert counts[~live].sum() == 0
            p = scipy.stats.chisquare(counts[live], exact[live] * draws).pvalue if live.sum() > 1 else 1.0
            worst_p = min(worst_p, p)
            lines.append(f"{ch.name}/{mode[0]} p={p:.3f}")
    mix = Circuit.from_ops(
        3,
        [gate("H", 0), channel("depolarize", 0, 1, p=0.1), gate("CNOT", 0, 1), channel("bit_flip", 2, p=0.3),
         channel("depolarize", 2, p=0.05), channel("mixed_unitary", 1, mixture=[(0.6, gates.I2), (0.4, gates.Z)]),
         measure(0, 1, 2, key="m")],
    )
    counters = run_trajectories(mix, TrajectoryConfig(r=500, observables=("Z0",))).counters
    ok = worst_p > 0.01 and counters["inner_products"] == 0 and counters["deferred"] == counters["channels"]
    verdict(5, "delayed == conventional", ok, f"min chi2 p {worst_p:.3f} over 12 tests; unitary-mixture inner products {counters['inner_products']}")
    assert ok, "; ".join(lines)


# ------------------------------------------------------------ 6: low-noise speedup


def test_c6_low_noise_speedup(verdict):
    spec = BenchSpec(axis="noise_strength", values=(1e-4, 1e-3, 1e-2, 1e-1), n=20, depth=10, seed=6)
    recs = {p: run_point(spec.point(p), 0, p) for p in spec.values}
    frac = [recs[p].deferral_fraction for p in spec.values]
    ratio = recs[1e-3].wall_s / recs[1e-1].wall_s
    monotone = all(a >= b for a, b in zip(frac, frac[1:])) and frac[0] > frac[-1]
    ok = ratio <= 0.5 and monotone
    verdict(
        6,
        "low-noise speedup",
        ok,
        f"t(1e-3)/t(1e-1) = {ratio:.3f}; deferral {', '.join(f'{f:.4f}' for f in frac)}",
    )
    assert ok


# ------------------------------------------------------------ 7: scaling shapes


def _fastest(records):
    """Minimum wall time per sweep value; repetitions absorb scheduler jitter."""
    best = {}
    for r in records:
        best[r.value] = min(best.get(r.value, math.inf), r.wall_s)
    return list(best), list(best.values())


def test_c7_scaling_shapes(verdict):
    depth = run_bench(BenchSpec(axis="depth", values=(10, 20, 40, 60, 80, 100), n=20, seed=7, repetitions=3))
    r2 = linear_r2(*_fastest(depth))
    qubits = run_bench(BenchSpec(axis="qubits", values=tuple(range(18, 25)), depth=20, seed=7, repetitions=2))
    slope = log2_slope(*_fastest(qubits))
    ok = r2 >= 0.95 and 0.8 <= slope <= 1.4
    verdict(7, "scaling shapes", ok, f"depth R^2 {r2:.4f}; log2-time slope {slope:.3f} over n=18..24")
    assert ok


# ------------------------------------------------------------ 8: Monte Carlo scaling


def test_c8_monte_carlo_scaling(verdict):
    c = Circuit.from_ops(1, [gate("RY", 0, phi=0.3), channel("bit_flip", 0, p=0.25)])
    ratios = []
    for rep in range(10):
        small = run_trajectories(c, TrajectoryConfig(r=100, base_seed=2 * rep + 1, observables=("Z0",))).estimates()
        large = run_trajectories(c, TrajectoryConfig(r=10_000, base_seed=2 * rep + 2, observables=("Z0",))).estimates()
        ratios.append(large["Z0"].stderr / small["Z0"].stderr)
    ok = all(0.066 <= x <= 0.15 for x in ratios)
    verdict(8, "Monte Carlo 1/sqrt(r) scaling", ok, f"stderr ratios in [{min(ratios):.4f}, {max(ratios):.4f}] over 10 repeats")
    assert ok


# ------------------------------------------------------------ 9: noise model soundness


def _random_calibration(rng, n):
    qubits = {}
    for q in range(n):
        t1 = float(rng.uniform(5, 100)) if rng.random() > 0.1 else math.inf
        tphi = float(rng.uniform(5, 200)) if rng.random() > 0.1 else math.inf
        qubits[q] = QubitCal(t1, tphi, float(rng.uniform(0, 0.1)), float(rng.uniform(0, 0.1)),
                             float(rng.uniform(0, 0.01)) if rng.random() > 0.2 else None)
    pairs = {
        (q, q + 1): PairCal(float(rng.normal(0, 0.05)), float(rng.normal(0, 0.05)), float(rng.normal(0, 0.1)),
                            float(rng.uniform(0, 0.05)), float(rng.uniform(0, 0.03)))
        for q in range(n - 1)
    }
    durations = {"1q": float(rng.uniform(10, 50)), "2q": float(rng.uniform(10, 80)), "measure": 1000.0}
    return CalibrationData(qubits, pairs, durations)


def test_c9_noise_model_soundness(rng, verdict):
    n = 3
    c = Circuit.from_ops(
        n,
        [gate("H", 0), gate("RX", 2, phi=0.4), gate("CZ", 0, 1), gate("SQRT_ISWAP", 1, 2), gate("FSIM", 0, 1, theta=0.5, phi=0.2),
         gate("ISWAP", 2, 1), measure(0, 1, 2, key="m")],
    )
    worst_tp, channels = 0.0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetWarning)
        for i in range(1000):
            mode = "per_trajectory" if i % 4 == 3 else "fixed"
            noisy = with_noise(c, build_noise_model(_random_calibration(rng, n), seed=i, zphase_mode=mode))
            for op in noisy.all_operations():
                if isinstance(op, ChannelOp):
                    worst_tp = max(worst_tp, completeness_error(op.kraus))
                    channels += 1
    worst_decay = 0.0
    for _ in range(1000):
        t, t1, tphi = rng.uniform(0, 5), rng.uniform(1, 100), rng.uniform(1, 100)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        got = apply_channel_to_density(rho, decay_dephase_kraus(t, t1, tphi))
        worst_decay = max(worst_decay, float(np.max(np.abs(got - decay_closed_form(rho, t, t1, tphi)))))
    worst_fsim = max(
        float(np.max(np.abs(u.conj().T @ u - np.eye(4))))
        for u in (gates.fsim(th, ph) for th in np.linspace(-math.pi, math.pi, 41) for ph in np.linspace(-math.pi, math.pi, 41))
    )
    cz_exact = np.array_equal(uzz_gate(0.05, 10.0), gates.CZ) and np.array_equal(uzz_gate(0.25, 2.0), gates.CZ)
    with warnings.catch_warnings():
        warnings.simplefilter("error", BudgetWarning)
        boundary = residual_depolarizing(0.004, 0.002, 0.002, 0.0) == 0.0 and residual_depolarizing(0.01, 0.002, 0.002, 0.001) == pytest.approx(0.005)
    with pytest.warns(BudgetWarning):
        clamped = residual_depolarizing(0.003, 0.002, 0.002, 0.001) == 0.0
    ok = worst_tp < 1e-9 and worst_decay < 1e-12 and worst_fsim < 1e-14 and cz_exact and boundary and clamped
    verdict(
        9,
        "noise-model soundness",
        ok,
        f"{channels} channels, max completeness err {worst_tp:.1e}; decay err {worst_decay:.1e}; "
        f"fsim err {worst_fsim:.1e}; zeta T = 0.5 gives CZ {cz_exact}; clamp {boundary and clamped}",
    )
    assert ok


# ------------------------------------------------------------ 10: farm


def _farm_circuit():
    return Circuit.from_ops(
        4,
        [gate("H", 0), channel("amplitude_damp", 0, gamma=0.1), gate("CNOT", 0, 1), channel("depolarize", 1, 2, p=0.05),
         gate("RY", 3, phi=0.7), channel("phase_damp", 3, gamma=0.2), gate("CZ", 2, 3), measure(0, 1, 2, 3, key="m")],
    )


def test_c10_farm_determinism_and_fault_tolerance(rng, verdict):
    c = _farm_circuit()
    cfg = TrajectoryConfig(r=400, base_seed=10, observables=("Z0", "Z1", "Z2", "Z3"), histogram=True)
    ref = summary_bytes(run_trajectories(c, cfg))
    outs = [summary_bytes(run_farm(c, cfg, FarmConfig(limit=w, chunk=25, tick_ms=1)).summary) for w in (1, 2, 8)]
    same = all(o == ref for o in outs)
    faulted = run_farm(c, cfg, FarmConfig(limit=8, chunk=25, tick_ms=1), faults=[(3, 0)])
    fault_ok = summary_bytes(faulted.summary) == ref and faulted.attempts[3] == 2
    vc = VirtualCluster(job_ticks=3)
    next_id, total, peak, conserved = 0, 0, 0, True
    for _ in range(10_000):
        if rng.random() < 0.05:
            jobs = partition(int(rng.integers(1, 300)), int(rng.integers(1, 20)))
            for j in jobs:
                j.id += next_id
            next_id += len(jobs)
            total += sum(j.size for j in jobs)
            vc.submit(jobs)
        vc.step()
        peak = max(peak, len(vc.pool.workers))
        conserved &= vc.conserved() == total
    ok = same and fault_ok and peak <= 20 and conserved
    verdict(10, "farm determinism and fault tolerance", ok,
            f"workers 1/2/8 identical {same}; fault retried identical {fault_ok}; peak workers {peak} over 1e4 ticks")
    assert ok
