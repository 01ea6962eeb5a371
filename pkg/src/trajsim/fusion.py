"""Gate fusion.

Two passes over a barrier-free gate stream:

1. *Absorption.*  Each multi-qubit gate absorbs smaller gates acting on a
   subset of its qubits that are its direct neighbours in time (first the
   preceding ones, then left-over trailing ones).
2. *Greedy growth.*  Units from pass 1 are visited in time order.  The first
   unmarked unit seeds a fused gate; the earliest unmarked successor on any
   of its qubits is added while the qubit count stays within ``max_fuse_size``.
   A successor touching a new qubit may pull in its immediate unmarked
   predecessor on that qubit, provided that predecessor has no unmarked
   predecessors of its own.

Only the plan (which inputs go into which fused gate) depends on qubits, so
plans can be cached by qubit structure; fused matrices are built lazily.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, Sequence

import numpy as np

from .circuit import ChannelOp, Circuit, GateOp, Measurement

DEFAULT_MAX_FUSE_SIZE = 4


class FusionError(ValueError):
    pass


class GateLike(Protocol):
    qubits: tuple[int, ...]
    matrix: np.ndarray


@dataclass(frozen=True)
class FuseConfig:
    max_fuse_size: int = DEFAULT_MAX_FUSE_SIZE

    def __post_init__(self):
        if not 2 <= self.max_fuse_size <= 6:
            raise FusionError("max fuse size must be between 2 and 6")


def _absorb(qubits: Sequence[tuple[int, ...]]) -> list[list[int]]:
    """Pass 1.  Returns groups of input indices, each anchored at its largest gate."""
    n_ops = len(qubits)
    timeline: dict[int, list[int]] = {}
    pos: dict[tuple[int, int], int] = {}
    for i, qs in enumerate(qubits):
        for q in qs:
            line = timeline.setdefault(q, [])
            pos[(i, q)] = len(line)
            line.append(i)

    owner = list(range(n_ops))
    grown = [False] * n_ops  # anchors that already absorbed something

    def between_owned(s: int, anchor: int, q: int) -> bool:
        a, b = sorted((pos[(s, q)], pos[(anchor, q)]))
        return all(owner[j] == anchor for j in timeline[q][a + 1 : b])

    def absorbable(s: int, anchor: int) -> bool:
        return (
            owner[s] == s
            and not grown[s]
            and len(qubits[s]) < len(qubits[anchor])
            and set(qubits[s]) <= set(qubits[anchor])
            and all(between_owned(s, anchor, q) for q in qubits[s])
        )

    # preceding neighbours
    for big in range(n_ops):
        if len(qubits[big]) < 2 or owner[big] != big:
            continue
        changed = True
        while changed:
            changed = False
            for q in qubits[big]:
                p = pos[(big, q)] - 1
                while p >= 0:
                    s = timeline[q][p]
                    if owner[s] == big:
                        p -= 1
                        continue
                    if s < big and absorbable(s, big):
                        owner[s] = big
                        grown[big] = True
                        changed = True
                        p -= 1
                        continue
                    break

    # trailing neighbours go to the preceding large gate
    for s in range(n_ops):
        if owner[s] != s or grown[s]:
            continue
        q0 = qubits[s][0]
        p = pos[(s, q0)] - 1
        if p < 0:
            continue
        anchor = owner[timeline[q0][p]]
        if anchor < s and len(qubits[anchor]) >= 2 and absorbable(s, anchor):
            owner[s] = anchor
            grown[anchor] = True

    groups: dict[int, list[int]] = {}
    for i in range(n_ops):
        groups.setdefault(owner[i], []).append(i)
    return [groups[a] for a in sorted(groups)]


def fusion_plan(qubits: Sequence[Sequence[int]], max_fuse_size: int = DEFAULT_MAX_FUSE_SIZE) -> list[list[int]]:
    """Fusion plan: for each fused gate, the (time-ordered) input indices it contains."""
    FuseConfig(max_fuse_size)
    qubits = [tuple(qs) for qs in qubits]
    for i, qs in enumerate(qubits):
        if len(qs) > max_fuse_size:
            raise FusionError(f"gate {i} acts on {len(qs)} qubits, above max fuse size {max_fuse_size}")
    if not qubits:
        return []

    groups = _absorb(qubits)
    anchor = [max(g, key=lambda i: (len(qubits[i]), -i)) for g in groups]
    unit_qubits = [frozenset(q for i in g for q in qubits[i]) for g in groups]
    n_units = len(groups)
    # per-qubit timelines of units (groups are already in anchor order)
    timeline: dict[int, list[int]] = {}
    for u in range(n_units):
        for q in sorted(unit_qubits[u]):
            timeline.setdefault(q, []).append(u)
    head = {q: 0 for q in timeline}
    marked = [False] * n_units

    def first_unmarked(q: int) -> int | None:
        line = timeline[q]
        h = head[q]
        while h < len(line) and marked[line[h]]:
            h += 1
        head[q] = h
        return line[h] if h < len(line) else None

    def predecessor(u: int, q: int) -> int | None:
        line = timeline[q]
        idx = line.index(u)
        return line[idx - 1] if idx > 0 else None

    def is_front(u: int) -> bool:
        return all(first_unmarked(q) == u for q in unit_qubits[u])

    fused: list[list[int]] = []
    for seed in range(n_units):
        if marked[seed]:
            continue
        marked[seed] = True
        members = [seed]
        current = set(unit_qubits[seed])
        grew = True
        while grew:
            grew = False
            cands = {first_unmarked(q) for q in current} - {None}
            for g in sorted(cands, key=lambda u: (anchor[u], min(unit_qubits[u]))):
                new = set(current) | unit_qubits[g]
                if len(new) > max_fuse_size:
                    continue
                if any(first_unmarked(q) != g for q in unit_qubits[g] & current):
                    continue
                extra: list[int] = []
                ok = True
                for q in sorted(unit_qubits[g] - current):
                    b = first_unmarked(q)
                    if b == g or b in extra:
                        continue
                    if b is None or predecessor(g, q) != b or not is_front(b):
                        ok = False
                        break
                    extra.append(b)
                    new |= unit_qubits[b]
                if not ok or len(new) > max_fuse_size:
                    continue
                for u in extra + [g]:
                    marked[u] = True
                members.extend(extra + [g])
                current = new
                grew = True
                break
        fused.append(sorted(i for u in members for i in groups[u]))
    return fused


def embed_matrix(matrix: np.ndarray, gate_qubits: Sequence[int], target_qubits: Sequence[int]) -> np.ndarray:
    """Embed ``matrix`` (on ``gate_qubits``) into the space of ``target_qubits``.

    Both lists use the package convention (first qubit = most significant bit).
    """
    t = len(target_qubits)
    eye = np.eye(1 << t, dtype=complex)
    return apply_on_rows(eye, matrix, [target_qubits.index(q) for q in gate_qubits], t)


def apply_on_rows(m: np.ndarray, matrix: np.ndarray, positions: Sequence[int], t: int) -> np.ndarray:
    """Left-multiply ``m`` (``2**t`` rows) by ``matrix`` acting on the given row-index bit positions.

    ``positions`` counts from the most significant bit.
    """
    q = len(positions)
    cols = m.shape[1]
    tensor = m.reshape((2,) * t + (cols,))
    g = np.asarray(matrix).reshape((2,) * (2 * q))
    out = np.tensordot(g, tensor, axes=(list(range(q, 2 * q)), list(positions)))
    # tensordot puts the gate's output axes first; move them back into place
    rest = [a for a in range(t) if a not in positions]
    order = list(positions) + rest + [t]
    inverse = np.argsort(order)
    return out.transpose(inverse).reshape(1 << t, cols)


@dataclass
class FusedGate:
    """A fused gate: sorted qubits plus the time-ordered constituent gates."""

    qubits: tuple[int, ...]
    indices: tuple[int, ...]
    constituents: tuple = field(repr=False, default=())

    @cached_property
    def matrix(self) -> np.ndarray:
        return fused_matrix(self)


def fused_matrix(fg: FusedGate) -> np.ndarray:
    """Time-ordered product of the constituents embedded on ``fg.qubits``."""
    t = len(fg.qubits)
    out = np.eye(1 << t, dtype=complex)
    target = list(fg.qubits)
    for g in fg.constituents:
        out = apply_on_rows(out, g.matrix, [target.index(q) for q in g.qubits], t)
    return out


def fuse(gates: Sequence[GateLike], config: FuseConfig | int = DEFAULT_MAX_FUSE_SIZE) -> list[FusedGate]:
    """Fuse a barrier-free gate sequence."""
    f = config.max_fuse_size if isinstance(config, FuseConfig) else int(config)
    plan = fusion_plan([g.qubits for g in gates], f)
    out = []
    for idx in plan:
        qs = tuple(sorted({q for i in idx for q in gates[i].qubits}))
        out.append(FusedGate(qs, tuple(idx), tuple(gates[i] for i in idx)))
    return out


def fuse_circuit(circuit: Circuit, config: FuseConfig | int = DEFAULT_MAX_FUSE_SIZE) -> list:
    """Fuse each gate segment of a circuit; channels and measurements are barriers.

    Returns a list mixing :class:`FusedGate`, :class:`ChannelOp` and
    :class:`Measurement` in execution order.
    """
    out: list = []
    segment: list[GateOp] = []
    for op in circuit.all_operations():
        if isinstance(op, GateOp):
            segment.append(op)
            continue
        out.extend(fuse(segment, config))
        segment = []
        out.append(op)
    out.extend(fuse(segment, config))
    return out


def plan_to_json(circuit: Circuit, config: FuseConfig | int = DEFAULT_MAX_FUSE_SIZE) -> dict:
    """Debug dump: gate indices (in circuit operation order) per fused gate."""
    plan = []
    segment: list[int] = []
    ops = list(circuit.all_operations())
    f = config.max_fuse_size if isinstance(config, FuseConfig) else int(config)

    def close():
        for idx in fusion_plan([ops[i].qubits for i in segment], f):
            members = [segment[i] for i in idx]
            plan.append({"ops": members, "qubits": sorted({q for i in members for q in ops[i].qubits})})

    for i, op in enumerate(ops):
        if isinstance(op, GateOp):
            segment.append(i)
        else:
            close()
            segment = []
            plan.append({"barrier": i, "kind": "measure" if isinstance(op, Measurement) else "channel"})
    close()
    return {"max_fuse_size": f, "fused": plan}


__all__ = [
    "ChannelOp",
    "FuseConfig",
    "FusedGate",
    "FusionError",
    "embed_matrix",
    "fuse",
    "fuse_circuit",
    "fused_matrix",
    "fusion_plan",
    "plan_to_json",
]
