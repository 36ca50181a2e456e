"""Multi-level activation checkpointing planner.

Each saved tensor of a layer's activation chain is kept on the GPU, offloaded
to CPU memory, offloaded to disk (staged through the CPU), or dropped and
recomputed in the backward pass. Module inputs are the recomputation roots, so
they may move off the GPU but are never dropped.

Costs are backward-pass times in microseconds. Offloads are assumed hidden
under forward compute; in backward, prefetches and recomputation overlap the
backward compute and only the excess is exposed.
"""

from __future__ import annotations

import csv
import enum
import math
from itertools import combinations
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import InstanceTooLarge, ValidationError

ORACLE_MAX_NODES = 10
GRAPH_HEADER = ("id", "flops", "bytes", "compute_bound", "is_module_input")


class Decision(enum.IntEnum):
    # order doubles as the oracle's lexicographic tie-break
    KEEP_GPU = 0
    OFFLOAD_CPU = 1
    OFFLOAD_DISK = 2
    RECOMPUTE = 3


@dataclass(frozen=True)
class ActNode:
    id: str
    flops: float
    activation_bytes: int
    compute_bound: bool = False
    is_module_input: bool = False

    def __post_init__(self):
        if self.flops < 0 or self.activation_bytes < 0:
            raise ValidationError(f"node {self.id}: flops and bytes must be >= 0")


@dataclass(frozen=True)
class ActGraph:
    """Linear chain of saved activations in forward (topological) order."""

    nodes: tuple[ActNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("activation graph node ids must be unique")

    def __len__(self):
        return len(self.nodes)

    @property
    def total_bytes(self) -> int:
        return sum(n.activation_bytes for n in self.nodes)


@dataclass(frozen=True)
class TierBandwidths:
    gpu_cpu: float
    cpu_disk: float
    compute: float

    def __post_init__(self):
        if min(self.gpu_cpu, self.cpu_disk, self.compute) <= 0:
            raise ValidationError("tier bandwidths and compute rate must be > 0")


@dataclass(frozen=True)
class MlacPlan:
    decisions: tuple[Decision, ...]
    gpu_resident_bytes: int
    est_overhead: float

    def count(self, d: Decision) -> int:
        return sum(1 for x in self.decisions if x == d)


def _us(amount: float, rate: float) -> float:
    return amount / rate * 1e6


def transfer_time(node: ActNode, d: Decision, bw: TierBandwidths) -> float:
    if d == Decision.OFFLOAD_CPU:
        return _us(node.activation_bytes, bw.gpu_cpu)
    if d == Decision.OFFLOAD_DISK:
        return _us(node.activation_bytes, bw.gpu_cpu) + _us(node.activation_bytes, bw.cpu_disk)
    return 0.0


def recompute_time(node: ActNode, bw: TierBandwidths) -> float:
    return _us(node.flops, bw.compute)


def node_cost(node: ActNode, d: Decision, bw: TierBandwidths) -> float:
    if d == Decision.RECOMPUTE:
        return recompute_time(node, bw)
    return transfer_time(node, d, bw)


def _exposed(total: float, backward_compute_time: float) -> float:
    return max(0.0, total - min(total, backward_compute_time))


def backward_overhead(
    plan: MlacPlan | Sequence[Decision],
    graph: ActGraph,
    bw: TierBandwidths,
    backward_compute_time: float,
) -> float:
    """Backward time exposed beyond ``backward_compute_time`` by prefetches and recomputation."""
    decisions = plan.decisions if isinstance(plan, MlacPlan) else tuple(plan)
    if len(decisions) != len(graph):
        raise ValidationError(f"plan has {len(decisions)} decisions for {len(graph)} nodes")
    t = sum(transfer_time(n, d, bw) for n, d in zip(graph.nodes, decisions))
    r = sum(recompute_time(n, bw) for n, d in zip(graph.nodes, decisions) if d == Decision.RECOMPUTE)
    return _exposed(t + r, backward_compute_time)


def overhead_parts(plan: MlacPlan, graph: ActGraph, bw: TierBandwidths) -> tuple[float, float]:
    """(total prefetch time, total recompute time) before overlap."""
    t = sum(transfer_time(n, d, bw) for n, d in zip(graph.nodes, plan.decisions))
    r = sum(recompute_time(n, bw) for n, d in zip(graph.nodes, plan.decisions) if d == Decision.RECOMPUTE)
    return t, r


def _allowed(node: ActNode) -> tuple[Decision, ...]:
    if node.is_module_input:
        return (Decision.KEEP_GPU, Decision.OFFLOAD_CPU, Decision.OFFLOAD_DISK)
    return tuple(Decision)


def _make_plan(decisions, graph, bw, backward_compute_time) -> MlacPlan:
    decisions = tuple(decisions)
    resident = sum(n.activation_bytes for n, d in zip(graph.nodes, decisions) if d == Decision.KEEP_GPU)
    return MlacPlan(decisions, resident, backward_overhead(decisions, graph, bw, backward_compute_time))


def _place_off_gpu(
    nodes: Sequence[tuple[int, ActNode]], bw: TierBandwidths, cpu_budget: float
) -> dict[int, Decision]:
    """Cheapest non-GPU tier per node; CPU capacity goes to the nodes that save most per byte."""
    out: dict[int, Decision] = {}
    wants_cpu = []
    for i, n in nodes:
        fallback = min(
            (d for d in _allowed(n) if d in (Decision.OFFLOAD_DISK, Decision.RECOMPUTE)),
            key=lambda d: (node_cost(n, d, bw), d),
        )
        out[i] = fallback
        cpu = node_cost(n, Decision.OFFLOAD_CPU, bw)
        gain = node_cost(n, fallback, bw) - cpu
        if gain > 0:
            wants_cpu.append((gain / max(n.activation_bytes, 1), i, n))
    wants_cpu.sort(key=lambda t: (-t[0], t[1]))
    room = cpu_budget
    on_cpu = set()
    for _, i, n in wants_cpu:
        if n.activation_bytes <= room:
            on_cpu.add(i)
            room -= n.activation_bytes
    if math.isfinite(cpu_budget):
        size = {i: n.activation_bytes for i, n in nodes}
        gain = {i: node_cost(n, out[i], bw) - node_cost(n, Decision.OFFLOAD_CPU, bw) for i, n in nodes}
        cand = [i for _, i, _ in wants_cpu]
        on_cpu = _improve(on_cpu, cand, gain, size, cpu_budget)
    for i in on_cpu:
        out[i] = Decision.OFFLOAD_CPU
    return out


def _swap_depth(n: int, work: int = 1_000_000) -> int:
    """Largest k with C(n, k)^2 <= work, at least 1."""
    k = 1
    while k < n and math.comb(n, k + 1) ** 2 <= work:
        k += 1
    return k


def _improve(keep: set[int], candidates: list[int], values: list[float], sizes: list[float], budget: float) -> set[int]:
    """Local search: swap up to k kept items for up to k others while the kept value strictly grows."""
    depth = _swap_depth(len(candidates))

    def groups(pool):
        pool = sorted(pool)
        for k in range(0, min(depth, len(pool)) + 1):
            yield from combinations(pool, k)

    used = sum(sizes[i] for i in keep)
    improved = True
    while improved:
        improved = False
        outside = [i for i in candidates if i not in keep]
        for out in groups(keep):
            room = budget - used + sum(sizes[i] for i in out)
            lost = sum(values[i] for i in out)
            for inn in groups(outside):
                if inn and sum(sizes[i] for i in inn) <= room and sum(values[i] for i in inn) > lost + 1e-12:
                    keep = (keep - set(out)) | set(inn)
                    used = sum(sizes[i] for i in keep)
                    improved = True
                    break
            if improved:
                break
    return keep


def plan_mlac(
    graph: ActGraph,
    gpu_budget: float,
    bw: TierBandwidths,
    backward_compute_time: float = 0.0,
    cpu_budget: float = math.inf,
) -> MlacPlan:
    """Greedy tier assignment under a GPU (and optional CPU) byte budget.

    Nodes are ranked by the backward time saved per GPU byte when kept
    resident (cost of the cheapest alternative over size); compute-bound
    nodes win ties. The budget is filled in that order, skipping nodes that
    no longer fit, once from an empty seed and once from every single node
    and pair of nodes. The best fill is refined by swapping up to
    ``_swap_depth`` kept nodes for unkept ones. The rest take their
    cheapest off-GPU tier, subject to ``cpu_budget``.
    """
    if gpu_budget < 0:
        raise ValidationError(f"GPU budget must be >= 0, got {gpu_budget}")
    if cpu_budget < 0:
        raise ValidationError(f"CPU budget must be >= 0, got {cpu_budget}")

    def alt_cost(n: ActNode) -> float:
        return min(node_cost(n, d, bw) for d in _allowed(n) if d != Decision.KEEP_GPU)

    values = [alt_cost(n) for n in graph.nodes]
    ranked = sorted(
        range(len(graph)),
        key=lambda i: (-values[i] / max(graph.nodes[i].activation_bytes, 1e-9), not graph.nodes[i].compute_bound, i),
    )
    ranked = [i for i in ranked if values[i] > 0]

    def fill(seed: tuple[int, ...]) -> tuple[float, tuple[int, ...]]:
        room = gpu_budget - sum(graph.nodes[i].activation_bytes for i in seed)
        if room < 0:
            return -1.0, seed
        kept = list(seed)
        for i in ranked:
            if i not in seed and graph.nodes[i].activation_bytes <= room:
                kept.append(i)
                room -= graph.nodes[i].activation_bytes
        return sum(values[i] for i in kept), tuple(sorted(kept))

    # greedy fill, also seeded with every node and every pair of nodes placed first
    best = fill(())
    for a in range(len(ranked)):
        best = max(best, fill((ranked[a],)), key=lambda t: t[0])
        for b in range(a + 1, len(ranked)):
            best = max(best, fill((ranked[a], ranked[b])), key=lambda t: t[0])
    keep = _improve(set(best[1]), ranked, values, [n.activation_bytes for n in graph.nodes], gpu_budget)

    rest = _place_off_gpu([(i, n) for i, n in enumerate(graph.nodes) if i not in keep], bw, cpu_budget)
    decisions = [Decision.KEEP_GPU if i in keep else rest[i] for i in range(len(graph))]
    return _make_plan(decisions, graph, bw, backward_compute_time)


def mlac_oracle(
    graph: ActGraph,
    gpu_budget: float,
    bw: TierBandwidths,
    backward_compute_time: float = 0.0,
    cpu_budget: float = math.inf,
) -> MlacPlan:
    """Minimum-overhead plan by exhaustive search over every decision vector.

    Branches are cut only when their partial cost already cannot beat the
    incumbent; ties keep the lexicographically smallest decision vector.
    """
    if len(graph) > ORACLE_MAX_NODES:
        raise InstanceTooLarge(f"mlac_oracle handles at most {ORACLE_MAX_NODES} nodes, got {len(graph)}")
    if gpu_budget < 0:
        raise ValidationError(f"GPU budget must be >= 0, got {gpu_budget}")
    nodes = graph.nodes
    n = len(nodes)
    costs = [{d: node_cost(nd, d, bw) for d in _allowed(nd)} for nd in nodes]
    best_cost = math.inf
    best: list[Decision] | None = None
    cur: list[Decision] = []

    def dfs(i: int, gpu: float, cpu: float, cost: float) -> None:
        nonlocal best_cost, best
        if _exposed(cost, backward_compute_time) >= best_cost:
            return
        if i == n:
            best_cost = _exposed(cost, backward_compute_time)
            best = list(cur)
            return
        b = nodes[i].activation_bytes
        for d, c in costs[i].items():
            g2 = gpu + b if d == Decision.KEEP_GPU else gpu
            c2 = cpu + b if d == Decision.OFFLOAD_CPU else cpu
            if g2 > gpu_budget or c2 > cpu_budget:
                continue
            cur.append(d)
            dfs(i + 1, g2, c2, cost + c)
            cur.pop()

    dfs(0, 0, 0, 0.0)
    if best is None:
        raise ValidationError("no feasible plan under the given budgets")
    return _make_plan(best, graph, bw, backward_compute_time)


def _parse_bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ValidationError(f"{where}: expected a boolean, got {text!r}")


def read_graph(path: str | Path) -> ActGraph:
    """Parse ``id,flops,bytes,compute_bound,is_module_input`` CSV; header required."""
    nodes = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != GRAPH_HEADER:
            raise ValidationError(f"{path}:1: expected header '{','.join(GRAPH_HEADER)}', got {header!r}")
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise ValidationError(f"{where}: expected 5 fields, got {len(row)}")
            try:
                flops, nbytes = float(row[1]), int(row[2])
            except ValueError:
                raise ValidationError(f"{where}: cannot parse {row!r}") from None
            nodes.append(
                ActNode(row[0].strip(), flops, nbytes, _parse_bool(row[3], where), _parse_bool(row[4], where))
            )
    return ActGraph(tuple(nodes))


def write_graph(graph: ActGraph, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GRAPH_HEADER)
        for n in graph.nodes:
            w.writerow([n.id, repr(n.flops), n.activation_bytes, int(n.compute_bound), int(n.is_module_input)])
