"""Deterministic step simulator for balanced multi-rank training batches.

Ranks are grouped into context-parallel groups of ``cp_degree`` consecutive
ranks. A group works through its micro-batches together: every member holds
a ``1/P`` shard of each sequence, so members share one timeline and the
Ulysses all-to-alls block all of them. Batches balance micro-batches over
groups; with ``cp_degree == 1`` a group is a single rank.

Per micro-batch a group runs forward, then backward (forward times the
backward multiplier). FSDP all-gathers and reduce-scatters run on a separate
communication stream and hide under compute when ``overlap_fsdp`` is set,
except for one reduce-scatter tail per batch. MLAC prefetch and recompute time
not hidden under backward compute is appended to the backward pass. All
groups meet at a zero-length barrier (the optimizer step) at batch end.

Times are microseconds.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

from .balance import RankAssignment, RuntimeLut, balance_lpt, estimate, plan_next_batch
from .costmodel import ClusterSpec, Full, LatentDims, ModelSpec, model_flops, mfu, param_count, ulysses_comm
from .errors import ValidationError
from .mlac import ActGraph, MlacPlan, TierBandwidths, backward_overhead, overhead_parts
from .packing import MicroBatch

CATEGORIES = ("compute", "alltoall", "fsdp", "mlac_transfer", "recompute", "idle")
COMPUTE_STREAM, COMM_STREAM, MLAC_STREAM = 0, 1, 2


@dataclass(frozen=True)
class CostModelTime:
    model: ModelSpec
    achieved_efficiency: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.achieved_efficiency <= 1.0:
            raise ValidationError(f"achieved_efficiency must be in (0, 1], got {self.achieved_efficiency}")


TimeSource = Union[RuntimeLut, CostModelTime]


@dataclass(frozen=True)
class MlacSpec:
    """One layer's activation chain and its plan, repeated ``layers`` times per micro-batch."""

    plan: MlacPlan
    graph: ActGraph
    bandwidths: TierBandwidths
    layers: int = 1


@dataclass(frozen=True)
class SimConfig:
    time_source: TimeSource
    cluster: ClusterSpec
    mlac: MlacSpec | None = None
    model: ModelSpec | None = None  # flop/parameter accounting under a LUT time source
    fsdp: bool = True
    overlap_fsdp: bool = True
    backward_multiplier: float = 2.0

    def __post_init__(self):
        if self.backward_multiplier < 0:
            raise ValidationError("backward_multiplier must be >= 0")

    @property
    def accounting_model(self) -> ModelSpec | None:
        if isinstance(self.time_source, CostModelTime):
            return self.time_source.model
        return self.model


@dataclass(frozen=True)
class TraceEvent:
    name: str
    category: str
    rank: int
    start: float
    duration: float
    stream: int = COMPUTE_STREAM

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class RankStats:
    busy: float = 0.0
    idle: float = 0.0
    compute: float = 0.0
    comm: float = 0.0
    exposed_comm: float = 0.0
    exposed_mlac: float = 0.0

    def add(self, other: "RankStats") -> None:
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))


@dataclass
class SimReport:
    makespan: float
    per_rank: list[RankStats]
    mfu: float | None
    event_counts: dict[str, int] = field(default_factory=dict)
    model_flops: float = 0.0

    @property
    def imbalance(self) -> float:
        busy = [r.busy for r in self.per_rank]
        if max(busy) <= 0:
            return 1.0
        if min(busy) == max(busy) == self.makespan:
            return 1.0
        return self.makespan / (math.fsum(busy) / len(busy))

    def to_dict(self) -> dict:
        return {
            "makespan_us": round(self.makespan),
            "per_rank": [
                {
                    "rank": i,
                    "busy_us": round(r.busy),
                    "idle_us": round(r.idle),
                    "compute_us": round(r.compute),
                    "comm_us": round(r.comm),
                    "exposed_comm_us": round(r.exposed_comm),
                    "exposed_mlac_us": round(r.exposed_mlac),
                }
                for i, r in enumerate(self.per_rank)
            ],
            "imbalance": round(self.imbalance, 6),
            "mfu": None if self.mfu is None else round(self.mfu, 6),
            "event_counts": {c: self.event_counts.get(c, 0) for c in CATEGORIES},
        }


def write_report(report: SimReport, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")


def chrome_trace(events: Sequence[TraceEvent]) -> dict:
    """Chrome Trace Event Format; complete ("X") events with integer microseconds."""
    out = []
    for e in events:
        ts = round(e.start)
        out.append(
            {
                "name": e.name,
                "cat": e.category,
                "ph": "X",
                "ts": ts,
                "dur": round(e.end) - ts,
                "pid": e.rank,
                "tid": e.stream,
            }
        )
    return {"traceEvents": out, "displayTimeUnit": "ms"}


def write_trace(events: Sequence[TraceEvent], path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(chrome_trace(events), f, separators=(",", ":"))
        f.write("\n")


def _dims_for(mb: MicroBatch, item_dims: Mapping[int, LatentDims] | None, model: ModelSpec) -> list[LatentDims]:
    dims = []
    for item, length in zip(mb.items, mb.lengths):
        d = item_dims.get(item) if item_dims else None
        if d is None:
            if any(not isinstance(k, Full) for k in model.attention_schedule):
                raise ValidationError(
                    f"micro-batch {mb.id}: item {item} has no latent dims; needed for non-full attention"
                )
            d = LatentDims(1, 1, length)
        elif d.tokens != length:
            raise ValidationError(f"micro-batch {mb.id}: item {item} dims give {d.tokens} tokens, expected {length}")
        dims.append(d)
    return dims


def microbatch_flops(mb: MicroBatch, model: ModelSpec, item_dims: Mapping[int, LatentDims] | None = None) -> float:
    """Forward flops; packed sequences attend only within themselves."""
    try:
        return sum(model_flops(d, model) for d in _dims_for(mb, item_dims, model))
    except ValidationError as e:
        msg = str(e)
        raise ValidationError(msg if msg.startswith("micro-batch") else f"micro-batch {mb.id}: {msg}") from None


@dataclass(frozen=True)
class CostModelEstimator:
    """Picklable forward-time estimate of a micro-batch on one context-parallel group."""

    model: ModelSpec
    efficiency: float
    group_flops: float
    item_dims: Mapping[int, LatentDims] | None = None

    def __call__(self, mb: MicroBatch) -> float:
        return microbatch_flops(mb, self.model, self.item_dims) / (self.group_flops * self.efficiency) * 1e6


def default_estimator(cfg: SimConfig, item_dims: Mapping[int, LatentDims] | None = None):
    ts = cfg.time_source
    if isinstance(ts, RuntimeLut):
        return ts
    c = cfg.cluster
    return CostModelEstimator(ts.model, ts.achieved_efficiency, c.peak_flops * c.cp_degree, item_dims)


def _alpha_beta(nbytes: float, c: ClusterSpec) -> float:
    return (c.link_latency + nbytes / c.link_bandwidth) * 1e6


class _Costs:
    """Per-micro-batch phase durations for one config."""

    def __init__(self, cfg: SimConfig, item_dims):
        self.cfg = cfg
        self.item_dims = item_dims
        c = cfg.cluster
        model = cfg.accounting_model
        self.fsdp_on = cfg.fsdp and model is not None and c.ranks > 1
        if self.fsdp_on:
            layer_bytes = param_count(model) / model.layers * c.element_bytes
            per = _alpha_beta(layer_bytes * (c.ranks - 1) / c.ranks, c)
            self.fsdp_layers = model.layers
            self.ag = per
            self.rs = per
        else:
            self.fsdp_layers, self.ag, self.rs = 0, 0.0, 0.0

    def forward(self, mb: MicroBatch) -> float:
        ts = self.cfg.time_source
        if isinstance(ts, RuntimeLut):
            return estimate(ts, mb.total_tokens)
        c = self.cfg.cluster
        flops = microbatch_flops(mb, ts.model, self.item_dims)
        return flops / c.cp_degree / (c.peak_flops * ts.achieved_efficiency) * 1e6

    def alltoall(self, mb: MicroBatch) -> float:
        ts, c = self.cfg.time_source, self.cfg.cluster
        P = c.cp_degree
        if isinstance(ts, RuntimeLut) or P == 1:
            return 0.0
        # pad the packed sequence so it shards evenly
        s = -(-mb.total_tokens // P) * P
        try:
            nbytes = ulysses_comm(s, ts.model, P, c.element_bytes)
        except ValidationError as e:
            raise ValidationError(f"micro-batch {mb.id}: {e}") from None
        return ts.model.layers * 4 * _alpha_beta(nbytes / 4, c)

    def mlac(self, backward: float) -> tuple[float, float, float]:
        """(exposed overhead, prefetch time, recompute time) for one micro-batch."""
        spec = self.cfg.mlac
        if spec is None:
            return 0.0, 0.0, 0.0
        per_layer = backward / spec.layers
        exposed = backward_overhead(spec.plan, spec.graph, spec.bandwidths, per_layer) * spec.layers
        t, r = overhead_parts(spec.plan, spec.graph, spec.bandwidths)
        return exposed, t * spec.layers, r * spec.layers


def simulate_step(
    assignment: RankAssignment,
    microbatches: Sequence[MicroBatch],
    cfg: SimConfig,
    item_dims: Mapping[int, LatentDims] | None = None,
    costs: _Costs | None = None,
) -> tuple[SimReport, list[TraceEvent]]:
    """Simulate one batch whose micro-batches are assigned to context-parallel groups."""
    c = cfg.cluster
    if assignment.n_ranks > c.dp_groups:
        raise ValidationError(
            f"assignment uses {assignment.n_ranks} groups but the cluster has {c.dp_groups} "
            f"({c.ranks} ranks / cp {c.cp_degree})"
        )
    by_id = {mb.id: mb for mb in microbatches}
    costs = costs or _Costs(cfg, item_dims)
    model = cfg.accounting_model
    P = c.cp_degree

    group_events: list[list[TraceEvent]] = []
    group_stats: list[RankStats] = []
    total_flops = 0.0
    for g in range(c.dp_groups):
        ids = assignment.ranks[g] if g < assignment.n_ranks else ()
        ev: list[TraceEvent] = []
        st = RankStats()
        t = 0.0
        for mb_id in ids:
            try:
                mb = by_id[mb_id]
            except KeyError:
                raise ValidationError(f"micro-batch {mb_id} is assigned but not provided") from None
            if model is not None:
                total_flops += microbatch_flops(mb, model, item_dims) * (1 + cfg.backward_multiplier)
            fwd = costs.forward(mb)
            bwd = fwd * cfg.backward_multiplier
            a2a = costs.alltoall(mb)
            mlac_exposed, mlac_t, mlac_r = costs.mlac(bwd)

            for phase, comp, comm in (
                ("fwd", fwd, costs.fsdp_layers * costs.ag),
                ("bwd", bwd, costs.fsdp_layers * (costs.ag + costs.rs)),
            ):
                start = t
                if comm > 0:
                    ev.append(TraceEvent(f"fsdp_{phase} mb{mb_id}", "fsdp", 0, start, comm, COMM_STREAM))
                    st.comm += comm
                    if not cfg.overlap_fsdp:
                        t += comm
                        st.exposed_comm += comm
                ev.append(TraceEvent(f"{phase} mb{mb_id}", "compute", 0, t, comp))
                st.compute += comp
                t += comp
                if a2a > 0:
                    ev.append(TraceEvent(f"a2a_{phase} mb{mb_id}", "alltoall", 0, t, a2a))
                    st.comm += a2a
                    st.exposed_comm += a2a
                    t += a2a
                if phase == "bwd" and cfg.mlac is not None:
                    if mlac_t > 0:
                        ev.append(TraceEvent(f"prefetch mb{mb_id}", "mlac_transfer", 0, start, mlac_t, MLAC_STREAM))
                    if mlac_exposed > 0:
                        cat = "recompute" if mlac_r > 0 else "mlac_transfer"
                        ev.append(TraceEvent(f"mlac_exposed mb{mb_id}", cat, 0, t, mlac_exposed))
                        st.exposed_mlac += mlac_exposed
                        t += mlac_exposed
                if comm > 0 and cfg.overlap_fsdp and start + comm > t:
                    st.exposed_comm += start + comm - t
                    t = start + comm
        if ids and costs.fsdp_on and cfg.overlap_fsdp:
            ev.append(TraceEvent("fsdp_rs_tail", "fsdp", 0, t, costs.rs, COMM_STREAM))
            st.comm += costs.rs
            st.exposed_comm += costs.rs
            t += costs.rs
        st.busy = t
        group_events.append(ev)
        group_stats.append(st)

    makespan = max(st.busy for st in group_stats)
    events: list[TraceEvent] = []
    per_rank: list[RankStats] = []
    for rank in range(c.ranks):
        g = rank // P
        st = RankStats(**vars(group_stats[g]))
        st.idle = makespan - st.busy
        per_rank.append(st)
        for e in group_events[g]:
            events.append(TraceEvent(e.name, e.category, rank, e.start, e.duration, e.stream))
        if st.idle > 0:
            events.append(TraceEvent("barrier_wait", "idle", rank, st.busy, st.idle))
    events.sort(key=lambda e: (e.rank, e.stream, e.start))

    util = None
    if model is not None and makespan > 0:
        util = mfu(total_flops, makespan * 1e-6, c.ranks, c.peak_flops)
    counts = Counter(e.category for e in events)
    return SimReport(makespan, per_rank, util, dict(counts), total_flops), events


def simulate_run(
    batches: Sequence[Sequence[MicroBatch]],
    cfg: SimConfig,
    balancer: Callable = balance_lpt,
    item_dims: Mapping[int, LatentDims] | None = None,
    concurrent: bool = False,
    estimator=None,
) -> tuple[SimReport, list[TraceEvent]]:
    """Balance and simulate each batch in turn, separated by barriers.

    With ``concurrent`` the next batch is balanced in a worker process while
    the current one is simulated; results are identical to sequential mode.
    """
    if not batches:
        raise ValidationError("simulate_run needs at least one batch")
    groups = cfg.cluster.dp_groups
    estimator = estimator if estimator is not None else default_estimator(cfg, item_dims)
    costs = _Costs(cfg, item_dims)

    total = None
    events: list[TraceEvent] = []
    offset = 0.0

    def run(assignments_for):
        nonlocal total, offset
        for k, batch in enumerate(batches):
            assignment = assignments_for(k)
            rep, ev = simulate_step(assignment, batch, cfg, item_dims, costs)
            events.extend(TraceEvent(e.name, e.category, e.rank, e.start + offset, e.duration, e.stream) for e in ev)
            offset += rep.makespan
            if total is None:
                total = rep
            else:
                total.makespan += rep.makespan
                total.model_flops += rep.model_flops
                for a, b in zip(total.per_rank, rep.per_rank):
                    a.add(b)
                for cat, n in rep.event_counts.items():
                    total.event_counts[cat] = total.event_counts.get(cat, 0) + n

    if concurrent:
        with ProcessPoolExecutor(max_workers=1) as pool:
            pending = plan_next_batch([batches[0]], groups, estimator, pool, balancer)

            def next_assignment(k):
                nonlocal pending
                result = pending.result()
                if k + 1 < len(batches):
                    pending = plan_next_batch([batches[k + 1]], groups, estimator, pool, balancer)
                return result

            run(next_assignment)
    else:
        run(lambda k: balancer(list(batches[k]), groups, estimator))

    c = cfg.cluster
    if cfg.accounting_model is not None and total.makespan > 0:
        total.mfu = mfu(total.model_flops, total.makespan * 1e-6, c.ranks, c.peak_flops)
    events.sort(key=lambda e: (e.rank, e.stream, e.start))
    return total, events
