"""Stage chaining: workload -> pack -> balance -> MLAC plan -> simulate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .balance import RankAssignment, balance_lpt, balance_round_robin, token_count
from .config import CostModelSource, RunConfig
from .costmodel import LatentDims
from .mlac import MlacPlan, plan_mlac
from .packing import MicroBatch, pack_by_stage, pack_ffd
from .sim import CostModelTime, MlacSpec, SimConfig, SimReport, TraceEvent, default_estimator, simulate_run, simulate_step
from .workload import WorkItem, gen_workload, token_grid


class StageError(Exception):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name: str, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as e:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, e) from e


def workload(cfg: RunConfig) -> list[WorkItem]:
    return _stage("workload", gen_workload, cfg.recipes, cfg.vae, cfg.patch, cfg.item_count, cfg.seed, cfg.sampler)


def item_dims(items: list[WorkItem], cfg: RunConfig) -> dict[int, LatentDims]:
    return {it.id: token_grid(it.media, cfg.vae, cfg.patch) for it in items}


def pack_batches(items: list[WorkItem], cfg: RunConfig) -> list[list[MicroBatch]]:
    """Split the item stream into consecutive batches and pack each one."""

    def run():
        batches = []
        next_id = 0
        for start in range(0, len(items), cfg.batch_size):
            chunk = items[start:start + cfg.batch_size]
            if cfg.pack_grouping == "stage":
                mbs = pack_by_stage(chunk, cfg.capacity_tokens, first_id=next_id)
            else:
                mbs = pack_ffd(chunk, cfg.capacity_tokens, first_id=next_id)
            next_id += len(mbs)
            batches.append(mbs)
        return batches

    return _stage("pack", run)


def mlac_plan(cfg: RunConfig) -> MlacPlan | None:
    if cfg.mlac is None:
        return None
    m = cfg.mlac
    graph = _stage("mlac", cfg.load_graph)
    return _stage("mlac", plan_mlac, graph, m.gpu_budget, m.bandwidths, m.backward_compute_us, m.cpu_budget)


def sim_config(cfg: RunConfig, plan: MlacPlan | None = None) -> SimConfig:
    lut = cfg.load_lut()
    if isinstance(cfg.time_source, CostModelSource):
        ts = CostModelTime(cfg.model, cfg.time_source.achieved_efficiency)
    else:
        ts = lut
    mlac = None
    if plan is not None:
        mlac = MlacSpec(plan, cfg.load_graph(), cfg.mlac.bandwidths, cfg.mlac.layers)
    return SimConfig(
        time_source=ts,
        cluster=cfg.cluster,
        mlac=mlac,
        model=cfg.model,
        fsdp=cfg.fsdp,
        overlap_fsdp=cfg.overlap_fsdp,
        backward_multiplier=cfg.backward_multiplier,
    )


@dataclass
class PlanResult:
    items: list[WorkItem]
    batches: list[list[MicroBatch]]
    assignments: list[RankAssignment]
    plan: MlacPlan | None
    report: SimReport
    events: list[TraceEvent]


def run_plan(cfg: RunConfig) -> PlanResult:
    items = workload(cfg)
    batches = pack_batches(items, cfg)
    dims = _stage("balance", item_dims, items, cfg)
    plan = mlac_plan(cfg)
    scfg = _stage("simulate", sim_config, cfg, plan)
    est = default_estimator(scfg, dims)
    groups = cfg.cluster.dp_groups
    assignments = _stage("balance", lambda: [balance_lpt(b, groups, est) for b in batches])
    report, events = _stage(
        "simulate", simulate_run, batches, scfg, balance_lpt, dims, cfg.concurrent_planning, est
    )
    return PlanResult(items, batches, assignments, plan, report, events)


STRATEGIES = ("round_robin", "seqlen_greedy", "runtime_greedy")


def compare_strategies(
    batches: list[list[MicroBatch]], scfg: SimConfig, dims: dict[int, LatentDims] | None = None
) -> dict[str, SimReport]:
    """Balance the same batches three ways and simulate each under the true time source."""
    est = default_estimator(scfg, dims)
    groups = scfg.cluster.dp_groups
    balancers = {
        "round_robin": lambda b: balance_round_robin(b, groups, est),
        "seqlen_greedy": lambda b: balance_lpt(b, groups, token_count),
        "runtime_greedy": lambda b: balance_lpt(b, groups, est),
    }
    out = {}
    for name, bal in balancers.items():
        total = None
        for b in batches:
            rep, _ = simulate_step(bal(b), b, scfg, dims)
            if total is None:
                total = rep
            else:
                total.makespan += rep.makespan
                total.model_flops += rep.model_flops
                for x, y in zip(total.per_rank, rep.per_rank):
                    x.add(y)
        out[name] = total
    return out


def run_compare(cfg: RunConfig) -> dict[str, SimReport]:
    items = workload(cfg)
    batches = pack_batches(items, cfg)
    dims = _stage("compare", item_dims, items, cfg)
    scfg = _stage("compare", sim_config, cfg, None)
    return _stage("compare", compare_strategies, batches, scfg, dims)
