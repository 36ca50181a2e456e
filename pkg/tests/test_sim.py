import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_mbs
from ditsched.balance import RankAssignment, RuntimeLut, balance_lpt, balance_round_robin, estimate, token_count
from ditsched.costmodel import ClusterSpec, LatentDims, ModelSpec, seaweed7b
from ditsched.errors import ValidationError
from ditsched.mlac import ActGraph, ActNode, Decision, TierBandwidths, plan_mlac
from ditsched.packing import MicroBatch
from ditsched.sim import (
    CostModelTime,
    MlacSpec,
    SimConfig,
    chrome_trace,
    simulate_run,
    simulate_step,
    write_report,
    write_trace,
)

LINEAR = RuntimeLut(((1, 1.0), (1000, 1000.0)))
CONVEX = RuntimeLut(tuple((s, s * s / 100.0) for s in range(0, 2001, 100) if s) + ((4000, 160000.0),))
SMALL = ModelSpec(layers=4, hidden=256, heads=8)


def lut_cfg(ranks=1, lut=LINEAR, mult=2.0, **kw):
    return SimConfig(lut, ClusterSpec(ranks), backward_multiplier=mult, **kw)


def cm_cfg(ranks=1, cp=1, eff=1.0, model=SMALL, fsdp=False, **cluster):
    return SimConfig(CostModelTime(model, eff), ClusterSpec(ranks, cp, **cluster), fsdp=fsdp)


def check_invariants(report, events):
    for r in report.per_rank:
        assert r.busy + r.idle == pytest.approx(report.makespan)
        assert r.idle >= -1e-9
    assert report.imbalance >= 1 - 1e-12
    for e in events:
        assert e.duration >= 0
    by_rank = {}
    for e in events:
        if e.stream == 0:
            by_rank.setdefault(e.rank, []).append(e)
    for evs in by_rank.values():
        starts = [e.start for e in evs]
        assert starts == sorted(starts)
        for a, b in zip(evs, evs[1:]):
            assert a.end <= b.start + 1e-9


# --- worked examples ----------------------------------------------------------------

def test_single_rank_serial_sum():
    mbs = make_mbs([100, 250, 700], capacity=1000)
    cfg = lut_cfg(1, CONVEX)
    rep, ev = simulate_step(balance_lpt(mbs, 1, CONVEX), mbs, cfg)
    assert rep.makespan == pytest.approx(sum(estimate(CONVEX, n) for n in (100, 250, 700)) * 3)
    check_invariants(rep, ev)


def test_two_rank_idle_and_imbalance():
    mbs = make_mbs([40, 50], capacity=100)
    a = RankAssignment(((0,), (1,)), (40.0, 50.0))
    rep, ev = simulate_step(a, mbs, lut_cfg(2, mult=1.0))
    assert [r.busy for r in rep.per_rank] == [80, 100]
    assert rep.makespan == 100
    assert rep.imbalance == pytest.approx(100 / 90)
    assert rep.per_rank[0].idle == 20 and rep.per_rank[1].idle == 0
    assert rep.to_dict()["imbalance"] == 1.111111
    check_invariants(rep, ev)


def test_cost_model_closure_gives_unit_mfu():
    mbs = make_mbs([512, 256], capacity=1024)
    cfg = cm_cfg()
    rep, _ = simulate_step(balance_lpt(mbs, 1, token_count), mbs, cfg)
    assert rep.mfu == pytest.approx(1.0, abs=1e-9)


def test_context_parallel_communication_lowers_mfu():
    mbs = make_mbs([1024, 1024])
    r1, _ = simulate_run([mbs], cm_cfg(2, 1))
    r2, _ = simulate_run([mbs], cm_cfg(2, 2))
    assert r2.mfu < r1.mfu
    assert r2.makespan > r1.makespan
    assert r2.event_counts["alltoall"] > 0 and "alltoall" not in r1.event_counts


def test_balanced_workload_has_unit_imbalance():
    mbs = make_mbs([300] * 12)
    for cfg in (lut_cfg(4, CONVEX), cm_cfg(4), cm_cfg(4, 2), cm_cfg(4, fsdp=True)):
        rep, ev = simulate_run([mbs], cfg)
        assert rep.imbalance == 1.0
        check_invariants(rep, ev)


# --- determinism and trace format ---------------------------------------------------

def _run_files(tmp_path, tag):
    rng = random.Random(0)
    mbs = make_mbs([rng.randint(1, 2000) for _ in range(10)], capacity=2000)
    cfg = SimConfig(CONVEX, ClusterSpec(4, 2), model=SMALL)
    rep, ev = simulate_run([mbs[:5], mbs[5:]], cfg)
    write_report(rep, tmp_path / f"r{tag}.json")
    write_trace(ev, tmp_path / f"t{tag}.json")
    return (tmp_path / f"r{tag}.json").read_bytes(), (tmp_path / f"t{tag}.json").read_bytes()


def test_identical_runs_identical_bytes(tmp_path):
    assert _run_files(tmp_path, 1) == _run_files(tmp_path, 2)


def test_report_and_trace_format(tmp_path):
    rep_bytes, trace_bytes = _run_files(tmp_path, 0)
    rep = json.loads(rep_bytes)
    assert {"makespan_us", "per_rank", "imbalance", "mfu", "event_counts"} <= set(rep)
    assert isinstance(rep["makespan_us"], int)
    trace = json.loads(trace_bytes)
    assert trace["traceEvents"]
    for e in trace["traceEvents"]:
        assert set(e) == {"name", "cat", "ph", "ts", "dur", "pid", "tid"}
        assert e["ph"] == "X" and isinstance(e["ts"], int) and isinstance(e["dur"], int) and e["dur"] >= 0
        assert e["cat"] in ("compute", "alltoall", "fsdp", "mlac_transfer", "recompute", "idle")


def test_chrome_trace_back_to_back_events_stay_adjacent():
    from ditsched.sim import TraceEvent

    t = chrome_trace([TraceEvent("a", "compute", 0, 0.4, 0.8), TraceEvent("b", "compute", 0, 1.2, 0.4)])
    a, b = t["traceEvents"]
    assert (a["ts"], a["dur"], b["ts"], b["dur"]) == (0, 1, 1, 1)
    assert a["ts"] + a["dur"] == b["ts"]


# --- properties ---------------------------------------------------------------------

assignments_in = st.tuples(st.lists(st.integers(1, 2000), min_size=1, max_size=10), st.integers(1, 4))


@settings(deadline=None, max_examples=50)
@given(assignments_in, st.randoms())
def test_work_conservation(inst, rnd):
    lengths, R = inst
    mbs = make_mbs(lengths, capacity=2000)
    cfg = lut_cfg(R, CONVEX)
    groups = [[] for _ in range(R)]
    for mb in mbs:
        groups[rnd.randrange(R)].append(mb.id)
    rand = RankAssignment(tuple(map(tuple, groups)), tuple(0.0 for _ in groups))
    reports = [
        simulate_step(a, mbs, cfg)[0]
        for a in (balance_lpt(mbs, R, CONVEX), balance_round_robin(mbs, R, CONVEX), rand)
    ]
    totals = [sum(r.compute for r in rep.per_rank) for rep in reports]
    assert totals == pytest.approx([totals[0]] * 3)
    for rep in reports:
        assert sum(r.busy for r in rep.per_rank) == pytest.approx(totals[0])


@settings(deadline=None, max_examples=40)
@given(st.lists(st.integers(1, 64), min_size=1, max_size=8), st.sampled_from([(2, 2), (4, 2), (4, 4)]))
def test_communication_never_helps(units, shape):
    R, P = shape
    mbs = make_mbs([u * 64 for u in units], capacity=64 * 64)
    ideal = cm_cfg(R, P, link_bandwidth=1e30, link_latency=0.0)
    real = cm_cfg(R, P)
    a, _ = simulate_run([mbs], ideal)
    b, _ = simulate_run([mbs], real)
    assert b.makespan >= a.makespan
    assert b.mfu <= a.mfu


def _mlac_spec(budget):
    g = ActGraph(tuple(ActNode(f"n{i}", 5e9 * (i + 1), 4 << 20, i % 2 == 0, i == 0) for i in range(6)))
    bw = TierBandwidths(gpu_cpu=2e9, cpu_disk=5e8, compute=1e13)
    return MlacSpec(plan_mlac(g, budget, bw), g, bw, layers=4)


@pytest.mark.parametrize("budget", [0, 8 << 20, 16 << 20])
def test_mlac_overhead_never_helps(budget):
    mbs = make_mbs([256, 512, 1024], capacity=1024)
    base = cm_cfg(2)
    with_mlac = SimConfig(base.time_source, base.cluster, mlac=_mlac_spec(budget), fsdp=False)
    r0, _ = simulate_run([mbs], base)
    r1, ev = simulate_run([mbs], with_mlac)
    assert r1.makespan >= r0.makespan
    assert r1.mfu <= r0.mfu
    check_invariants(r1, ev)
    if budget == 0:
        assert r1.makespan > r0.makespan and sum(r.exposed_mlac for r in r1.per_rank) > 0


def test_fsdp_overlap_exposes_only_tail():
    mbs = make_mbs([4096] * 2)
    model = seaweed7b()
    over = SimConfig(CostModelTime(model, 0.5), ClusterSpec(2), fsdp=True, overlap_fsdp=True)
    serial = SimConfig(CostModelTime(model, 0.5), ClusterSpec(2), fsdp=True, overlap_fsdp=False)
    nofsdp = SimConfig(CostModelTime(model, 0.5), ClusterSpec(2), fsdp=False)
    a, ev = simulate_run([mbs], over)
    b, _ = simulate_run([mbs], serial)
    c, _ = simulate_run([mbs], nofsdp)
    assert c.makespan <= a.makespan <= b.makespan
    check_invariants(a, ev)
    assert any(e.name == "fsdp_rs_tail" for e in ev)


# --- multi-batch runs ----------------------------------------------------------------

def test_single_batch_run_equals_step():
    mbs = make_mbs([500, 1200, 90, 700], capacity=2000)
    cfg = lut_cfg(2, CONVEX)
    run, ev_run = simulate_run([mbs], cfg)
    step, ev_step = simulate_step(balance_lpt(mbs, 2, CONVEX), mbs, cfg)
    assert run.to_dict() == step.to_dict()
    assert ev_run == sorted(ev_step, key=lambda e: (e.rank, e.stream, e.start))


def test_two_identical_batches_double_makespan():
    mbs = make_mbs([500, 1200, 90, 700], capacity=2000)
    cfg = lut_cfg(2, CONVEX)
    one, _ = simulate_run([mbs], cfg)
    two, ev = simulate_run([mbs, mbs], cfg)
    assert two.makespan == pytest.approx(2 * one.makespan)
    check_invariants(two, ev)


def test_concurrent_planning_is_byte_identical(tmp_path):
    rng = random.Random(1)
    batches = [make_mbs([rng.randint(1, 2000) for _ in range(8)], capacity=2000) for _ in range(4)]
    cfg = SimConfig(CONVEX, ClusterSpec(4), model=SMALL)
    for tag, conc in (("seq", False), ("conc", True)):
        rep, ev = simulate_run(batches, cfg, concurrent=conc)
        write_report(rep, tmp_path / f"{tag}.json")
        write_trace(ev, tmp_path / f"{tag}.trace")
    assert (tmp_path / "seq.json").read_bytes() == (tmp_path / "conc.json").read_bytes()
    assert (tmp_path / "seq.trace").read_bytes() == (tmp_path / "conc.trace").read_bytes()


# --- errors --------------------------------------------------------------------------

def test_too_many_groups_rejected():
    mbs = make_mbs([1, 2])
    with pytest.raises(ValidationError, match="groups"):
        simulate_step(RankAssignment(((0,), (1,)), (1, 2)), mbs, cm_cfg(2, 2))


def test_missing_dims_named_per_microbatch():
    from ditsched.costmodel import space_full_schedule

    model = ModelSpec(2, 64, 4, attention_schedule=space_full_schedule(2))
    mbs = [MicroBatch(7, (0,), (64,), 64)]
    with pytest.raises(ValidationError, match="micro-batch 7"):
        simulate_run([mbs], cm_cfg(1, model=model))
    rep, _ = simulate_run([mbs], cm_cfg(1, model=model), item_dims={0: LatentDims(4, 4, 4)})
    assert rep.mfu == pytest.approx(1.0)


def test_efficiency_range():
    with pytest.raises(ValidationError):
        CostModelTime(SMALL, 0.0)
    assert Decision.KEEP_GPU < Decision.RECOMPUTE
