"""Command-line entry point.

Exit status: 0 on success, 1 on validation errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .balance import fit_lut, read_samples, write_lut
from .config import RunConfig, load_config
from .errors import ValidationError
from .pipeline import (
    STRATEGIES,
    StageError,
    item_dims,
    mlac_plan,
    pack_batches,
    run_compare,
    run_plan,
    sim_config,
    workload,
)
from .sim import default_estimator, write_report, write_trace
from .balance import balance_lpt
from .workload import write_workload

log = logging.getLogger("ditsched")


def _table(rows: list[dict], fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


def _emit(rows: list[dict], fmt: str, out_dir: Path | None, name: str) -> None:
    text = _table(rows, fmt)
    if out_dir is None:
        sys.stdout.write(text)
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.{fmt}").write_text(text)


def _load(args) -> RunConfig:
    if not args.config:
        raise ValidationError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args, cfg: RunConfig | None = None) -> Path | None:
    if args.out:
        return Path(args.out)
    return cfg.out_dir if cfg else None


def cmd_lut_fit(args) -> int:
    samples = read_samples(args.samples)
    lut = fit_lut(samples)
    raw: dict[int, list[float]] = {}
    for s, r in samples:
        raw.setdefault(s, []).append(r)
    adjust = max(abs(r - sum(raw[s]) / len(raw[s])) for s, r in lut.breakpoints)
    if args.out is None:
        raise ValidationError("lut fit needs --out <path>")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_lut(lut, out)
    print(f"breakpoints: {len(lut.breakpoints)}")
    print(f"max pooling adjustment: {adjust:.6f} us")
    return 0


def cmd_workload_gen(args) -> int:
    cfg = _load(args)
    items = workload(cfg)
    out = _out_dir(args, cfg)
    if out is None:
        for it in items:
            print(json.dumps(it.to_record()))
    else:
        out.mkdir(parents=True, exist_ok=True)
        write_workload(items, out / "workload.jsonl")
        print(f"wrote {len(items)} items to {out / 'workload.jsonl'}")
    return 0


def cmd_pack(args) -> int:
    cfg = _load(args)
    batches = pack_batches(workload(cfg), cfg)
    rows = [
        {"batch": k, "microbatch": mb.id, "items": " ".join(map(str, mb.items)),
         "total_tokens": mb.total_tokens, "capacity": mb.capacity}
        for k, b in enumerate(batches) for mb in b
    ]
    _emit(rows, args.format, _out_dir(args, cfg), "microbatches")
    return 0


def cmd_balance(args) -> int:
    cfg = _load(args)
    items = workload(cfg)
    batches = pack_batches(items, cfg)
    scfg = sim_config(cfg)
    est = default_estimator(scfg, item_dims(items, cfg))
    rows = []
    for k, b in enumerate(batches):
        a = balance_lpt(b, cfg.cluster.dp_groups, est)
        for g, (ids, load) in enumerate(zip(a.ranks, a.loads)):
            rows.append({"batch": k, "group": g, "microbatches": " ".join(map(str, ids)),
                         "est_runtime_us": round(load)})
    _emit(rows, args.format, _out_dir(args, cfg), "assignment")
    return 0


def cmd_mlac_plan(args) -> int:
    cfg = _load(args)
    if cfg.mlac is None:
        raise ValidationError("config has no 'mlac' section")
    plan = mlac_plan(cfg)
    graph = cfg.load_graph()
    rows = [{"node": n.id, "bytes": n.activation_bytes, "decision": d.name.lower()}
            for n, d in zip(graph.nodes, plan.decisions)]
    _emit(rows, args.format, _out_dir(args, cfg), "mlac_plan")
    log.info("gpu_resident_bytes=%d est_overhead_us=%d", plan.gpu_resident_bytes, round(plan.est_overhead))
    return 0


def cmd_plan(args) -> int:
    cfg = _load(args)
    res = run_plan(cfg)
    out = _out_dir(args, cfg) or Path("out")
    out.mkdir(parents=True, exist_ok=True)
    write_report(res.report, out / "report.json")
    if args.trace:
        write_trace(res.events, out / "trace.json")
    d = res.report.to_dict()
    print(f"makespan_us={d['makespan_us']} imbalance={d['imbalance']:.6f} mfu={d['mfu']}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    reports = run_compare(cfg)
    rows = [
        {"strategy": name, "makespan_us": round(reports[name].makespan),
         "imbalance": f"{reports[name].imbalance:.6f}"}
        for name in STRATEGIES
    ]
    _emit(rows, args.format, _out_dir(args, cfg), "comparison")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (file for 'lut fit')")
    common.add_argument("--trace", action="store_true", help="emit a Chrome trace")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="tabular output format")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ditsched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    lut = sub.add_parser("lut", help="runtime lookup tables").add_subparsers(dest="action", required=True)
    fit = lut.add_parser("fit", parents=[common], help="fit a monotone LUT from runtime samples")
    fit.add_argument("samples")
    fit.set_defaults(func=cmd_lut_fit)

    wl = sub.add_parser("workload", help="synthetic workloads").add_subparsers(dest="action", required=True)
    wl.add_parser("gen", parents=[common]).set_defaults(func=cmd_workload_gen)

    sub.add_parser("pack", parents=[common], help="pack items into micro-batches").set_defaults(func=cmd_pack)
    sub.add_parser("balance", parents=[common], help="assign micro-batches to ranks").set_defaults(func=cmd_balance)

    ml = sub.add_parser("mlac", help="activation checkpointing").add_subparsers(dest="action", required=True)
    ml.add_parser("plan", parents=[common]).set_defaults(func=cmd_mlac_plan)

    sub.add_parser("simulate", aliases=["plan"], parents=[common],
                   help="run the whole chain and simulate").set_defaults(func=cmd_plan)
    sub.add_parser("compare", parents=[common], help="compare balancing strategies").set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except StageError as e:
        print(f"error in stage '{e.stage}': {e.cause}", file=sys.stderr)
        return 1 if isinstance(e.cause, ValidationError) else 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
