"""Command-line entry point: analyze, schedule, sweep, emulate-check.

All defaults mirror the evaluated system (24 TB/s effective DRAM bandwidth,
800 MHz, 16 PUs x 4 cores x 64x64 PEs, reconfiguration granularity 8).
Reports are CSV (header row) or JSON; JSON output carries the fully resolved
configuration for provenance, CSV rows embed the scenario columns.

Exit codes: 0 success, 1 infeasible schedule or failed check, 2 config/IO error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

from .analysis import (
    buffer_compute_sweep,
    classify_op,
    min_buffer_table,
    operator_intensity,
    report_schedule,
    ridge_point,
    roofline_presets,
    shape_demand,
    sweep_candidates,
)
from .array_model import ArrayConfig
from .perf_model import MacTreeConfig, MemorySystem, TileError
from .scheduler import (
    PartitionMode,
    SystemConfig,
    fixed_shape_system,
    mac_tree_schedule,
    schedule_model,
)
from .workload import ConfigError, decode_operators, list_presets, load_model_config, resolve_model_path

COMPARATORS = ("mac-tree", "fixed-48x48", "fixed-8x288")


def _add_system_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dram-bw", type=float, default=None, help="total DRAM bandwidth, bytes/s")
    p.add_argument("--noc-bw", type=float, default=None, help="NoC link bandwidth, bytes/s")
    p.add_argument("--freq", type=float, default=None, help="core frequency, Hz")
    p.add_argument("--weight-buf", type=int, default=None, help="per-core weight buffer, bytes")
    p.add_argument("--act-buf", type=int, default=None, help="per-core activation-side buffer, bytes")
    p.add_argument("--vector-throughput", type=int, default=None, help="elements/cycle/core")


def _add_io_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None, help="output path (default stdout)")


def build_system(args) -> SystemConfig:
    array = ArrayConfig()
    mem = MemorySystem()
    if args.freq is not None:
        if args.freq <= 0:
            raise ConfigError("--freq must be positive")
        array = dataclasses.replace(array, freq_hz=args.freq)
    mem_over = {}
    for attr, name in (("total_dram_bw", "dram_bw"), ("noc_link_bw", "noc_bw"),
                       ("weight_buf_bytes", "weight_buf"), ("act_buf_bytes", "act_buf")):
        val = getattr(args, name)
        if val is not None:
            if val <= 0:
                raise ConfigError(f"--{name.replace('_', '-')} must be positive")
            mem_over[attr] = val
    if mem_over:
        mem = dataclasses.replace(mem, **mem_over)
    vt = args.vector_throughput if args.vector_throughput is not None else 64
    if vt <= 0:
        raise ConfigError("--vector-throughput must be positive")
    return SystemConfig(array=array, mem=mem, vector_throughput=vt)


def _parse_batches(spec: str) -> list[int]:
    batches = [int(b) for b in spec.split(",") if b]
    for b in batches:
        if not 1 <= b <= 1024:
            raise ConfigError(f"batch {b} outside [1, 1024]")
    return batches


def _resolved_config(args, system: SystemConfig) -> dict:
    return {
        "model": getattr(args, "model", None),
        "seq_len": getattr(args, "seq", None),
        "array": dataclasses.asdict(system.array),
        "memory": dataclasses.asdict(system.mem),
        "vector_throughput": system.vector_throughput,
        "seed": getattr(args, "seed", None),
    }


def emit(rows: list[dict], args, config: dict) -> None:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if args.format == "json":
            json.dump({"config": config, "rows": rows}, out, indent=2, default=str)
            out.write("\n")
        else:
            if not rows:
                return
            writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    finally:
        if args.out:
            out.close()


def cmd_analyze(args) -> int:
    system = build_system(args)
    cfg = load_model_config(resolve_model_path(args.model))
    rows = []
    ours = ridge_point(system)
    specs = {"ours": ours, **roofline_presets(system.mem)}
    for batch in _parse_batches(args.batch):
        graph = decode_operators(cfg, batch, args.seq)
        for label, spec in specs.items():
            rows.append({
                "model": cfg.name, "batch": batch, "seq_len": args.seq,
                "kind": "ridge", "label": label, "m": "", "n": "", "k": "",
                "intensity_flop_per_byte": round(spec.ridge, 4),
                "bound": "",
            })
        seen = set()
        for op in graph.ops:
            key = (op.tag, op.m, op.n, op.k)
            if key in seen:
                continue
            seen.add(key)
            rows.append({
                "model": cfg.name, "batch": batch, "seq_len": args.seq,
                "kind": "operator", "label": op.tag, "m": op.m, "n": op.n, "k": op.k,
                "intensity_flop_per_byte": round(operator_intensity(op, graph.elem_bytes), 4),
                "bound": classify_op(op, ours, graph.elem_bytes),
            })
    emit(rows, args, _resolved_config(args, system))
    return 0


def cmd_schedule(args) -> int:
    system = build_system(args)
    cfg = load_model_config(resolve_model_path(args.model))
    compare = [c for c in (args.compare.split(",") if args.compare else []) if c]
    for c in compare:
        if c not in COMPARATORS:
            raise ConfigError(f"unknown comparator {c!r}; choose from {COMPARATORS}")
    force = PartitionMode(args.fixed_mode) if args.fixed_mode else None

    rows = []
    for batch in _parse_batches(args.batch):
        graph = decode_operators(cfg, batch, args.seq)
        flex = schedule_model(graph, system)
        sched = schedule_model(graph, system, force_mode=force) if force else flex
        rep = report_schedule(graph, system, flexible=flex)
        energy = sched.energy()
        row = {
            "model": cfg.name, "batch": batch, "seq_len": args.seq,
            "mode": force.value if force else "flexible",
            "total_cycles": sched.totals.total_cycles,
            "array_cycles": sched.totals.array_cycles,
            "stall_cycles": sched.totals.stall_cycles,
            "collective_cycles": sched.totals.collective_cycles,
            "vector_cycles": sched.totals.vector_cycles,
            "reconfig_cycles": sched.totals.reconfig_cycles,
            "seconds": sched.seconds,
            "utilization": round(sched.totals.utilization, 4),
            "energy_j": energy["total"],
            "slowdown_vs_flexible": round(sched.totals.total_cycles / flex.totals.total_cycles, 4),
        }
        for mode, frac in rep["fractions"].items():
            row[f"frac_{mode}"] = round(frac, 4)
        for mode, slow in rep["slowdowns"].items():
            row[f"slowdown_{mode}"] = round(slow, 4)
        for comp in compare:
            if comp == "mac-tree":
                other = mac_tree_schedule(graph, system.mem, MacTreeConfig(),
                                          system.vector_throughput,
                                          system.array.cores_per_pu).seconds
            else:
                rows_cols = comp.removeprefix("fixed-")
                r, c = (int(x) for x in rows_cols.split("x"))
                other = schedule_model(graph, fixed_shape_system(r, c, comp)).seconds
            row[f"speedup_vs_{comp}"] = round(other / flex.seconds, 4)
        rows.append(row)
    emit(rows, args, _resolved_config(args, system))
    return 0


def cmd_sweep(args) -> int:
    system = build_system(args)
    cfg = load_model_config(resolve_model_path(args.model))
    rows = []
    if args.what == "buffers":
        cols = [int(c) for c in args.cols.split(",")] if args.cols else None
        cands = sweep_candidates(cols) if cols else None
        for batch in _parse_batches(args.batch):
            graph = decode_operators(cfg, batch, args.seq)
            for r in buffer_compute_sweep(graph, cands, system):
                rows.append({"model": cfg.name, "batch": batch, "seq_len": args.seq, **r})
    else:  # shapes
        for batch in _parse_batches(args.batch):
            graph = decode_operators(cfg, batch, args.seq)
            sched = schedule_model(graph, system)
            demand = shape_demand(sched)
            total = sum(demand.values())
            for shape, cnt in sorted(demand.items()):
                rows.append({
                    "model": cfg.name, "batch": batch, "seq_len": args.seq,
                    "kind": "shape-demand", "shape": shape,
                    "count": cnt, "fraction": round(cnt / total, 4),
                    "dataflow": "", "min_weight_buf_bytes": "", "min_act_buf_bytes": "",
                })
            for r in min_buffer_table(graph, system):
                rows.append({
                    "model": cfg.name, "batch": batch, "seq_len": args.seq,
                    "kind": "min-buffers", "shape": r["shape"], "count": "", "fraction": "",
                    "dataflow": r["dataflow"],
                    "min_weight_buf_bytes": r["min_weight_buf_bytes"],
                    "min_act_buf_bytes": r["min_act_buf_bytes"],
                })
    emit(rows, args, _resolved_config(args, system))
    return 0


def cmd_emulate_check(args) -> int:
    from .array_model import emulate_check_grid

    grids = []
    for part in args.grids.split(","):
        dims, _, gran = part.partition(":")
        r, c = (int(x) for x in dims.split("x"))
        grids.append((r, c, int(gran) if gran else 2))
    res = emulate_check_grid(tuple(grids), reps=args.reps, seed=args.seed,
                             inject_fault=args.inject_fault)
    print(f"emulate-check: {res.runs - res.failures}/{res.runs} passed "
          f"({len(res.cases)} cases over {args.grids}, seed {args.seed})")
    if not res.passed:
        print(f"first counterexample: {res.first_failure}")
        return 1
    print("all passed")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nmpsim",
        description="Cycle-level model of LLM decode on reconfigurable-systolic "
        "near-memory compute",
        epilog=f"model presets: {', '.join(list_presets())}",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="roofline ridge points and operator intensities")
    pa.add_argument("--model", required=True)
    pa.add_argument("--batch", default="8")
    pa.add_argument("--seq", type=int, default=8192)
    _add_system_args(pa)
    _add_io_args(pa)
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("schedule", help="full decode schedule with histogram and slowdowns")
    ps.add_argument("--model", required=True)
    ps.add_argument("--batch", default="8", help="comma-separated batch sizes")
    ps.add_argument("--seq", type=int, default=8192)
    ps.add_argument("--compare", default="", help=f"comma list of {COMPARATORS}")
    ps.add_argument("--fixed-mode", choices=[m.value for m in PartitionMode], default=None)
    _add_system_args(ps)
    _add_io_args(ps)
    ps.set_defaults(func=cmd_schedule)

    pw = sub.add_parser("sweep", help="buffer/compute and array-shape trade-off tables")
    pw.add_argument("what", choices=("buffers", "shapes"))
    pw.add_argument("--model", required=True)
    pw.add_argument("--batch", default="8")
    pw.add_argument("--seq", type=int, default=8192)
    pw.add_argument("--cols", default=None, help="buffer sweep column counts, e.g. 128,256,512")
    _add_system_args(pw)
    _add_io_args(pw)
    pw.set_defaults(func=cmd_sweep)

    pe = sub.add_parser("emulate-check", help="emulator vs reference-matmul grid")
    pe.add_argument("--grids", default="4x4:2,8x8:2", help="rows x cols : granularity list")
    pe.add_argument("--reps", type=int, default=100)
    pe.add_argument("--seed", type=int, default=7)
    pe.add_argument("--inject-fault", action="store_true", help="test hook: corrupt one output")
    pe.set_defaults(func=cmd_emulate_check)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TileError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
