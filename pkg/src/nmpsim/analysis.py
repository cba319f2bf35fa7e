"""Roofline analysis, operator intensity, and design-space sweep tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .array_model import ArrayConfig, Dataflow, logical_shapes
from .perf_model import (
    MacTreeConfig,
    MemorySystem,
    array_cycles,
    min_buffers,
    stall_cycles,
    tile_gemm,
)
from .scheduler import ModelSchedule, SystemConfig, fixed_mode_slowdowns, schedule_model
from .workload import GemmOp, OperatorGraph


@dataclass(frozen=True)
class RooflineSpec:
    label: str
    peak_flops: float
    bandwidth: float

    @property
    def ridge(self) -> float:
        return self.peak_flops / self.bandwidth


def ridge_point(system: SystemConfig) -> RooflineSpec:
    return RooflineSpec(system.name, system.array.peak_flops, system.mem.total_dram_bw)


def roofline_presets(mem: MemorySystem = MemorySystem()) -> dict[str, RooflineSpec]:
    """Reference ridge points for prior 3D-stacked NMP substrates."""
    mac_tree = MacTreeConfig()
    return {
        # prior near-memory substrate with a compute-to-bandwidth ratio of 8 FLOP/B
        "duplex": RooflineSpec("duplex", 1.92e14, 2.4e13),
        # MAC-tree substrate on the shared 24 TB/s stack
        "stratum": RooflineSpec("stratum", mac_tree.peak_flops, mem.total_dram_bw),
    }


def operator_intensity(op: GemmOp, elem_bytes: int = 2) -> float:
    """FLOP per byte with each operand matrix counted once (no caching)."""
    traffic = elem_bytes * (op.m * op.k + op.k * op.n + op.m * op.n)
    return 2.0 * op.m * op.n * op.k / traffic


def classify_op(op: GemmOp, spec: RooflineSpec, elem_bytes: int = 2) -> str:
    return "compute-bound" if operator_intensity(op, elem_bytes) >= spec.ridge else "memory-bound"


@dataclass(frozen=True)
class SweepCandidate:
    rows: int
    cols: int
    weight_buf_bytes: int
    act_buf_bytes: int

    @property
    def label(self) -> str:
        return f"{self.rows}x{self.cols}"


# Linear area model: one PE costs the area of this many SRAM bytes.  The
# constant anchors the buffer-to-compute sweep so that the 8x512 point
# carries the default 1 MiB + 256 KiB per-core buffers.
PE_AREA_SRAM_BYTES = 500
DEFAULT_SWEEP_COLS = (128, 256, 384, 512, 640, 768)


def sweep_candidates(
    cols_list=DEFAULT_SWEEP_COLS,
    rows: int = 8,
    pe_area_bytes: int = PE_AREA_SRAM_BYTES,
    anchor: SweepCandidate | None = None,
) -> list[SweepCandidate]:
    """Equal-area (PE count vs SRAM) candidates for the reallocation sweep."""
    if anchor is None:
        anchor = SweepCandidate(8, 512, 1 << 20, 256 << 10)
    budget = anchor.rows * anchor.cols * pe_area_bytes + anchor.weight_buf_bytes + anchor.act_buf_bytes
    out = []
    for cols in cols_list:
        buf = budget - rows * cols * pe_area_bytes
        if buf <= 0:
            raise ValueError(f"shape {rows}x{cols} exceeds the area budget")
        w = int(buf * 0.8)
        out.append(SweepCandidate(rows, cols, w, buf - w))
    return out


def _single_core_cost(
    op: GemmOp,
    cfg: ArrayConfig,
    mem: MemorySystem,
    elem_bytes: int,
    bytes_per_cycle: float,
) -> tuple[Dataflow, int, int, int]:
    """Best-dataflow (df, array, stall, stream bytes) for one op on one core."""
    best = None
    shape = logical_shapes(cfg)[0]
    for df in (Dataflow.OS, Dataflow.IS):
        plan = tile_gemm(op, shape, df, mem, elem_bytes)
        arr = array_cycles(plan, op.count)
        stl = stall_cycles(plan, mem, cfg, op.count, bytes_per_cycle=bytes_per_cycle)
        cand = (arr + stl, df, arr, stl, plan.stream_bytes(op.count))
        if best is None or cand[0] < best[0]:
            best = cand
    _, df, arr, stl, bts = best
    return df, arr, stl, bts


def buffer_compute_sweep(
    graph: OperatorGraph,
    candidates: list[SweepCandidate] | None = None,
    base: SystemConfig | None = None,
) -> list[dict]:
    """Fixed-area trade-off between PE count and SRAM capacity (single core).

    Each candidate array evaluates the whole decode workload on one core at
    the per-core bandwidth share; larger arrays cut array cycles until the
    shrinking buffers and widening refill fronts let stalls take over.
    """
    if candidates is None:
        candidates = sweep_candidates()
    if base is None:
        base = SystemConfig()
    bpc = base.mem.per_core_bytes_per_cycle(base.array)
    energy_model = base.energy_model
    rows_out = []
    for cand in candidates:
        cfg = ArrayConfig(
            phys_rows=cand.rows, phys_cols=cand.cols,
            granularity=math.gcd(cand.rows, base.array.granularity),
            freq_hz=base.array.freq_hz, reconfigurable=False,
        )
        mem = replace(base.mem, weight_buf_bytes=cand.weight_buf_bytes,
                      act_buf_bytes=cand.act_buf_bytes)
        arr_total = 0
        stl_total = 0
        macs = 0
        dram = 0
        cache: dict = {}  # per-layer operator sets repeat
        for op in graph.ops:
            key = (op.m, op.n, op.k, op.count)
            if key not in cache:
                cache[key] = _single_core_cost(op, cfg, mem, graph.elem_bytes, bpc)
            _, arr, stl, bts = cache[key]
            arr_total += arr
            stl_total += stl
            macs += op.macs
            dram += bts
        energy = energy_model.energy(macs, 0, dram, 0)
        rows_out.append({
            "shape": cand.label,
            "pes": cand.rows * cand.cols,
            "weight_buf_bytes": cand.weight_buf_bytes,
            "act_buf_bytes": cand.act_buf_bytes,
            "array_cycles": arr_total,
            "stall_cycles": stl_total,
            "total_cycles": arr_total + stl_total,
            "energy_j": energy["total"],
        })
    return rows_out


def shape_demand(schedule: ModelSchedule) -> dict[str, int]:
    """Histogram of logical shapes selected across a schedule's operators."""
    hist: dict[str, int] = {}
    for entry in schedule.entries:
        key = str(entry.shape)
        hist[key] = hist.get(key, 0) + 1
    return hist


def min_buffer_table(
    graph: OperatorGraph,
    system: SystemConfig | None = None,
    dataflow: Dataflow = Dataflow.IS,
) -> list[dict]:
    """Per-shape minimum weight / activation-side buffers over the workload.

    Activation side is the output tile under IS and the input tile under OS.
    Attention head-tasks are excluded (they are head-scheduled, not shape-swept).
    """
    if system is None:
        system = SystemConfig()
    rows = []
    for shape in logical_shapes(system.array):
        w = 0
        a = 0
        for op in graph.ops:
            if op.is_attention_task:
                continue
            plan = tile_gemm(op, shape, dataflow, system.mem, graph.elem_bytes)
            req = min_buffers(plan)
            w = max(w, req["weight_buf_bytes"])
            a = max(a, req["act_buf_bytes"])
        rows.append({
            "shape": str(shape),
            "dataflow": dataflow.value,
            "min_weight_buf_bytes": w,
            "min_act_buf_bytes": a,
        })
    return rows


def histogram_entropy(hist: dict) -> float:
    """Shannon entropy (bits) of a count histogram."""
    total = sum(hist.values())
    if total == 0:
        return 0.0
    h = 0.0
    for v in hist.values():
        if v > 0:
            p = v / total
            h -= p * math.log2(p)
    return h


def report_schedule(
    graph: OperatorGraph,
    system: SystemConfig,
    flexible: ModelSchedule | None = None,
) -> dict:
    """Mode histogram plus per-fixed-mode slowdown table for one workload."""
    flex = flexible if flexible is not None else schedule_model(graph, system)
    hist = {m.value: c for m, c in flex.mode_histogram.items()}
    n = sum(hist.values())
    fractions = {k: (v / n if n else 0.0) for k, v in hist.items()}
    slowdowns = {m.value: s for m, s in fixed_mode_slowdowns(graph, system, flex).items()}
    return {
        "histogram": hist,
        "fractions": fractions,
        "entropy_bits": histogram_entropy(hist),
        "slowdowns": slowdowns,
        "total_cycles": flex.totals.total_cycles,
        "seconds": flex.seconds,
    }
