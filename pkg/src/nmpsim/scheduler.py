"""Multi-PU operator scheduling.

Each linear decode operator is partitioned across 16 processing units in one
of four modes: the inter-PU dataflow (IS splits K, OS splits N) crossed with
pure-spatial (16-way chain) or spatio-temporal (4 spatial x 4 temporal groups
on a 4x4 mesh) decomposition.  The M dimension is never partitioned across
PUs.  Inside a PU the four cores share the slice by splitting its N range
four ways (disjoint output columns under OS, disjoint temporal chunks under
IS), so no intra-PU reduction is needed.  Attention runs outside this space:
head-level tasks are packed by KV group and spread round-robin over PUs with
the softmax stage interleaved against the GEMV stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .array_model import (
    RECONFIG_CYCLES,
    ArrayConfig,
    Dataflow,
    LogicalShape,
    select_logical_shape,
)
from .perf_model import (
    CostReport,
    EnergyModel,
    MacTreeConfig,
    MemorySystem,
    TilePlan,
    array_cycles,
    mac_tree_cycles,
    stall_cycles,
    tile_gemm,
)
from .workload import GemmOp, Nonlinear, OperatorGraph


class PartitionMode(str, Enum):
    IS_S = "is-s"
    IS_ST = "is-st"
    OS_S = "os-s"
    OS_ST = "os-st"


# deterministic tie-break order for equal-cost modes
MODE_ORDER = (PartitionMode.IS_S, PartitionMode.OS_S, PartitionMode.IS_ST, PartitionMode.OS_ST)

MODE_DATAFLOW = {
    PartitionMode.IS_S: Dataflow.IS,
    PartitionMode.IS_ST: Dataflow.IS,
    PartitionMode.OS_S: Dataflow.OS,
    PartitionMode.OS_ST: Dataflow.OS,
}


class Topology(str, Enum):
    CHAIN_1X16 = "chain1x16"
    MESH_4X4 = "mesh4x4"


class Collective(str, Enum):
    ALL_REDUCE = "all_reduce"
    ALL_GATHER = "all_gather"


@dataclass(frozen=True)
class PartitionPlan:
    mode: PartitionMode
    topology: Topology
    spatial_dim: str  # "K" for IS modes, "N" for OS modes
    spatial_factor: int
    temporal_factor: int
    per_pu_op: GemmOp | None
    collective: Collective
    payload_bytes: int  # per instance, M*N*elem_bytes
    feasible: bool
    reason: str = ""

    @property
    def dataflow(self) -> Dataflow:
        return MODE_DATAFLOW[self.mode]


def partition_modes(op: GemmOp, num_pus: int = 16, elem_bytes: int = 2) -> list[PartitionPlan]:
    """The four multi-PU partitionings of one operator, in tie-break order.

    -S modes divide one dimension num_pus ways on the chain; -ST modes divide
    it 4 ways spatially with the other large dimension chunked into 4 time
    blocks handled by the other mesh axis.  A dimension smaller than its
    split factor marks the plan infeasible.
    """
    payload = op.m * op.n * elem_bytes
    mesh_side = 4
    mesh_ok = num_pus == mesh_side * mesh_side  # 4 spatial x 4 temporal groups

    def sub(n=None, k=None):
        return replace(op, n=n if n is not None else op.n, k=k if k is not None else op.k)

    plans = []
    for mode in MODE_ORDER:
        if mode is PartitionMode.IS_S:
            ok = op.k >= num_pus
            plan = PartitionPlan(
                mode, Topology.CHAIN_1X16, "K", num_pus, 1,
                sub(k=-(-op.k // num_pus)) if ok else None,
                Collective.ALL_REDUCE, payload, ok,
                "" if ok else f"K={op.k} < {num_pus}",
            )
        elif mode is PartitionMode.OS_S:
            ok = op.n >= num_pus
            plan = PartitionPlan(
                mode, Topology.CHAIN_1X16, "N", num_pus, 1,
                sub(n=-(-op.n // num_pus)) if ok else None,
                Collective.ALL_GATHER, payload, ok,
                "" if ok else f"N={op.n} < {num_pus}",
            )
        elif mode is PartitionMode.IS_ST:
            ok = mesh_ok and op.k >= mesh_side and op.n >= mesh_side
            plan = PartitionPlan(
                mode, Topology.MESH_4X4, "K", mesh_side, mesh_side,
                sub(k=-(-op.k // mesh_side), n=-(-op.n // mesh_side)) if ok else None,
                Collective.ALL_REDUCE, payload, ok,
                "" if ok else f"K={op.k} or N={op.n} < {mesh_side}",
            )
        else:  # OS_ST
            ok = mesh_ok and op.n >= mesh_side and op.k >= mesh_side
            plan = PartitionPlan(
                mode, Topology.MESH_4X4, "N", mesh_side, mesh_side,
                sub(n=-(-op.n // mesh_side), k=-(-op.k // mesh_side)) if ok else None,
                Collective.ALL_GATHER, payload, ok,
                "" if ok else f"N={op.n} or K={op.k} < {mesh_side}",
            )
        plans.append(plan)
    return plans


def collective_cycles(plan: PartitionPlan, mem: MemorySystem, cfg: ArrayConfig) -> tuple[int, int]:
    """(cycles, NoC bytes moved) for one instance's collective.

    Ring algorithm: all-reduce moves 2(P-1)/P of the payload per pass,
    all-gather (P-1)/P.  The chain runs one pass over all 16 PUs; the mesh
    runs a row pass and a column pass (P=4 twice) over the payload, so the
    spatio-temporal modes pay more for the same collective volume.
    """
    if plan.payload_bytes == 0:
        return 0, 0
    reduce_f = 2.0 if plan.collective is Collective.ALL_REDUCE else 1.0
    if plan.topology is Topology.CHAIN_1X16:
        p = plan.spatial_factor
        moved = reduce_f * (p - 1) / p * plan.payload_bytes
    else:
        p = 4
        moved = 2 * (reduce_f * (p - 1) / p * plan.payload_bytes)
    cycles = math.ceil(moved / mem.noc_link_bw * cfg.freq_hz)
    return cycles, int(moved)


def _core_cost(
    core_op: GemmOp,
    dataflow: Dataflow,
    system: "SystemConfig",
    count: int,
) -> tuple[TilePlan, int, int]:
    """(tile plan, array cycles, stall cycles) for count pipelined instances."""
    shape = select_logical_shape(core_op.m, system.array)
    plan = tile_gemm(core_op, shape, dataflow, system.mem, system.elem_bytes)
    arr = array_cycles(plan, count)
    stl = stall_cycles(plan, system.mem, system.array, count)
    return plan, arr, stl


@dataclass(frozen=True)
class SystemConfig:
    array: ArrayConfig = ArrayConfig()
    mem: MemorySystem = MemorySystem()
    vector_throughput: int = 64  # elements/cycle/core
    elem_bytes: int = 2
    name: str = "default"

    @property
    def energy_model(self) -> EnergyModel:
        return EnergyModel(dram_pj_per_byte=self.mem.dram_pj_per_byte)

    @property
    def total_cores(self) -> int:
        return self.array.num_pus * self.array.cores_per_pu


def default_system(**overrides) -> SystemConfig:
    return SystemConfig(**overrides) if overrides else SystemConfig()


def fixed_shape_system(rows: int, cols: int, name: str) -> SystemConfig:
    """Fixed-geometry systolic baselines; clocked at 1 GHz (no reconfiguration routing)."""
    return SystemConfig(
        array=ArrayConfig(phys_rows=rows, phys_cols=cols, granularity=math.gcd(rows, 8),
                          freq_hz=1.0e9, reconfigurable=False),
        name=name,
    )


def select_core_dataflow(
    op: GemmOp,
    cfg: ArrayConfig,
    mem: MemorySystem,
    elem_bytes: int = 2,
) -> tuple[Dataflow, LogicalShape, CostReport]:
    """Evaluate OS and IS for a single-core operator and keep the cheaper one.

    Exact cost ties resolve to OS when it has a nonlinear consumer to overlap
    or when K >= N, otherwise to IS (the large-N first-order preference).
    """
    system = SystemConfig(array=cfg, mem=mem, elem_bytes=elem_bytes)
    results = {}
    for df in (Dataflow.OS, Dataflow.IS):
        plan, arr, stl = _core_cost(op, df, system, op.count)
        rep = CostReport(
            array_cycles=arr, stall_cycles=stl, freq_hz=cfg.freq_hz, macs=op.macs,
            dram_bytes=plan.stream_bytes(op.count),
            peak_macs_per_cycle=plan.shape.rows * plan.shape.cols,
        )
        results[df] = (plan.shape, rep)
    os_total = results[Dataflow.OS][1].total_cycles
    is_total = results[Dataflow.IS][1].total_cycles
    if os_total != is_total:
        df = Dataflow.OS if os_total < is_total else Dataflow.IS
    elif op.nonlinear_follow is not Nonlinear.NONE or op.k >= op.n:
        df = Dataflow.OS
    else:
        df = Dataflow.IS
    shape, rep = results[df]
    return df, shape, rep


def overlap_credit(
    op: GemmOp,
    dataflow: Dataflow,
    tiles_total: int,
    nonlinear_cycles: int,
    linear_cycles: int,
) -> int:
    """Cycles of the nonlinear stage hidden behind the linear stage.

    Under OS each finished output tile feeds the vector stage immediately, so
    all but the last tile's share overlaps.  Under IS outputs only complete
    after the temporal accumulation, so intra-operator credit is zero; across
    independent expert instances (count > 1) the same tile argument applies
    at instance granularity.
    """
    if op.nonlinear_follow is Nonlinear.NONE or nonlinear_cycles == 0:
        return 0
    if dataflow is Dataflow.OS:
        units = max(1, tiles_total * op.count)
    elif op.count > 1:
        units = op.count  # independent branches (MoE experts)
    else:
        return 0
    credit = nonlinear_cycles * (units - 1) // units
    return min(credit, nonlinear_cycles, linear_cycles)


@dataclass(frozen=True)
class ScheduledOp:
    op: GemmOp
    mode: PartitionMode | None  # None for attention / single-PU fallback
    dataflow: Dataflow
    shape: LogicalShape
    report: CostReport
    credit: int = 0
    flags: tuple[str, ...] = ()


def _vector_stage(op: GemmOp, system: SystemConfig) -> tuple[int, int]:
    """(cycles on one PU's vector lanes, bytes through the output buffer)."""
    if op.nonlinear_follow is Nonlinear.NONE:
        return 0, 0
    out_elems = op.m * op.n * op.count
    per_pu = -(-out_elems // system.array.num_pus)
    cycles = -(-per_pu // (system.vector_throughput * system.array.cores_per_pu))
    return cycles, out_elems * system.elem_bytes


def schedule_operator(
    op: GemmOp,
    system: SystemConfig,
    force_mode: PartitionMode | None = None,
) -> ScheduledOp:
    """Pick the cheapest feasible partitioning for a non-attention operator."""
    cfg, mem = system.array, system.mem
    cores = cfg.cores_per_pu
    plans = [p for p in partition_modes(op, cfg.num_pus, system.elem_bytes) if p.feasible]
    flags: tuple[str, ...] = ()
    if force_mode is not None:
        forced = [p for p in plans if p.mode is force_mode]
        if forced:
            plans = forced
        else:
            flags = (f"forced-{force_mode.value}-infeasible",)

    if not plans:
        # degenerate tiny operator: run on a single PU, cores splitting N
        core_op = replace(op, n=max(1, -(-op.n // cores)), count=1)
        df, shape, _ = select_core_dataflow(replace(core_op, count=op.count), cfg, mem,
                                            system.elem_bytes)
        plan, arr, stl = _core_cost(core_op, df, system, op.count)
        out_elems = op.m * op.n * op.count  # nonlinear stage stays on the one PU
        vec = -(-out_elems // (system.vector_throughput * cores)) if (
            op.nonlinear_follow is not Nonlinear.NONE) else 0
        vec_bytes = out_elems * system.elem_bytes if vec else 0
        credit = overlap_credit(op, df, plan.tiles_total, vec, arr)
        rep = CostReport(
            array_cycles=arr, stall_cycles=stl, vector_cycles=vec - credit,
            freq_hz=cfg.freq_hz, macs=op.macs,
            dram_bytes=plan.stream_bytes(op.count) * cores,
            vector_bytes=vec_bytes, peak_macs_per_cycle=cfg.total_pes,
        )
        return ScheduledOp(op, None, df, plan.shape, rep, credit,
                           flags + ("single-pu-fallback",))

    best: tuple[int, int] | None = None  # (total, mode order index)
    best_entry = None
    for plan in plans:
        per_pu = plan.per_pu_op
        core_op = replace(per_pu, n=max(1, -(-per_pu.n // cores)), count=1)
        tp, arr, stl = _core_cost(core_op, plan.dataflow, system, op.count)
        col_c, col_bytes = collective_cycles(plan, mem, cfg)
        col_c *= op.count
        col_bytes *= op.count
        vec, vec_bytes = _vector_stage(op, system)
        credit = overlap_credit(op, plan.dataflow, tp.tiles_total, vec, arr)
        rep = CostReport(
            array_cycles=arr, stall_cycles=stl, collective_cycles=col_c,
            vector_cycles=vec - credit, freq_hz=cfg.freq_hz, macs=op.macs,
            dram_bytes=tp.stream_bytes(op.count) * cores * cfg.num_pus,
            noc_bytes=col_bytes, vector_bytes=vec_bytes,
            peak_macs_per_cycle=cfg.total_pes,
        )
        key = (rep.total_cycles, MODE_ORDER.index(plan.mode))
        if best is None or key < best:
            best = key
            best_entry = ScheduledOp(op, plan.mode, plan.dataflow, tp.shape, rep, credit, flags)
    return best_entry


def schedule_attention(
    system: SystemConfig,
    qk: GemmOp,
    av: GemmOp,
    q_per_group: int,
) -> ScheduledOp:
    """Head-level attention scheduling.

    Query heads sharing a KV head are packed into the M dimension of one
    GEMV pair (the cached K/V stream is read once per resident group), groups
    spread round-robin over PUs, and the softmax stage of earlier heads is
    interleaved with the GEMV stream of later ones: the PU finishes in
    max(linear, vector) plus one pipeline fill.
    """
    cfg, mem = system.array, system.mem
    assert qk.count == av.count
    gq = max(1, q_per_group)
    groups, rem = divmod(qk.count, gq)
    if rem:
        gq, groups = 1, qk.count
    packed_qk = replace(qk, m=gq, count=1)
    packed_av = replace(av, m=gq, count=1)

    groups_per_core = -(-groups // system.total_cores)
    df_qk, _, _ = select_core_dataflow(packed_qk, cfg, mem, system.elem_bytes)
    df_av, _, _ = select_core_dataflow(packed_av, cfg, mem, system.elem_bytes)
    plan_qk, arr_qk, _ = _core_cost(packed_qk, df_qk, system, groups_per_core)
    plan_av, arr_av, _ = _core_cost(packed_av, df_av, system, groups_per_core)
    overhead = (arr_qk - groups_per_core * plan_qk.busy_cycles) + (
        arr_av - groups_per_core * plan_av.busy_cycles
    )
    linear = groups_per_core * (plan_qk.busy_cycles + plan_av.busy_cycles) + overhead

    vt = system.vector_throughput
    softmax_per_group = -(-gq * qk.n // vt)  # logits per group through one core's lanes
    vector = groups_per_core * softmax_per_group
    fill = plan_qk.busy_cycles + plan_qk.shape.rows + plan_qk.shape.cols - 1

    e = system.elem_bytes
    kv_bytes_group = (qk.k + av.n) * qk.n * e  # K cache + V cache at this seq length
    io_bytes_group = gq * (qk.k + av.n) * e  # query vectors in, outputs back
    bytes_core = groups_per_core * (kv_bytes_group + io_bytes_group)
    bpc = mem.per_core_bytes_per_cycle(cfg)
    busy = max(linear, vector)
    stall = max(0, math.ceil(bytes_core / bpc) - busy)

    rep = CostReport(
        array_cycles=linear + fill,
        vector_cycles=max(0, vector - linear),
        stall_cycles=stall,
        freq_hz=cfg.freq_hz,
        macs=qk.macs + av.macs,
        dram_bytes=groups * (kv_bytes_group + io_bytes_group),
        vector_bytes=qk.count * qk.n * e,
        peak_macs_per_cycle=cfg.total_pes,
    )
    flags = () if gq == q_per_group else ("ungrouped-heads",)
    return ScheduledOp(qk, None, df_qk, plan_qk.shape, rep, 0,
                       flags + (f"tasks={qk.count}", f"groups={groups}"))


@dataclass
class ModelSchedule:
    entries: list[ScheduledOp]
    totals: CostReport
    mode_histogram: dict[PartitionMode, int]
    system: SystemConfig
    force_mode: PartitionMode | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def seconds(self) -> float:
        return self.totals.seconds

    def energy(self) -> dict:
        return self.system.energy_model.report_energy(self.totals)


def schedule_model(
    graph: OperatorGraph,
    system: SystemConfig,
    force_mode: PartitionMode | None = None,
) -> ModelSchedule:
    """Dependency-ordered accumulation of per-operator best plans.

    Per-layer operator sets repeat, so scheduling decisions are memoized on
    the operator's shape signature.  Attention QK/AV pairs are consumed
    together by the head-level scheduler. A one-cycle reconfiguration charge
    applies whenever the chosen (shape, dataflow) changes between consecutive
    operators.
    """
    if system.elem_bytes != graph.elem_bytes:
        system = replace(system, elem_bytes=graph.elem_bytes)
    totals = CostReport(freq_hz=system.array.freq_hz,
                        peak_macs_per_cycle=system.array.total_pes)
    hist = {mode: 0 for mode in MODE_ORDER}
    entries: list[ScheduledOp] = []
    flags: list[str] = []
    cache: dict = {}
    last_config = None

    ops = list(graph.ops)
    i = 0
    while i < len(ops):
        op = ops[i]
        if op.tag == "attn_qk" and i + 1 < len(ops) and ops[i + 1].tag == "attn_av":
            av = ops[i + 1]
            key = ("attn", op.m, op.n, op.k, av.n, av.k, op.count)
            if key not in cache:
                cache[key] = schedule_attention(system, op, av, graph.q_per_group)
            entry = cache[key]
            i += 2
        else:
            key = (op.tag, op.m, op.n, op.k, op.count, op.nonlinear_follow, force_mode)
            if key not in cache:
                cache[key] = schedule_operator(op, system, force_mode)
            entry = cache[key]
            if entry.mode is not None:
                hist[entry.mode] += 1
            i += 1
        entries.append(entry)
        totals.add(entry.report)
        config = (str(entry.shape), entry.dataflow)
        if last_config is not None and config != last_config:
            totals.reconfig_cycles += RECONFIG_CYCLES
        last_config = config
        for f in entry.flags:
            if f.endswith("fallback") or f.endswith("infeasible"):
                line = f"{entry.op.tag}: {f}"
                if line not in flags:
                    flags.append(line)
    return ModelSchedule(entries, totals, hist, system, force_mode, flags)


def fixed_mode_slowdowns(
    graph: OperatorGraph,
    system: SystemConfig,
    flexible: ModelSchedule | None = None,
) -> dict[PartitionMode, float]:
    flex = flexible if flexible is not None else schedule_model(graph, system)
    out = {}
    for mode in MODE_ORDER:
        fixed = schedule_model(graph, system, force_mode=mode)
        out[mode] = fixed.totals.total_cycles / flex.totals.total_cycles
    return out


def mac_tree_schedule(
    graph: OperatorGraph,
    mem: MemorySystem,
    mt: MacTreeConfig = MacTreeConfig(),
    vector_throughput: int = 64,
    cores_per_pu: int = 4,
) -> CostReport:
    """Whole-graph cost on the MAC-tree baseline system.

    Linear operators split N across PUs; attention packs KV groups like the
    flexible scheduler but pays the block-granularity padding of the fixed
    16x16x16 unit.  Nonlinear stages run on the same vector model,
    serialized after their producer.
    """
    totals = CostReport(freq_hz=mt.freq_hz, peak_macs_per_cycle=mt.macs_per_cycle * mt.num_pus)
    e = graph.elem_bytes
    gq = graph.q_per_group
    ops = list(graph.ops)
    i = 0
    cache: dict = {}
    while i < len(ops):
        op = ops[i]
        if op.tag == "attn_qk" and i + 1 < len(ops) and ops[i + 1].tag == "attn_av":
            av = ops[i + 1]
            key = ("attn", op.n, op.k, av.n, op.count)
            if key not in cache:
                groups = max(1, op.count // gq)
                packed_qk = replace(op, m=gq, count=groups)
                packed_av = replace(av, m=gq, count=groups)
                rep = CostReport(freq_hz=mt.freq_hz)
                for packed in (packed_qk, packed_av):
                    groups_pu = -(-groups // mt.num_pus)
                    per_group = mac_tree_cycles(replace(packed, count=1), mem, mt,
                                                num_pus=1, elem_bytes=e)
                    kv_bytes = groups_pu * (packed.k * packed.n) * e
                    compute = per_group.array_cycles * groups_pu
                    bpc = mem.total_dram_bw / mt.num_pus / mt.freq_hz
                    stall = max(0, math.ceil(kv_bytes / bpc) - compute)
                    rep.add(CostReport(
                        array_cycles=compute, stall_cycles=stall, freq_hz=mt.freq_hz,
                        macs=packed.macs, dram_bytes=kv_bytes * mt.num_pus,
                    ))
                softmax = -(-op.count * op.n // (vector_throughput * cores_per_pu * mt.num_pus))
                rep.vector_cycles += softmax
                rep.vector_bytes += op.count * op.n * e
                cache[key] = rep
            totals.add(cache[key])
            i += 2
            continue
        key = (op.tag, op.m, op.n, op.k, op.count)
        if key not in cache:
            rep = mac_tree_cycles(op, mem, mt, elem_bytes=e)
            if op.nonlinear_follow is not Nonlinear.NONE:
                out_elems = op.m * op.n * op.count
                rep.vector_cycles += -(-out_elems // (vector_throughput * cores_per_pu * mt.num_pus))
                rep.vector_bytes += out_elems * e
            cache[key] = rep
        totals.add(cache[key])
        i += 1
    return totals
