"""Analytic per-core cost model: tiling, array cycles, refill stalls, buffers,
energy calibration, and the MAC-tree comparator.

The single-tile cycle count must agree exactly with the data-level emulator
(`array_model.emulate`); multi-tile runs pipeline the per-tile fill/drain so
the skew and stationary-preload terms are charged once per operator run.
Memory-side stalls follow a double-buffered window model: each tile's refill
is hidden behind the previous tile's compute window, with the remainder
exposed, and the first tile paying its refill in full.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .array_model import ArrayConfig, Dataflow, LogicalShape
from .workload import GemmOp


class TileError(ValueError):
    """Tile volume exceeds buffer capacity even after maximal phase splitting."""


@dataclass(frozen=True)
class MemorySystem:
    total_dram_bw: float = 24.0e12  # bytes/s, effective stacked-DRAM bandwidth
    noc_link_bw: float = 6.4e10  # bytes/s per inter-PU link
    weight_buf_bytes: int = 1 << 20  # per-core
    act_buf_bytes: int = 256 << 10  # per-core, input side under OS / output side under IS
    double_buffered: bool = True
    writeback_shares_bw: bool = True  # outputs contend with refills on the same channel
    dram_pj_per_byte: float = 4.0

    def per_pu_bandwidth(self, cfg: ArrayConfig) -> float:
        return self.total_dram_bw / cfg.num_pus

    def per_core_bandwidth(self, cfg: ArrayConfig) -> float:
        return self.per_pu_bandwidth(cfg) / cfg.cores_per_pu

    def per_core_bytes_per_cycle(self, cfg: ArrayConfig) -> float:
        return self.per_core_bandwidth(cfg) / cfg.freq_hz


def _split(total: int, chunk: int) -> tuple[int, ...]:
    """Split an extent into full chunks plus one partial edge chunk."""
    full, rem = divmod(total, chunk)
    return (chunk,) * full + ((rem,) if rem else ())


class Tile(NamedTuple):
    weight_in: int  # streamed weight bytes
    act_in: int  # streamed/stationary input bytes (OS: per tile; IS: first phase)
    out: int  # output writeback bytes at tile completion
    t: int  # temporal depth (compute window)


@dataclass(frozen=True)
class TilePlan:
    """How one GEMM maps onto a logical shape under a dataflow.

    Spatial extents cover M over the logical rows and N (OS) or K (IS) over
    the logical columns; the remaining dimension unfolds temporally, split
    into phases of at most the buffer-derived depth.
    """

    shape: LogicalShape
    dataflow: Dataflow
    m: int
    n: int
    k: int
    elem_bytes: int
    m_extents: tuple[int, ...]
    s_extents: tuple[int, ...]  # along logical columns: N under OS, K under IS
    t_extents: tuple[int, ...]  # temporal phase depths: K under OS, N under IS

    @property
    def spatial_tiles(self) -> tuple[int, int]:
        return (len(self.m_extents), len(self.s_extents))

    @property
    def phases(self) -> int:
        return len(self.t_extents)

    @property
    def per_tile_T(self) -> int:
        return self.t_extents[0]

    @property
    def tiles_total(self) -> int:
        return len(self.m_extents) * len(self.s_extents) * len(self.t_extents)

    @property
    def busy_cycles(self) -> int:
        """Temporal occupancy summed over all tiles (no skew/preload)."""
        return len(self.m_extents) * len(self.s_extents) * sum(self.t_extents)

    def tiles(self) -> Iterator[Tile]:
        """Tiles in execution order: spatial-outer, temporal phases inner."""
        e = self.elem_bytes
        last_phase = len(self.t_extents) - 1
        for mt in self.m_extents:
            for st in self.s_extents:
                for p, tt in enumerate(self.t_extents):
                    if self.dataflow is Dataflow.OS:
                        yield Tile(
                            weight_in=st * tt * e,
                            act_in=mt * tt * e,
                            out=mt * st * e if p == last_phase else 0,
                            t=tt,
                        )
                    else:
                        yield Tile(
                            weight_in=st * tt * e,
                            act_in=mt * st * e if p == 0 else 0,
                            out=mt * tt * e,
                            t=tt,
                        )

    def stream_bytes(self, count: int = 1) -> int:
        return count * sum(t.weight_in + t.act_in + t.out for t in self.tiles())


def tile_gemm(
    op: GemmOp,
    shape: LogicalShape,
    dataflow: Dataflow,
    mem: MemorySystem | None = None,
    elem_bytes: int | None = None,
) -> TilePlan:
    """Tile op onto a logical shape; phase depth capped by buffer halves."""
    e = elem_bytes if elem_bytes is not None else 2
    m_ext = _split(op.m, shape.rows)
    if dataflow is Dataflow.OS:
        s_total, t_total = op.n, op.k
    else:
        s_total, t_total = op.k, op.n
    s_ext = _split(s_total, shape.cols)

    t_max = t_total
    if mem is not None:
        s_max, m_max = max(s_ext), max(m_ext)
        cap_w = mem.weight_buf_bytes // (2 * s_max * e)
        cap_a = mem.act_buf_bytes // (2 * m_max * e)
        if min(cap_w, cap_a) < 1:
            raise TileError(
                f"unit-depth tile ({s_max}x1 weights, {m_max}x1 act) exceeds "
                "half-buffer capacity"
            )
        t_max = min(t_total, cap_w, cap_a)
    t_ext = _split(t_total, t_max)
    return TilePlan(
        shape=shape, dataflow=dataflow, m=op.m, n=op.n, k=op.k, elem_bytes=e,
        m_extents=m_ext, s_extents=s_ext, t_extents=t_ext,
    )


def array_cycles(plan: TilePlan, count: int = 1) -> int:
    """Pipelined array occupancy for `count` back-to-back runs of a plan.

    Consecutive tiles (and runs of identical instances) overlap their
    weight-load/feed/drain sub-stages, so the fill/drain skew and the
    stationary preload are charged once per run sequence.
    """
    skew = plan.shape.rows + plan.shape.cols - 1
    preload = plan.shape.phys_rows
    return count * plan.busy_cycles + skew + preload


def refill_bytes(plan: TilePlan) -> int:
    """Streamed operand bytes of one full interior tile (reporting helper)."""
    first = next(plan.tiles())
    if plan.dataflow is Dataflow.OS:
        return first.weight_in + first.act_in
    return first.weight_in


def stall_cycles(
    plan: TilePlan,
    mem: MemorySystem,
    cfg: ArrayConfig,
    count: int = 1,
    bytes_per_cycle: float | None = None,
) -> int:
    """Exposed refill cycles under the double-buffered window model.

    Tile 0 pays its full refill; tile i's inbound traffic hides behind tile
    i-1's compute window, the excess stalling the array.  When writeback
    shares the channel, IS output chunks (which drain continuously as partial
    sums exit) contend inside their own tile's window, while OS outputs burst
    at tile completion and land two windows later.  A tile whose chunks
    exceed the spare buffer halves cannot be prefetched and is serialized.
    """
    bpc = bytes_per_cycle if bytes_per_cycle is not None else mem.per_core_bytes_per_cycle(cfg)
    half_w = mem.weight_buf_bytes / 2
    half_a = mem.act_buf_bytes / 2

    def act_chunk(tile: Tile) -> int:
        return tile.act_in if plan.dataflow is Dataflow.OS else tile.out

    def one_rep(prev_t, out_back1, out_back2):
        stall = 0
        for tile in plan.tiles():
            inbound = tile.weight_in + tile.act_in
            if not mem.double_buffered:
                stall += math.ceil((inbound + tile.out) / bpc)
                continue
            demand = inbound
            if mem.writeback_shares_bw:
                if plan.dataflow is Dataflow.IS:
                    demand += tile.out
                else:
                    demand += out_back2
            if prev_t is None:
                stall += math.ceil(demand / bpc)
            elif tile.weight_in > half_w or act_chunk(tile) > half_a:
                stall += math.ceil(demand / bpc)  # not prefetchable: serialized
            else:
                stall += max(0, math.ceil(demand / bpc) - prev_t)
            prev_t = tile.t
            out_back2, out_back1 = out_back1, tile.out
        return stall, (prev_t, out_back1, out_back2)

    first, state = one_rep(None, 0, 0)
    if count == 1:
        return first
    # the carried state (previous window, pending writebacks) is identical
    # after every full repetition, so later instances all cost the same
    steady, _ = one_rep(*state)
    return first + (count - 1) * steady


def min_buffers(plan: TilePlan) -> dict:
    """Minimum double-buffered capacities sustaining stall-free refill.

    Weight side holds the streamed-weight tile twice; activation side holds
    the input tile (OS) or the output tile (IS) twice.
    """
    w = max(t.weight_in for t in plan.tiles())
    if plan.dataflow is Dataflow.OS:
        a = max(t.act_in for t in plan.tiles())
    else:
        a = max(t.out for t in plan.tiles())
    return {"weight_buf_bytes": 2 * w, "act_buf_bytes": 2 * a}


@dataclass
class CostReport:
    array_cycles: int = 0
    stall_cycles: int = 0
    collective_cycles: int = 0
    reconfig_cycles: int = 0
    vector_cycles: int = 0  # nonlinear stage not hidden behind the array
    freq_hz: float = 8.0e8
    macs: int = 0
    dram_bytes: int = 0
    noc_bytes: int = 0
    vector_bytes: int = 0
    peak_macs_per_cycle: float = 0.0  # for utilization

    @property
    def total_cycles(self) -> int:
        return (
            self.array_cycles + self.stall_cycles + self.collective_cycles
            + self.reconfig_cycles + self.vector_cycles
        )

    @property
    def seconds(self) -> float:
        return self.total_cycles / self.freq_hz

    @property
    def utilization(self) -> float:
        if self.total_cycles == 0 or self.peak_macs_per_cycle == 0:
            return 0.0
        return min(1.0, self.macs / (self.total_cycles * self.peak_macs_per_cycle))

    def add(self, other: "CostReport") -> None:
        self.array_cycles += other.array_cycles
        self.stall_cycles += other.stall_cycles
        self.collective_cycles += other.collective_cycles
        self.reconfig_cycles += other.reconfig_cycles
        self.vector_cycles += other.vector_cycles
        self.macs += other.macs
        self.dram_bytes += other.dram_bytes
        self.noc_bytes += other.noc_bytes
        self.vector_bytes += other.vector_bytes


# Peak-power split of the evaluated logic die, watts: matrix / vector /
# PE-control / NoC.  Component rates below are calibrated so full-array
# activity at these reference rates dissipates exactly these values.
MATRIX_W = 38.5
VECTOR_W = 14.2
CONTROL_W = 4.4
NOC_W = 4.8


@dataclass(frozen=True)
class EnergyModel:
    matrix_w: float = MATRIX_W
    vector_w: float = VECTOR_W
    control_w: float = CONTROL_W
    noc_w: float = NOC_W
    dram_pj_per_byte: float = 4.0
    ref_macs_per_s: float = 16 * 4 * 64 * 64 * 0.8e9
    ref_vector_bytes_per_s: float = 16 * 4 * 64 * 0.8e9 * 2
    ref_noc_bytes_per_s: float = 16 * 6.4e10

    @property
    def per_mac_j(self) -> float:
        return self.matrix_w / self.ref_macs_per_s

    @property
    def per_vector_byte_j(self) -> float:
        return self.vector_w / self.ref_vector_bytes_per_s

    @property
    def per_control_mac_j(self) -> float:
        return self.control_w / self.ref_macs_per_s

    @property
    def per_noc_byte_j(self) -> float:
        return self.noc_w / self.ref_noc_bytes_per_s

    @property
    def per_dram_byte_j(self) -> float:
        return self.dram_pj_per_byte * 1e-12

    def energy(self, macs: float, sram_bytes: float, dram_bytes: float,
               noc_bytes: float) -> dict:
        """Joules per component for the given activity counts."""
        parts = {
            "matrix": macs * self.per_mac_j,
            "vector": sram_bytes * self.per_vector_byte_j,
            "control": macs * self.per_control_mac_j,
            "noc": noc_bytes * self.per_noc_byte_j,
            "dram": dram_bytes * self.per_dram_byte_j,
        }
        parts["total"] = sum(parts.values())
        return parts

    def report_energy(self, report: CostReport) -> dict:
        return self.energy(report.macs, report.vector_bytes, report.dram_bytes,
                           report.noc_bytes)


@dataclass(frozen=True)
class MacTreeConfig:
    """16x16x16 MAC-tree compute unit, one per PU, used as the baseline substrate."""

    block: tuple[int, int, int] = (16, 16, 16)
    freq_hz: float = 1.0e9
    num_pus: int = 16
    util_nonaligned: float = 0.85  # reduction dims not aligned to the block

    @property
    def macs_per_cycle(self) -> int:
        bm, bn, bk = self.block
        return bm * bn * bk

    @property
    def peak_flops(self) -> float:
        return 2.0 * self.macs_per_cycle * self.num_pus * self.freq_hz


def mac_tree_cycles(
    op: GemmOp,
    mem: MemorySystem,
    mt: MacTreeConfig = MacTreeConfig(),
    num_pus: int | None = None,
    elem_bytes: int = 2,
) -> CostReport:
    """Cost of one operator on the MAC-tree system (N split across PUs).

    Compute charges one block per cycle with each dimension padded to the
    block granularity; a scalar utilization factor additionally derates
    non-aligned reduction dims.  The same double-buffered window idea applies
    at operator granularity with the tree's own operand volumes.
    """
    pus = num_pus if num_pus is not None else mt.num_pus
    bm, bn, bk = mt.block
    n_pu = -(-op.n // pus)
    blocks = (-(-op.m // bm)) * (-(-op.k // bk)) * (-(-n_pu // bn))
    util = mt.util_nonaligned if op.k % bk else 1.0
    compute = math.ceil(blocks / util) * op.count

    e = elem_bytes
    bytes_pu = op.count * (op.m * op.k + op.k * n_pu + op.m * n_pu) * e
    bpc = (mem.total_dram_bw / pus) / mt.freq_hz
    stall = max(0, math.ceil(bytes_pu / bpc) - compute)

    collective = 0
    noc_bytes = 0
    if pus > 1:
        payload = op.m * op.n * e * op.count  # all-gather of the disjoint N slices
        moved = (pus - 1) / pus * payload
        collective = math.ceil(moved / mem.noc_link_bw * mt.freq_hz)
        noc_bytes = int(moved)

    return CostReport(
        array_cycles=compute,
        stall_cycles=stall,
        collective_cycles=collective,
        freq_hz=mt.freq_hz,
        macs=op.macs,
        dram_bytes=bytes_pu * pus,
        noc_bytes=noc_bytes,
        peak_macs_per_cycle=mt.macs_per_cycle * pus,
    )
