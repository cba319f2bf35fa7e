"""Physical PE fabric, serpentine logical remapping, and a data-level emulator.

A physical R x C PE grid can be reorganized into elongated logical shapes
(e.g. 64x64 -> 8x512) by slicing it into horizontal strips and chaining them
in boustrophedon order through vertical turn links at the shared edge
columns.  The emulator here pushes real operand values through that fabric
cycle by cycle, for both output-stationary (OS) and input-stationary (IS)
dataflows, and is used as the bit-exact correctness and cycle oracle that the
analytic cost model must agree with.

Timing contract for a single tile with temporal extent T on a logical R x C
shape of a grid with P physical rows:

    cycles = P (stationary preload) + T + R + C - 1 (stream + fill/drain skew)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class Dataflow(str, Enum):
    OS = "OS"  # outputs stationary: M, N spatial; K temporal
    IS = "IS"  # inputs stationary:  M, K spatial; N temporal


@dataclass(frozen=True)
class ArrayConfig:
    phys_rows: int = 64
    phys_cols: int = 64
    granularity: int = 8  # minimum logical row height
    freq_hz: float = 8.0e8
    cores_per_pu: int = 4
    num_pus: int = 16
    reconfigurable: bool = True

    def __post_init__(self):
        if self.phys_rows < 1 or self.phys_cols < 1:
            raise ValueError("array dims must be >= 1")
        if self.phys_rows % self.granularity != 0:
            raise ValueError(
                f"granularity {self.granularity} must divide phys_rows {self.phys_rows}"
            )

    @property
    def pes_per_core(self) -> int:
        return self.phys_rows * self.phys_cols

    @property
    def total_pes(self) -> int:
        return self.pes_per_core * self.cores_per_pu * self.num_pus

    @property
    def peak_macs_per_s(self) -> float:
        return self.total_pes * self.freq_hz

    @property
    def peak_flops(self) -> float:
        return 2.0 * self.peak_macs_per_s


@dataclass(frozen=True)
class LogicalShape:
    rows: int  # M_l
    cols: int  # C_l
    strips: int  # g = phys_rows / M_l

    @property
    def phys_rows(self) -> int:
        return self.rows * self.strips

    def __str__(self):
        return f"{self.rows}x{self.cols}"


def logical_shapes(cfg: ArrayConfig) -> list[LogicalShape]:
    """All legal logical shapes, narrowest (smallest row count) first.

    Logical row heights are multiples of the reconfiguration granularity that
    divide the physical row count; PE count is conserved.  Non-reconfigurable
    arrays expose only their physical shape.
    """
    if not cfg.reconfigurable:
        return [LogicalShape(cfg.phys_rows, cfg.phys_cols, 1)]
    shapes = []
    m_l = cfg.granularity
    while m_l <= cfg.phys_rows:
        if cfg.phys_rows % m_l == 0:
            g = cfg.phys_rows // m_l
            shapes.append(LogicalShape(m_l, cfg.phys_cols * g, g))
        m_l += cfg.granularity
    return shapes


def select_logical_shape(m: int, cfg: ArrayConfig) -> LogicalShape:
    """Narrowest shape whose row count covers min(m, phys_rows).

    Oversized m falls back to the physical shape and is spatially tiled by
    the cost model.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    target = min(m, cfg.phys_rows)
    for shape in logical_shapes(cfg):
        if shape.rows >= target:
            return shape
    return logical_shapes(cfg)[-1]


@dataclass(frozen=True)
class Strip:
    index: int
    row_lo: int
    row_hi: int  # exclusive
    left_to_right: bool


@dataclass(frozen=True)
class MappingPlan:
    cfg: ArrayConfig
    logical: LogicalShape
    dataflow: Dataflow
    strips: tuple[Strip, ...]
    # vertical links joining logical row i of strip s to row i of strip s+1,
    # as ((phys_row, phys_col), (phys_row, phys_col)) pairs at the shared edge
    turn_links: tuple[tuple[tuple[int, int], tuple[int, int]], ...]
    weight_ports: tuple[int, int]  # (left, right)

    def phys_of(self, i: int, j: int) -> tuple[int, int]:
        """Physical (row, col) hosting logical coordinate (i, j)."""
        s, jj = divmod(j, self.cfg.phys_cols)
        strip = self.strips[s]
        col = jj if strip.left_to_right else self.cfg.phys_cols - 1 - jj
        return strip.row_lo + i, col


def serpentine_map(cfg: ArrayConfig, shape: LogicalShape, dataflow: Dataflow) -> MappingPlan:
    """Build the serpentine strip layout and turn links for a logical shape."""
    if shape not in logical_shapes(cfg):
        raise ValueError(f"shape {shape} is not legal for this array")
    g = shape.strips
    strips = tuple(
        Strip(s, s * shape.rows, (s + 1) * shape.rows, left_to_right=(s % 2 == 0))
        for s in range(g)
    )
    links = []
    for s in range(g - 1):
        # even strips end at the right edge, odd at the left; the next strip
        # starts at the same physical column, so the link is vertical
        edge_col = cfg.phys_cols - 1 if strips[s].left_to_right else 0
        for i in range(shape.rows):
            links.append(
                ((strips[s].row_lo + i, edge_col), (strips[s + 1].row_lo + i, edge_col))
            )
    ports = (-(-g // 2), g // 2)  # ceil/floor split across left/right boundaries
    return MappingPlan(cfg, shape, dataflow, strips, tuple(links), ports)


def reference_matmul(a, b) -> np.ndarray:
    """Plain triple-loop integer matmul; the independent correctness oracle."""
    a = np.asarray(a)
    b = np.asarray(b)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            acc = 0
            for kk in range(k):
                acc += int(a[i, kk]) * int(b[kk, j])
            out[i, j] = acc
    return out


@dataclass
class EmulationResult:
    c: np.ndarray
    cycles: int


class EmulationError(RuntimeError):
    pass


def _logical_phys_index(plan: MappingPlan) -> np.ndarray:
    """R x C array of flattened physical indices for each logical coordinate."""
    R, C = plan.logical.rows, plan.logical.cols
    idx = np.empty((R, C), dtype=np.int64)
    for i in range(R):
        for j in range(C):
            r, c = plan.phys_of(i, j)
            idx[i, j] = r * plan.cfg.phys_cols + c
    return idx


def emulate(plan: MappingPlan, a, b) -> EmulationResult:
    """Run one tile through the serpentine fabric at data level.

    State lives in per-physical-PE registers; horizontal movement follows the
    serpentine path (including the vertical turn links between strips) and
    vertical movement stays within a strip.  Operands are injected at the
    logical boundaries with standard systolic skew.  Returns the exact output
    matrix and the cycle count per the timing contract.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    R, C = plan.logical.rows, plan.logical.cols
    cfg = plan.cfg
    M, K = a.shape
    Kb, N = b.shape
    if K != Kb:
        raise ValueError("inner dims disagree")
    if plan.dataflow is Dataflow.OS:
        if M > R or N > C:
            raise EmulationError(f"OS tile {M}x{N} exceeds logical {R}x{C}")
        T = K
    else:
        if M > R or K > C:
            raise EmulationError(f"IS tile M={M}, K={K} exceeds logical {R}x{C}")
        T = N

    pidx = _logical_phys_index(plan)
    n_phys = cfg.phys_rows * cfg.phys_cols
    if len(np.unique(pidx)) != pidx.size or pidx.size != n_phys:
        raise EmulationError("logical->physical map is not a bijection")

    # per-physical-PE registers, addressed through pidx
    h_val = np.zeros(n_phys, dtype=np.int64)
    h_ok = np.zeros(n_phys, dtype=bool)
    v_val = np.zeros(n_phys, dtype=np.int64)
    v_ok = np.zeros(n_phys, dtype=bool)
    acc = np.zeros(n_phys, dtype=np.int64)
    mac_cnt = np.zeros(n_phys, dtype=np.int64)

    stat_val = np.zeros(n_phys, dtype=np.int64)
    stat_ok = np.zeros(n_phys, dtype=bool)
    if plan.dataflow is Dataflow.IS:
        stat_val[pidx[:M, :K].ravel()] = a.ravel()
        stat_ok[pidx[:M, :K].ravel()] = True

    rows_l = np.arange(R)
    cols_l = np.arange(C)
    out = np.zeros((M, N), dtype=np.int64)
    out_seen = np.zeros((M, N), dtype=bool)

    # last cycle at which any boundary injection can still occur
    if plan.dataflow is Dataflow.OS:
        inject_horizon = max((M - 1) + (K - 1), (N - 1) + (K - 1))
    else:
        inject_horizon = max((M - 1) + (N - 1), (K - 1) + (N - 1))

    def inject_h(t: int) -> tuple[np.ndarray, np.ndarray]:
        # left boundary of logical column 0, one slot per logical row
        off = t - rows_l
        if plan.dataflow is Dataflow.OS:
            ok = (rows_l < M) & (off >= 0) & (off < K)
            val = a[np.minimum(rows_l, M - 1), np.clip(off, 0, K - 1)]
        else:
            ok = (rows_l < M) & (off >= 0) & (off < N)
            val = np.zeros(R, dtype=np.int64)  # partial-sum seed
        return np.where(ok, val, 0), ok

    def inject_v(t: int) -> tuple[np.ndarray, np.ndarray]:
        # top boundary of each logical column (strip-top port injection)
        off = t - cols_l
        if plan.dataflow is Dataflow.OS:
            ok = (cols_l < N) & (off >= 0) & (off < K)
            val = b[np.clip(off, 0, K - 1), np.minimum(cols_l, N - 1)]
        else:
            ok = (cols_l < K) & (off >= 0) & (off < N)
            val = b[np.minimum(cols_l, K - 1), np.clip(off, 0, N - 1)]
        return np.where(ok, val, 0), ok

    live = 0
    t = 0
    max_t = T + R + C + cfg.phys_rows + 8  # hang guard
    while t <= inject_horizon or live > 0:
        if t > max_t:
            raise EmulationError("emulation failed to drain; mapping or skew bug")
        # gather source values seen by each logical coordinate this cycle
        hv_in = np.empty((R, C), dtype=np.int64)
        hk_in = np.empty((R, C), dtype=bool)
        hv_in[:, 0], hk_in[:, 0] = inject_h(t)
        hv_in[:, 1:] = h_val[pidx[:, :-1]]
        hk_in[:, 1:] = h_ok[pidx[:, :-1]]
        vv_in = np.empty((R, C), dtype=np.int64)
        vk_in = np.empty((R, C), dtype=bool)
        vv_in[0, :], vk_in[0, :] = inject_v(t)
        vv_in[1:, :] = v_val[pidx[:-1, :]]
        vk_in[1:, :] = v_ok[pidx[:-1, :]]

        flat = pidx.ravel()
        if plan.dataflow is Dataflow.OS:
            both = hk_in & vk_in
            if np.any(hk_in != vk_in):
                # skew schedule must keep the two wavefronts aligned wherever
                # both operands exist
                mism = (hk_in != vk_in) & (rows_l[:, None] < M) & (cols_l[None, :] < N)
                if np.any(mism):
                    raise EmulationError("OS wavefronts misaligned")
            np.add.at(acc, flat[both.ravel()], (hv_in * vv_in)[both].ravel())
            np.add.at(mac_cnt, flat[both.ravel()], 1)
            h_out, hk_out = hv_in, hk_in
        else:
            s_val = stat_val[flat].reshape(R, C)
            s_ok = stat_ok[flat].reshape(R, C)
            contrib = s_ok & hk_in
            if np.any(contrib & ~vk_in):
                raise EmulationError("IS weight wavefront misaligned with partial sums")
            h_out = hv_in + np.where(contrib, s_val * vv_in, 0)
            hk_out = hk_in
            np.add.at(mac_cnt, flat[contrib.ravel()], 1)
            # partial sums exiting the last logical column drain to the output
            exiting = hk_out[:, C - 1]
            if np.any(exiting):
                n_idx = t - rows_l - (C - 1)
                for i in np.nonzero(exiting)[0]:
                    n = int(n_idx[i])
                    if not (0 <= n < N and i < M):
                        raise EmulationError("IS output exited out of schedule")
                    out[i, n] = h_out[i, C - 1]
                    out_seen[i, n] = True

        # latch moving registers; values past the last column/row drain off-edge
        h_val.fill(0)
        h_ok.fill(False)
        v_val.fill(0)
        v_ok.fill(False)
        keep_h = flat.reshape(R, C)[:, : C - 1]
        h_val[keep_h.ravel()] = h_out[:, : C - 1].ravel()
        h_ok[keep_h.ravel()] = hk_out[:, : C - 1].ravel()
        keep_v = flat.reshape(R, C)[: R - 1, :]
        v_val[keep_v.ravel()] = vv_in[: R - 1, :].ravel()
        v_ok[keep_v.ravel()] = vk_in[: R - 1, :].ravel()
        live = int(h_ok.sum() + v_ok.sum())
        t += 1

    if plan.dataflow is Dataflow.OS:
        if not np.all(mac_cnt[pidx[:M, :N].ravel()] == K):
            raise EmulationError("OS accumulation incomplete")
        out = acc[pidx[:M, :N].ravel()].reshape(M, N).copy()
    else:
        if not out_seen.all():
            raise EmulationError("IS outputs missing")
        if K > 0 and not np.all(mac_cnt[pidx[:M, :K].ravel()] == N):
            raise EmulationError("IS accumulation incomplete")

    stream = max(t, T + R + C - 2)  # full-fabric skew charged even for partial tiles
    cycles = cfg.phys_rows + stream + 1  # preload + stream + writeback tick
    return EmulationResult(c=out, cycles=cycles)


RECONFIG_CYCLES = 1  # one-cycle shape/dataflow switch


@dataclass
class EmulateCheckResult:
    runs: int = 0
    failures: int = 0
    first_failure: str | None = None
    cases: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0


def emulate_check_grid(
    grids=((4, 4, 2), (8, 8, 2)),
    reps: int = 100,
    seed: int = 7,
    inject_fault: bool = False,
    cycle_hook=None,
) -> EmulateCheckResult:
    """Random-GEMM correctness sweep over every legal shape and dataflow.

    Emulated outputs are compared element-exact against the triple-loop
    reference.  `cycle_hook(plan, M, N, K, cycles)` lets callers cross-check
    the analytic cycle model on the same grid.  `inject_fault` flips one
    output element of the first run to exercise failure reporting.
    """
    rng = np.random.default_rng(seed)
    res = EmulateCheckResult()
    for rows, cols, gran in grids:
        cfg = ArrayConfig(phys_rows=rows, phys_cols=cols, granularity=gran)
        for shape in logical_shapes(cfg):
            for df in (Dataflow.OS, Dataflow.IS):
                plan = serpentine_map(cfg, shape, df)
                for _ in range(reps):
                    M = int(rng.integers(1, shape.rows + 1))
                    if df is Dataflow.OS:
                        N = int(rng.integers(1, shape.cols + 1))
                        K = int(rng.integers(1, 2 * shape.cols + 4))
                    else:
                        K = int(rng.integers(1, shape.cols + 1))
                        N = int(rng.integers(1, 2 * shape.cols + 4))
                    a = rng.integers(-9, 10, size=(M, K))
                    b = rng.integers(-9, 10, size=(K, N))
                    got = emulate(plan, a, b)
                    want = reference_matmul(a, b)
                    if inject_fault and res.runs == 0:
                        got.c[0, 0] += 1
                    res.runs += 1
                    if not np.array_equal(got.c, want):
                        res.failures += 1
                        if res.first_failure is None:
                            bad = np.argwhere(got.c != want)[0]
                            i, j = int(bad[0]), int(bad[1])
                            res.first_failure = (
                                f"{rows}x{cols} {shape} {df.value} M={M} N={N} K={K}: "
                                f"c[{i}][{j}] = {got.c[i, j]}, expected {want[i, j]}"
                            )
                    if cycle_hook is not None:
                        cycle_hook(plan, M, N, K, got.cycles)
                    res.cases.append((str(shape), df.value, M, N, K, got.cycles))
    return res
