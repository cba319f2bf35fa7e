"""Cycle-level performance model and functional emulator for LLM decode on a
reconfigurable-systolic near-memory compute stack."""

from .array_model import (
    ArrayConfig,
    Dataflow,
    LogicalShape,
    MappingPlan,
    emulate,
    emulate_check_grid,
    logical_shapes,
    select_logical_shape,
    serpentine_map,
)
from .perf_model import (
    CostReport,
    EnergyModel,
    MacTreeConfig,
    MemorySystem,
    TilePlan,
    array_cycles,
    mac_tree_cycles,
    min_buffers,
    refill_bytes,
    stall_cycles,
    tile_gemm,
)
from .scheduler import (
    ModelSchedule,
    PartitionMode,
    PartitionPlan,
    SystemConfig,
    collective_cycles,
    fixed_mode_slowdowns,
    mac_tree_schedule,
    partition_modes,
    schedule_attention,
    schedule_model,
    schedule_operator,
    select_core_dataflow,
)
from .workload import (
    AttnKind,
    GemmOp,
    ModelConfig,
    Nonlinear,
    OperatorGraph,
    decode_operators,
    list_presets,
    load_model_config,
    resolve_model_path,
)

__version__ = "0.1.0"
