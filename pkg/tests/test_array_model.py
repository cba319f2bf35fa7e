import numpy as np
import pytest

from nmpsim.array_model import (
    ArrayConfig,
    Dataflow,
    EmulationError,
    LogicalShape,
    emulate,
    emulate_check_grid,
    logical_shapes,
    reference_matmul,
    select_logical_shape,
    serpentine_map,
)


def test_logical_shapes_64x64():
    cfg = ArrayConfig()
    shapes = [(s.rows, s.cols) for s in logical_shapes(cfg)]
    assert shapes == [(8, 512), (16, 256), (32, 128), (64, 64)]


def test_logical_shapes_toy_and_fixed():
    assert [(s.rows, s.cols) for s in logical_shapes(ArrayConfig(4, 4, granularity=2))] == [
        (2, 8), (4, 4)
    ]
    fixed = ArrayConfig(48, 48, granularity=8, reconfigurable=False)
    assert [(s.rows, s.cols) for s in logical_shapes(fixed)] == [(48, 48)]


def test_pe_conservation():
    for cfg in (ArrayConfig(), ArrayConfig(48, 48), ArrayConfig(4, 4, granularity=2)):
        for s in logical_shapes(cfg):
            assert s.rows * s.cols == cfg.phys_rows * cfg.phys_cols
            assert s.strips == cfg.phys_rows // s.rows


def test_granularity_must_divide_rows():
    with pytest.raises(ValueError):
        ArrayConfig(10, 10, granularity=4)


@pytest.mark.parametrize("m,want", [(8, 8), (1, 8), (64, 64), (20, 32), (200, 64)])
def test_select_logical_shape(m, want):
    assert select_logical_shape(m, ArrayConfig()).rows == want


def test_select_on_fixed_array_returns_physical():
    cfg = ArrayConfig(48, 48, granularity=8, reconfigurable=False)
    assert select_logical_shape(3, cfg).rows == 48


def test_serpentine_map_ports_and_strips():
    cfg = ArrayConfig()
    plan = serpentine_map(cfg, LogicalShape(8, 512, 8), Dataflow.IS)
    assert plan.weight_ports == (4, 4)
    assert len(plan.strips) == 8
    # degenerate serpentine: single strip, no links, one left port
    phys = serpentine_map(cfg, LogicalShape(64, 64, 1), Dataflow.OS)
    assert phys.weight_ports == (1, 0)
    assert phys.turn_links == ()


def test_serpentine_map_index_arithmetic():
    cfg = ArrayConfig(4, 4, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(2, 8, 2), Dataflow.IS)
    # logical column 5 sits in strip 1 (right-to-left) at physical column 2
    assert plan.phys_of(0, 5) == (2, 2)
    assert plan.phys_of(1, 0) == (1, 0)


def test_serpentine_map_rejects_illegal_shape():
    with pytest.raises(ValueError):
        serpentine_map(ArrayConfig(), LogicalShape(4, 1024, 16), Dataflow.OS)


def test_direction_alternation_and_turn_links():
    cfg = ArrayConfig(8, 8, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(2, 32, 4), Dataflow.IS)
    dirs = [s.left_to_right for s in plan.strips]
    assert dirs == [True, False, True, False]
    # turn links are vertical, at the shared edge column, one per logical row
    assert len(plan.turn_links) == (plan.logical.strips - 1) * plan.logical.rows
    for (r0, c0), (r1, c1) in plan.turn_links:
        assert c0 == c1
        assert r1 - r0 == plan.logical.rows


def test_mapping_bijective():
    for cfg in (ArrayConfig(4, 4, granularity=2), ArrayConfig(8, 8, granularity=2)):
        for shape in logical_shapes(cfg):
            plan = serpentine_map(cfg, shape, Dataflow.IS)
            seen = set()
            for i in range(shape.rows):
                for j in range(shape.cols):
                    seen.add(plan.phys_of(i, j))
            assert len(seen) == cfg.phys_rows * cfg.phys_cols


def test_emulate_is_example():
    cfg = ArrayConfig(4, 4, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(2, 8, 2), Dataflow.IS)
    rng = np.random.default_rng(3)
    a = rng.integers(-9, 10, (2, 8))
    b = rng.integers(-9, 10, (8, 3))
    res = emulate(plan, a, b)
    assert np.array_equal(res.c, reference_matmul(a, b))
    assert res.cycles == 3 + 2 + 8 - 1 + 4  # T + R + C - 1 + preload


def test_emulate_os_example():
    cfg = ArrayConfig(4, 4, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(4, 4, 1), Dataflow.OS)
    rng = np.random.default_rng(4)
    a = rng.integers(-9, 10, (4, 5))
    b = rng.integers(-9, 10, (5, 4))
    res = emulate(plan, a, b)
    assert np.array_equal(res.c, reference_matmul(a, b))
    assert res.cycles == 5 + 4 + 4 - 1 + 4


def test_emulate_zero_matrices():
    cfg = ArrayConfig(4, 4, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(2, 8, 2), Dataflow.OS)
    res = emulate(plan, np.zeros((2, 4), int), np.zeros((4, 8), int))
    assert not res.c.any()
    assert res.cycles == 4 + 2 + 8 - 1 + 4


def test_emulate_rejects_oversized_tiles():
    cfg = ArrayConfig(4, 4, granularity=2)
    plan = serpentine_map(cfg, LogicalShape(2, 8, 2), Dataflow.OS)
    with pytest.raises(EmulationError):
        emulate(plan, np.ones((3, 2), int), np.ones((2, 2), int))  # M > rows
    with pytest.raises(EmulationError):
        emulate(plan, np.ones((2, 2), int), np.ones((2, 9), int))  # N > cols
    plan_is = serpentine_map(cfg, LogicalShape(2, 8, 2), Dataflow.IS)
    with pytest.raises(EmulationError):
        emulate(plan_is, np.ones((2, 9), int), np.ones((9, 2), int))  # K > cols


def test_emulator_reference_agreement_sampled():
    # compact version of the acceptance grid; the full run lives there
    res = emulate_check_grid(reps=20, seed=11)
    assert res.passed, res.first_failure
    assert res.runs == 20 * 2 * (2 + 3)  # two dataflows, 2 + 3 shapes


def test_reference_matmul_matches_numpy():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m, k, n = rng.integers(1, 12, 3)
        a = rng.integers(-50, 50, (m, k))
        b = rng.integers(-50, 50, (k, n))
        assert np.array_equal(reference_matmul(a, b), a @ b)


def test_fault_injection_reports_counterexample():
    res = emulate_check_grid(grids=((4, 4, 2),), reps=1, seed=1, inject_fault=True)
    assert not res.passed
    assert "expected" in res.first_failure


def test_emulate_full_scale_grid():
    # production-geometry spot check: 64x64 grid remapped to 8x512, both dataflows
    cfg = ArrayConfig()
    rng = np.random.default_rng(21)
    plan = serpentine_map(cfg, LogicalShape(8, 512, 8), Dataflow.OS)
    a = rng.integers(-5, 6, (5, 3))
    b = rng.integers(-5, 6, (3, 100))
    res = emulate(plan, a, b)
    assert np.array_equal(res.c, reference_matmul(a, b))
    assert res.cycles == 3 + 8 + 512 - 1 + 64
    plan_is = serpentine_map(cfg, LogicalShape(8, 512, 8), Dataflow.IS)
    a2 = rng.integers(-5, 6, (8, 300))
    b2 = rng.integers(-5, 6, (300, 4))
    res2 = emulate(plan_is, a2, b2)
    assert np.array_equal(res2.c, reference_matmul(a2, b2))
    assert res2.cycles == 4 + 8 + 512 - 1 + 64
