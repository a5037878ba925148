import math
import warnings

import numpy as np
import pytest

from causalchar.errors import CausalityViolationError, CharacteristicCrossingError, ContractionFailureError, DegeneratePairError
from causalchar.linear_solver import solve_linear
from causalchar.problems import load_preset
from causalchar.quasilinear import (
    StripePlan,
    compute_contraction_constants,
    global_picard_solve,
    measure_operator_lipschitz,
    solve_quasilinear,
)


@pytest.fixture(scope="module")
def causal32():
    return load_preset("disk-causal-eps0.1", 32)


@pytest.fixture(scope="module")
def causal32_solution(causal32):
    p = causal32
    return solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.9, 0.1), 1e-10, p.cfg)


def test_stripe_plan_layout():
    plan = StripePlan(0.9, 0.25)
    assert plan.L == 3
    assert plan.final_thickness == pytest.approx(0.15)
    assert plan.stripes() == [(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 0.9)]
    exact = StripePlan(0.9, 0.3)
    assert len(exact.stripes()) == 3 and exact.stripes()[-1][1] == 0.9
    assert StripePlan(0.5, 0.1, kappa=5).contraction_guaranteed
    assert not StripePlan(0.5, 0.1, kappa=20).contraction_guaranteed
    with pytest.raises(ValueError):
        StripePlan(1.0, 0.1)
    with pytest.raises(ValueError):
        StripePlan(0.5, 0.0)


def test_stripe_plan_from_kappa():
    assert StripePlan.from_kappa(0.9, 2.0).h == pytest.approx(0.25)
    with pytest.warns(UserWarning):
        plan = StripePlan.from_kappa(0.9, 100.0)
    assert plan.h == 0.05 and not plan.contraction_guaranteed


def test_contraction_constants_disk_example():
    cc = compute_contraction_constants([1.0, 2.0], 1.0, 0.25, 0.0, 1.0, 3.0, math.pi, 0.5)
    assert cc.k == 1 and cc.K == 2
    assert cc.C == pytest.approx(8.0)
    assert cc.kappa == pytest.approx(8 * math.pi)
    assert compute_contraction_constants([0.25, 2.0], 1.0, 0.5, 0.0, 0.0, 3.0, 1.0, 0.5).C == pytest.approx(16.0)


def test_contraction_constants_zero_lipschitz():
    cc = compute_contraction_constants([0.5, 2.0], 1.0, 0.5, 0.0, 0.0, 10.0, math.pi, 0.5)
    assert cc.kappa == 0.0


def test_contraction_constants_monotone():
    base = dict(det_samples=[0.5, 2.0], beta=1.0, m0=0.5, L1=0.1, L2=0.2, M_star_star=3.0, area=math.pi, lam=0.5)
    k0 = compute_contraction_constants(**base).kappa
    for key in ("L1", "L2", "M_star_star"):
        bigger = dict(base, **{key: base[key] * 2})
        assert compute_contraction_constants(**bigger).kappa > k0
    assert compute_contraction_constants(**dict(base, beta=0.5)).kappa > k0


def test_contraction_constants_invalid():
    with pytest.raises(CharacteristicCrossingError):
        compute_contraction_constants([1.0, 0.0], 1, 0.5, 0, 0, 1, 1, 0.5)
    with pytest.raises(ValueError):
        compute_contraction_constants([1.0], 1, 0.5, 0, 0, 1, 1, 1.0)


def test_linear_reduction_bit_identical():
    p = load_preset("disk-radial-f1", 32)
    lin = solve_linear(p.domain, p.c, p.f, p.u0, p.grid, p.cfg)
    plan = StripePlan(0.999, 0.1)
    u, diag = solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, plan, 1e-10, p.cfg)
    assert np.array_equal(u.values, lin.values)
    assert all(s.iterations == 1 for s in diag.stripes)
    assert len(diag.stripes) == len(plan.stripes())


def test_stripes_converge(causal32_solution):
    u, diag = causal32_solution
    assert all(s.final_update <= 1e-10 for s in diag.stripes if s.n_cells)
    assert all(s.measured_ratio < 1 for s in diag.stripes if s.iterations > 1)
    assert diag.total_iterations == sum(len(s.updates) for s in diag.stripes)


def test_is_fixed_point(causal32, causal32_solution):
    from causalchar.quasilinear import apply_operator

    p = causal32
    u, _ = causal32_solution
    t0 = p.domain.time.cell_t0(p.grid.bbox, p.grid.shape)
    cells = p.grid.interior & (t0 < 0.9)
    again = apply_operator(p.domain, p.c, p.f, p.u0, u, cells, p.cfg)
    assert np.sum(np.abs(again - u.values[cells])) * p.grid.cell_area <= 1e-9


def test_uniqueness_across_initial_guesses(causal32, causal32_solution):
    p = causal32
    ref, _ = causal32_solution
    t0 = p.domain.time.cell_t0(p.grid.bbox, p.grid.shape)
    cells = p.grid.interior & (t0 < 0.9)
    rng = np.random.default_rng(3)
    for init in (p.grid.constant(5.0), p.grid.with_values(rng.normal(size=p.grid.shape))):
        u, _ = solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.9, 0.1), 1e-10, p.cfg, init=init)
        assert np.sum(np.abs(u.values[cells] - ref.values[cells])) * p.grid.cell_area <= 1e-8


def test_global_picard_agrees(causal32, causal32_solution):
    p = causal32
    ref, _ = causal32_solution
    u, diag = global_picard_solve(p.domain, p.c, p.f, p.u0, p.grid, 1e-10, p.cfg, lam_max=0.9)
    t0 = p.domain.time.cell_t0(p.grid.bbox, p.grid.shape)
    cells = p.grid.interior & (t0 < 0.9)
    assert np.sum(np.abs(u.values[cells] - ref.values[cells])) * p.grid.cell_area <= 1e-8
    assert diag.mode == "global" and len(diag.stripes) == 1


def test_earlier_stripes_are_final(causal32, causal32_solution):
    p = causal32
    ref, _ = causal32_solution
    short, _ = solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.5, 0.1), 1e-10, p.cfg)
    t0 = p.domain.time.cell_t0(p.grid.bbox, p.grid.shape)
    cells = p.grid.interior & (t0 < 0.5)
    assert np.array_equal(short.values[cells], ref.values[cells])


def test_operator_lipschitz(causal32):
    p = causal32
    rng = np.random.default_rng(0)
    v1 = p.grid.with_values(rng.normal(size=p.grid.shape))
    v2 = p.grid.with_values(rng.normal(size=p.grid.shape))
    ratio = measure_operator_lipschitz(p.domain, p.c, p.f, p.u0, v1, v2, 0.5, p.cfg)
    assert 0 <= ratio < 1
    with pytest.raises(DegeneratePairError):
        measure_operator_lipschitz(p.domain, p.c, p.f, p.u0, v1, v1.copy(), 0.5, p.cfg)
    lin = load_preset("disk-radial-f1", 32)
    assert measure_operator_lipschitz(lin.domain, lin.c, lin.f, lin.u0, v1, v2, 0.5, lin.cfg) == 0.0


def test_contraction_failure_raised(causal32):
    p = causal32
    with pytest.raises(ContractionFailureError) as info:
        solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.5, 0.25), 1e-14, p.cfg, max_iter=2)
    assert info.value.stripe == 0


def test_acausal_rejected():
    p = load_preset("disk-acausal", 32)
    with pytest.raises(CausalityViolationError):
        solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.5, 0.1), 1e-8, p.cfg)


def test_invalid_tol(causal32):
    p = causal32
    with pytest.raises(ValueError):
        solve_quasilinear(p.domain, p.c, p.f, p.u0, p.grid, StripePlan(0.5, 0.1), 0.0, p.cfg)


def test_diagnostics_csv(tmp_path, causal32_solution):
    _, diag = causal32_solution
    diag.to_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "stripe,iteration,update,ratio"
    assert len(lines) == 1 + diag.total_iterations
    assert lines[1].endswith(",")
