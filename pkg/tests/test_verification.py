import math

import numpy as np
import pytest

from causalchar.characteristics import IntegratorConfig
from causalchar.fields import normal_transport
from causalchar.problems import load_preset, manufactured_problem
from causalchar.verification import (
    ExperimentReport,
    PerturbationSpec,
    delta_sum,
    perturb_problem,
    probe_fields,
    random_ball_member,
    run_continuous_dependence,
    run_contraction,
    run_det_bounds,
    run_manufactured,
    run_uniqueness,
)


@pytest.fixture(scope="module")
def causal32():
    return load_preset("disk-causal-eps0.1", 32)


def test_report_write_is_deterministic(tmp_path):
    rep = ExperimentReport("demo", results={"x": 0.1, "ok": True}, checks={"a": True})
    rep.add_table("t", ["n", "err"], [[1, 0.5], [2, float("nan")]])
    rep.runtime = 3.0
    paths = rep.write(tmp_path)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["demo-t.csv", "demo-summary.txt"]
    text = (tmp_path / "demo-t.csv").read_text()
    assert text == "n,err\n1,5.000000000000e-01\n2,nan\n"
    summary = (tmp_path / "demo-summary.txt").read_text()
    assert summary.startswith("[PASS] demo") and "runtime" not in summary


def test_report_fails_on_any_check():
    rep = ExperimentReport("demo", checks={"a": True, "b": False})
    assert not rep.passed and "check b: FAILED" in rep.summary()


def test_manufactured_small_ladder():
    rep = run_manufactured(ladder=(16, 32))
    assert rep.passed, rep.summary()
    assert rep.results["min_order"] > 1.5


def test_det_bounds_radial_oracle(disk):
    expected = {lam: (2 * (1 - lam) ** 3, 2.0) for lam in (0.25, 0.5)}
    rep = run_det_bounds(disk, normal_transport(disk.time), expected=expected, nt=11, ns=8)
    assert rep.passed, rep.summary()
    assert rep.results["k_0.5"] == pytest.approx(0.25, rel=1e-6)


def test_det_bounds_functional_field(causal32):
    p = causal32
    probes = probe_fields(p, 0, 3)
    rep = run_det_bounds(p.domain, p.c, vs=probes, cfg=p.cfg, nt=6, ns=8)
    assert rep.checks["positive"] and rep.checks["monotone"]


def test_ball_members(causal32):
    p = causal32
    v = random_ball_member(p, 7)
    inner = p.grid.interior
    assert v.values[inner].min() >= 0 and v.values[inner].max() <= p.u0.M4 + 1e-12
    assert v.tv() <= 0.5 * p.self_map_bounds().M_star_star + 1e-9
    assert np.array_equal(v.values, random_ball_member(p, 7).values)
    assert len(probe_fields(p, 0, 5)) == 5


def test_contraction_report(causal32):
    rep = run_contraction(causal32)
    assert rep.passed, rep.summary()
    assert rep.results["ratio_0.25"] <= rep.results["ratio_0.5"] * 1.1 + 1e-9


def test_uniqueness_report(causal32):
    rep = run_uniqueness(causal32)
    assert rep.passed, rep.summary()
    assert rep.results["max_distance"] <= 10 * rep.results["tol"]


def test_uniqueness_needs_two_guesses(causal32):
    with pytest.raises(ValueError):
        run_uniqueness(causal32, guesses={"zero": causal32.grid.constant(0.0)})


def test_perturbation_sizes(causal32):
    p = causal32
    pert, _ = perturb_problem(p, PerturbationSpec(seed=1).scaled(0.01))
    probes = probe_fields(p, 0, 3)
    total, (du, df, dc) = delta_sum(p, pert, probes)
    assert 0 < du <= 0.01 * 2 * math.pi + 1e-12
    assert 0 < df <= 0.01 + 1e-12
    assert 0 < dc <= 0.01 + 1e-12
    zero, _ = perturb_problem(p, PerturbationSpec(seed=1).scaled(0.0))
    assert delta_sum(p, zero, probes)[0] == 0.0


def test_perturbed_field_keeps_unit_speed(causal32):
    p = causal32
    pert, _ = perturb_problem(p, PerturbationSpec(seed=2).scaled(0.3))
    pts = p.grid.interior_centers()
    c = pert.c.freeze(p.grid.constant(0.5))(pts)
    assert np.allclose(np.linalg.norm(c, axis=1), 1.0)


def test_continuous_dependence_report(causal32):
    rep = run_continuous_dependence(causal32, levels=2)
    assert rep.passed, rep.summary()
    assert rep.checks["zero_delta_exact"]
