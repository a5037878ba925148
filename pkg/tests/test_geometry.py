import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalchar.errors import (
    DomainMembershipError,
    FormatError,
    GeometryInconsistencyError,
    StopSetProximityError,
    TimeFunctionInvalidError,
)
from causalchar.geometry import (
    BoundaryCurve,
    GridTimeFunction,
    StopSet,
    cell_centers,
    check_time_function,
    estimate_dn_l1,
    grad_transformed_time,
    load_time_grid,
    m0_estimate,
    normal_field,
    past_membership,
    save_time_grid,
    transformed_time,
    unit_disk,
)
from causalchar.grid import make_grid

from conftest import random_disk_points


def test_transformed_time_disk_examples(disk):
    assert transformed_time(disk.time, [0.25, 0.0]) == pytest.approx(0.5, abs=1e-15)
    assert transformed_time(disk.time, [1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert transformed_time(disk.time, [0.0, 0.0]) == 1.0
    # boundary points of any angle
    s = np.linspace(0, 2 * np.pi, 17)
    assert np.allclose(transformed_time(disk.time, np.column_stack([np.cos(s), np.sin(s)])), 0.0, atol=1e-12)


def test_transformed_time_rejects_exterior(disk):
    with pytest.raises(DomainMembershipError):
        transformed_time(disk.time, [1.5, 0.0])


def test_grad_transformed_time_disk(disk):
    g = grad_transformed_time(disk.time, [0.25, 0.0])
    assert np.linalg.norm(g) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.norm(grad_transformed_time(disk.time, [0.0, 1.0])) == pytest.approx(0.5, rel=1e-12)


def test_grad_transformed_time_refuses_collar(disk):
    with pytest.raises(StopSetProximityError):
        grad_transformed_time(disk.time, [1e-8, 0.0])


@pytest.mark.parametrize("domain_name", ["disk", "ell"])
def test_grad_matches_finite_differences(domain_name, request):
    domain = request.getfixturevalue(domain_name)
    rng = np.random.default_rng(3)
    x0, y0, x1, y1 = domain.bounding_box
    pts = rng.uniform([x0, y0], [x1, y1], (4000, 2))
    t0 = domain.time.T0(pts)
    pts = pts[domain.inside(pts) & (t0 > 0.05) & (t0 < 0.9)][:300]
    h = 1e-5 * domain.diameter
    fd = np.column_stack([
        (domain.time.T0(pts + [h, 0]) - domain.time.T0(pts - [h, 0])) / (2 * h),
        (domain.time.T0(pts + [0, h]) - domain.time.T0(pts - [0, h])) / (2 * h),
    ])
    g = grad_transformed_time(domain.time, pts)
    rel = np.linalg.norm(fd - g, axis=1) / np.linalg.norm(g, axis=1)
    assert rel.max() <= 1e-4


def test_normal_field_examples(disk):
    assert np.allclose(normal_field(disk.time, [0.5, 0.0]), [-1.0, 0.0], atol=1e-15)
    assert np.allclose(normal_field(disk.time, [0.0, 0.5]), [0.0, -1.0], atol=1e-15)
    pts = random_disk_points(np.random.default_rng(0), 1000)
    assert np.max(np.abs(np.linalg.norm(normal_field(disk.time, pts), axis=1) - 1)) <= 1e-12


def test_normal_points_towards_increasing_T(ell):
    pts = np.array([[0.3, 0.5], [-1.0, -0.2], [1.2, 0.1]])
    n = normal_field(ell.time, pts)
    assert np.all(ell.time.T(pts + 1e-4 * n) > ell.time.T(pts))


@pytest.mark.parametrize("q", [2.0, 3.0, 4.0])
def test_m0_radial_family(q):
    d = unit_disk(q)
    m0 = m0_estimate(d.time, make_grid(d, 128))
    # the minimum 2/q sits on the boundary; cell centres approach it from inside
    assert m0 == pytest.approx(2.0 / q, rel=0.02)
    assert m0 >= 2.0 / q - 1e-12


def test_m0_is_minimum_over_samples(disk, disk_grid64):
    m0 = m0_estimate(disk.time, disk_grid64)
    pts = disk_grid64.interior_centers()
    assert np.all(np.linalg.norm(disk.time.grad_T0(pts), axis=1) >= m0)


def test_m0_decreases_with_q():
    vals = [m0_estimate(unit_disk(q).time, make_grid(unit_disk(q), 64)) for q in (2, 3, 4)]
    assert vals[0] > vals[1] > vals[2]


def test_past_membership_examples(disk):
    assert past_membership(disk.time, 0.5, [0.3, 0.0])
    pts = random_disk_points(np.random.default_rng(1), 200)
    assert not past_membership(disk.time, 0.0, pts).any()
    assert past_membership(disk.time, 1.0, pts).all()
    assert not past_membership(disk.time, 1.0, [2.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_transformed_time_monotone(a, b):
    d = unit_disk()
    ra, rb = sorted([a, b])
    # larger radius means smaller T
    t_small_r = transformed_time(d.time, [ra, 0.0])
    t_large_r = transformed_time(d.time, [rb, 0.0])
    assert t_small_r >= t_large_r


def test_past_sets_nest(disk, disk_grid64):
    t0 = disk.time.cell_t0(disk_grid64.bbox, disk_grid64.shape)
    lams = [0.1, 0.3, 0.5, 0.7, 0.9]
    sets = [t0 < lam for lam in lams]
    for a, b in zip(sets, sets[1:]):
        assert np.all(b[a])


def test_check_time_function_accepts_builtins(disk, ell):
    rep = check_time_function(disk, 64)
    assert rep["boundary_max_abs_T"] <= disk.tau_bd
    assert all(rep["upper_level_sets_connected"].values())
    check_time_function(ell, 64)


def test_ellipse_stop_set_and_time(ell):
    foc = ell.extras["focus"]
    seg = np.column_stack([np.linspace(-foc, foc, 9), np.zeros(9)])
    assert np.allclose(ell.time.T(seg), 1.0)
    _, b = ell.boundary.samples(200)
    assert np.max(np.abs(ell.time.T(b))) <= ell.tau_bd
    assert ell.time.stop_set.length() == pytest.approx(2 * foc)


def test_dn_l1_disk():
    assert estimate_dn_l1(unit_disk()) == pytest.approx(2 * math.pi, rel=0.01)


def test_boundary_curve_checks():
    c = BoundaryCurve.circle()
    c.check()
    assert c.orientation() == 1.0
    cw = BoundaryCurve(lambda s: c(-s), lambda s: -c.tangent(-s), (0.0, 2 * math.pi))
    assert cw.orientation() == -1.0
    open_curve = BoundaryCurve(lambda s: np.stack([s, s], -1), lambda s: np.ones((len(s), 2)), (0.0, 1.0))
    with pytest.raises(GeometryInconsistencyError):
        open_curve.check()


def test_stop_set_variants():
    p = StopSet.isolated_point((0.1, 0.2))
    assert p.distance([0.1, 0.2]) == 0.0
    arc = StopSet.single_arc([[0, 0], [1, 0], [2, 0]])
    assert arc.length() == 2.0
    assert arc.distance([1.0, 1.0]) == pytest.approx(1.0)
    with pytest.raises(GeometryInconsistencyError):
        StopSet.single_arc([[0, 0], [2, 2], [2, 0], [0, 2]])
    assert StopSet.from_points([[0.0, 0.0]]).kind == "point"


def _grid_disk(n, q=4.0):
    bbox = (-1.0, -1.0, 1.0, 1.0)
    xs, ys = cell_centers(bbox, (n, n))
    X, Y = np.meshgrid(xs, ys)
    return GridTimeFunction(1 - X**2 - Y**2, bbox, q, StopSet.isolated_point((0, 0)))


def test_grid_time_function_second_order_gradient():
    pts = np.array([[0.3, 0.2], [-0.4, 0.5], [0.1, -0.6]])
    errs = []
    for n in (32, 64):
        tf = _grid_disk(n)
        # compare at cell centres, where interpolation is exact
        xs, ys = cell_centers(tf.bbox, (n, n))
        ctr = np.column_stack([xs[np.searchsorted(xs, pts[:, 0])], ys[np.searchsorted(ys, pts[:, 1])]])
        errs.append(np.max(np.abs(tf.gradient(ctr) + 2 * ctr)))
    # T is quadratic, so central differences are exact away from the edge
    assert max(errs) <= 1e-12


def test_time_grid_roundtrip(tmp_path):
    # odd size puts a cell centre on the stop point, so the reloaded grid reaches 1
    tf = _grid_disk(17, q=3.0)
    path = tmp_path / "t.tgrd"
    save_time_grid(path, tf)
    raw = path.read_bytes()
    assert raw[:4] == b"TGRD"
    assert len(raw) == 4 + 8 + 5 * 8 + 17 * 17 * 8
    back = load_time_grid(path)
    assert back.q == 3.0 and back.bbox == tf.bbox
    assert np.array_equal(back.values, tf.values)
    path.write_bytes(raw[:100])
    with pytest.raises(FormatError):
        load_time_grid(path)


def test_grid_time_function_needs_a_maximum():
    with pytest.raises(TimeFunctionInvalidError):
        GridTimeFunction(np.zeros((4, 4)), (0, 0, 1, 1), 4.0)
