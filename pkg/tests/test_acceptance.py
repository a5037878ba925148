"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 1-11 are computed once into an artifact directory; criterion 12
recomputes them into a second directory and compares every file byte for byte.
"""
import csv
import math
import os
import time

import numpy as np
import pytest

from causalchar.characteristics import IntegratorConfig, ScaledField, trace_forward_many
from causalchar.fields import ConstantFunctionalField, audit_functional_causality, normal_transport
from causalchar.geometry import unit_disk
from causalchar.grid import ScalarGridField
from causalchar.inpainting import (
    causal_tangent_field,
    hole_error,
    inpaint,
    square_hole,
    stripes_card,
    time_from_mask,
)
from causalchar.linear_solver import compute_self_map_bounds, evaluate_solution, solve_linear
from causalchar.problems import load_preset
from causalchar.quasilinear import StripePlan, solve_quasilinear
from causalchar.verification import (
    random_ball_member,
    run_continuous_dependence,
    run_contraction,
    run_det_bounds,
    run_manufactured,
    run_uniqueness,
)

pytestmark = pytest.mark.slow

SEED = 0
N = 128


def _csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{x:.12e}" if isinstance(x, float) else x for x in r])


def _timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def _time_consistency(out):
    disk = unit_disk()
    scaled = ScaledField(disk.time, normal_transport(disk.time))
    s = 2 * math.pi * np.arange(64) / 64
    t = np.arange(100) / 100
    pos = trace_forward_many(scaled, disk.boundary, s, t, IntegratorConfig(dt=1e-3))
    dev = np.abs(disk.time.T0(pos.reshape(-1, 2)).reshape(pos.shape[:2]) - t[:, None])
    _csv(os.path.join(out, "c01-time-consistency.csv"), ["t", "max_deviation"],
         [[float(tk), float(d)] for tk, d in zip(t, dev.max(axis=1))])
    return {"max_dev": float(dev.max())}


def _closed_form(out):
    disk = unit_disk()
    scaled = ScaledField(disk.time, normal_transport(disk.time))
    s = 2 * math.pi * np.arange(64) / 64
    exact = 0.25 * disk.boundary(s)
    rows, errs = [], {}
    for dt in (1e-3, 5e-4):
        end = trace_forward_many(scaled, disk.boundary, s, [0.5], IntegratorConfig(dt=dt))[0]
        errs[dt] = float(np.max(np.linalg.norm(end - exact, axis=1)))
        rows.append([dt, errs[dt]])
    _csv(os.path.join(out, "c02-closed-form.csv"), ["dt", "endpoint_error"], rows)
    return {"err": errs[1e-3], "ratio": errs[1e-3] / errs[5e-4]}


def _linear(out):
    disk = unit_disk()
    from causalchar.fields import BoundaryData, constant_rhs

    u = evaluate_solution(disk, normal_transport(disk.time), constant_rhs(1.0), BoundaryData.constant(0.0),
                          [[0.25, 0.0]], IntegratorConfig(dt=1e-3))[0]
    rep, elapsed = _timed(run_manufactured, ladder=(64, 128, 256))
    rep.write(out)
    _csv(os.path.join(out, "c03-point.csv"), ["x", "y", "u", "exact"], [[0.25, 0.0, float(u), 0.75]])
    return {"point_err": abs(u - 0.75), "order": rep.results["min_order"], "seconds": elapsed}


def _det_bounds(out):
    disk = unit_disk()
    rep = run_det_bounds(disk, normal_transport(disk.time), lams=(0.5,), expected={0.5: (0.25, 2.0)})
    rep.write(out)
    return {"k": rep.results["k_0.5"], "K": rep.results["K_0.5"],
            "oracle": rep.checks["oracle_0.5"], "positive": rep.checks["positive"]}


def _self_map(out):
    b = compute_self_map_bounds(M1=0, M2=1, M3=0, M4=1, M5=0, beta=1, m0=0.5, area=math.pi,
                                sigma_length=0, dn_l1=0)
    _csv(os.path.join(out, "c05-self-map.csv"), ["M_star", "M_star_star"], [[b.M_star, b.M_star_star]])
    return {"M_star": b.M_star}


def _contraction(out, causal):
    rep = run_contraction(causal, lams=(0.25, 0.5), seed=SEED)
    rep.write(out)
    return {"r25": rep.results["ratio_0.25"], "r50": rep.results["ratio_0.5"],
            "bound50": rep.results["lam_kappa_0.5"]}


def _uniqueness(out, causal):
    rep = run_uniqueness(causal, seed=SEED)
    rep.write(out)
    return {"dist": rep.results["max_distance"], "tol": rep.results["tol"],
            "converged": rep.checks["converged"], "slowest": max(rep.timings.values())}


def _linear_reduction(out):
    p = load_preset("disk-radial-f1", 64)
    lin = solve_linear(p.domain, p.c, p.f, p.u0, p.grid, p.cfg)
    c = ConstantFunctionalField(p.c)
    plan = StripePlan(1 - p.cfg.eps_stop, 0.05)
    u, diag = solve_quasilinear(p.domain, c, p.f, p.u0, p.grid, plan, p.default_tol(), p.cfg)
    lin.save(os.path.join(out, "c08-linear.grid"))
    u.save(os.path.join(out, "c08-quasilinear.grid"))
    diag.to_csv(os.path.join(out, "c08-diagnostics.csv"))
    return {"identical": bool(np.array_equal(lin.values, u.values) and np.array_equal(lin.mask, u.mask)),
            "iterations": sorted({s.iterations for s in diag.stripes})}


def _continuous(out, causal):
    rep = run_continuous_dependence(causal, delta0=0.05, levels=3)
    rep.write(out)
    ladder = [r[5] for r in rep.tables["ladder"][1]]
    return {"ladder": ladder[:3], "zero": ladder[3]}


def _disk_probes(rng, n=100):
    r = np.sqrt(rng.uniform(0.0, 0.95**2, n))
    a = rng.uniform(0, 2 * math.pi, n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def _audits(out):
    rng = np.random.default_rng(SEED)
    rows = []
    for name in ("disk-causal-eps0.1", "disk-acausal"):
        p = load_preset(name, 64)
        v = random_ball_member(p, SEED)
        rep = audit_functional_causality(p.c, v, _disk_probes(rng), p.domain.time)
        rows.append([name, rep.max_discrepancy])
    img, mask = stripes_card(256, 16), square_hole(256, 32)
    time_fn, _ = time_from_mask(mask)
    F = causal_tangent_field(img, mask, time_fn)
    v = ScalarGridField((0, 0, 256, 256), rng.uniform(size=(256, 256)), mask.damaged.astype(np.uint8))
    cells = np.argwhere(mask.damaged)
    pick = cells[rng.choice(len(cells), 100, replace=False)]
    probes = pick[:, ::-1] + rng.uniform(0.05, 0.95, (100, 2))
    rows.append(["inpainting-tangent", audit_functional_causality(F, v, probes, time_fn).max_discrepancy])
    _csv(os.path.join(out, "c10-audits.csv"), ["field", "max_discrepancy"], rows)
    return dict((r[0], r[1]) for r in rows)


def _inpainting(out):
    img, mask = stripes_card(256, 16), square_hole(256, 32)
    res, elapsed = _timed(inpaint, img, mask)
    res.image.write(os.path.join(out, "c11-inpainted.pgm"))
    res.diagnostics.to_csv(os.path.join(out, "c11-diagnostics.csv"))
    known_same = bool(np.array_equal(res.image.to_bytes()[~mask.damaged], img.to_bytes()[~mask.damaged]))
    mae = hole_error(res.image, img, mask)
    # reference only: the square-wave card of the same period
    sq = stripes_card(256, 16, "square")
    sq_mae = hole_error(inpaint(sq, mask).image, sq, mask)
    _csv(os.path.join(out, "c11-error.csv"), ["card", "hole_mae"], [["sine", mae], ["square", sq_mae]])
    return {"mae": mae, "known_same": known_same, "seconds": elapsed, "square_mae": sq_mae}


def run_all(out):
    os.makedirs(out, exist_ok=True)
    causal = load_preset("disk-causal-eps0.1", N)
    res = {}
    res[1], res["t1"] = _timed(_time_consistency, out)
    res[2] = _closed_form(out)
    res[3] = _linear(out)
    res[4] = _det_bounds(out)
    res[5] = _self_map(out)
    res[6] = _contraction(out, causal)
    res[7] = _uniqueness(out, causal)
    res[8] = _linear_reduction(out)
    res[9] = _continuous(out, causal)
    res[10] = _audits(out)
    res[11] = _inpainting(out)
    return res


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acceptance-a"))
    return out, run_all(out)


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_c01_time_consistency(first_run, capsys):
    r, secs = first_run[1][1], first_run[1]["t1"]
    _verdict(capsys, 1, r["max_dev"] <= 1e-6 and secs < 5,
             f"max |T0(xi)-t| = {r['max_dev']:.3e} (<= 1e-6), {secs:.2f} s (< 5 s)")


def test_c02_characteristic_closed_form(first_run, capsys):
    r = first_run[1][2]
    _verdict(capsys, 2, r["err"] <= 1e-8 and r["ratio"] >= 8,
             f"endpoint error {r['err']:.3e} (<= 1e-8), halving ratio {r['ratio']:.1f} (>= 8)")


def test_c03_linear_exactness(first_run, capsys):
    r = first_run[1][3]
    _verdict(capsys, 3, r["point_err"] <= 1e-6 and r["order"] >= 1.0 and r["seconds"] < 60,
             f"|u(0.25,0)-0.75| = {r['point_err']:.3e}, observed order {r['order']:.2f} (>= 1), "
             f"ladder {r['seconds']:.1f} s (< 60 s)")


def test_c04_determinant_bounds(first_run, capsys):
    r = first_run[1][4]
    _verdict(capsys, 4, r["oracle"] and r["positive"],
             f"k = {r['k']:.6f} (0.25), K = {r['K']:.6f} (2) within 2%, positive = {r['positive']}")


def test_c05_self_map_bounds(first_run, capsys):
    r = first_run[1][5]
    err = abs(r["M_star"] - 3 * math.pi)
    _verdict(capsys, 5, err <= 1e-12, f"M* = {r['M_star']:.15f}, |M* - 3 pi| = {err:.1e}")


def test_c06_contraction(first_run, capsys):
    r = first_run[1][6]
    ok = r["r50"] < 1 and r["r50"] <= 1.1 * r["bound50"] and r["r25"] <= r["r50"] + 1e-9
    _verdict(capsys, 6, ok, f"ratio(0.5) = {r['r50']:.3e} <= 1.1 * {r['bound50']:.3e} and < 1; "
                            f"ratio(0.25) = {r['r25']:.3e}")


def test_c07_uniqueness(first_run, capsys):
    r = first_run[1][7]
    ok = r["converged"] and r["dist"] <= 10 * r["tol"] and r["slowest"] < 120
    _verdict(capsys, 7, ok, f"max pairwise L1 = {r['dist']:.3e} (<= {10 * r['tol']:.3e}), "
                            f"slowest solve {r['slowest']:.1f} s (< 120 s)")


def test_c08_linear_reduction(first_run, capsys):
    r = first_run[1][8]
    _verdict(capsys, 8, r["identical"] and r["iterations"] == [1],
             f"bit-identical = {r['identical']}, iterations per stripe = {r['iterations']}")


def test_c09_continuous_dependence(first_run, capsys):
    r = first_run[1][9]
    e = r["ladder"]
    halvings = [e[0] / e[1], e[1] / e[2]]
    ok = e[0] > e[1] > e[2] and min(halvings) >= 1.6 and r["zero"] == 0.0
    _verdict(capsys, 9, ok, f"differences {e[0]:.3e}, {e[1]:.3e}, {e[2]:.3e}; halvings "
                            f"{halvings[0]:.2f}, {halvings[1]:.2f} (>= 1.6); delta=0 gives {r['zero']:g}")


def test_c10_causality_audits(first_run, capsys):
    r = first_run[1][10]
    ok = r["disk-causal-eps0.1"] == 0 and r["inpainting-tangent"] == 0 and r["disk-acausal"] > 0
    _verdict(capsys, 10, ok, f"causal {r['disk-causal-eps0.1']:g}, tangent {r['inpainting-tangent']:g}, "
                             f"acausal {r['disk-acausal']:.3e}")


def test_c11_inpainting(first_run, capsys):
    r = first_run[1][11]
    ok = r["mae"] <= 0.05 and r["known_same"] and r["seconds"] < 60
    _verdict(capsys, 11, ok, f"hole MAE {r['mae']:.4f} (<= 0.05), known bytes identical = {r['known_same']}, "
                             f"{r['seconds']:.1f} s (< 60 s); square-wave card MAE {r['square_mae']:.4f} for reference")


def test_c12_determinism(first_run, tmp_path_factory, capsys):
    out_a = first_run[0]
    out_b = str(tmp_path_factory.mktemp("acceptance-b"))
    run_all(out_b)
    names = sorted(os.listdir(out_a))
    differ = [n for n in names if open(os.path.join(out_a, n), "rb").read() != open(os.path.join(out_b, n), "rb").read()]
    same_set = names == sorted(os.listdir(out_b))
    _verdict(capsys, 12, same_set and not differ,
             f"{len(names)} artifacts compared, {len(differ)} differ{': ' + ', '.join(differ) if differ else ''}")
