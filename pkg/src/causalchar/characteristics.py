"""Forward and backward characteristics of the scaled field c0 = c / <c, grad T0>.

Integration runs in the T0 clock: along a forward characteristic T0 equals
the independent variable t.  After every RK4 step the point is pulled back
onto the level set {T0 = t} by Newton steps along grad T0 whenever the
drift exceeds tau_time / 10.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    CausalityViolationError,
    CharacteristicCrossingError,
    GeometryInconsistencyError,
    IntegrationFailureError,
)
from .geometry import as_points


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"  # "rk4" (fixed step) or "rk45" (adaptive, scipy)
    dt: float = 1e-3  # step in T0 units
    tau_time: float = 1e-6
    eps_stop: float = 1e-3
    max_steps: int = 1_000_000
    newton_iters: int = 3
    fd_step: float = 1e-4
    rtol: float = 1e-10
    atol: float = 1e-12
    cut: float = 0.0  # boundary parameter of the exceptional curve S = {xi(t, cut)}

    def __post_init__(self):
        if self.method not in ("rk4", "rk45"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.eps_stop < 0.1:
            raise ValueError("eps_stop must lie in (0, 0.1)")
        if not self.tau_time > 0:
            raise ValueError("tau_time must be positive")

    def replace(self, **kw):
        return replace(self, **kw)


class ScaledField:
    """Evaluates c0 (and f0) for frozen linear coefficients."""

    def __init__(self, time, c, f=None):
        self.time = time
        self.c = c
        self.f = f

    def __call__(self, pts, with_f=False):
        g = self.time.grad_T0(pts)
        cv = self.c(pts)
        den = np.einsum("ij,ij->i", cv, g)
        if not np.all(den > 0):
            bad = pts[~(den > 0)][0]
            raise CausalityViolationError(
                f"<c, grad T0> <= 0 at ({bad[0]:.6g}, {bad[1]:.6g}); field violates causality"
            )
        c0 = cv / den[:, None]
        if not with_f:
            return c0, None
        f0 = self.f(pts) / den if self.f is not None else np.zeros(len(pts))
        return c0, f0


@dataclass
class CharCurve:
    t: np.ndarray
    points: np.ndarray
    direction: str
    anchor_s: Optional[float] = None
    anchor_x: Optional[np.ndarray] = None

    @property
    def end(self):
        return self.points[-1]

    def arc_length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y"])
            for t, (x, y) in zip(self.t, self.points):
                w.writerow([f"{t:.12g}", f"{x:.15g}", f"{y:.15g}"])


def project_to_level(time, p, target, cfg):
    """Newton steps along grad T0 onto {T0 = target}; raises if drift stays above tau_time."""
    target = np.broadcast_to(np.asarray(target, dtype=float), (len(p),))
    d = time.T0(p) - target
    for _ in range(cfg.newton_iters):
        bad = np.abs(d) > cfg.tau_time / 10
        if not bad.any():
            break
        pb = p[bad]
        g = time.grad_T0(pb)
        p[bad] = pb - (d[bad] / np.einsum("ij,ij->i", g, g))[:, None] * g
        d[bad] = time.T0(p[bad]) - target[bad]
    worst = float(np.max(np.abs(d))) if len(d) else 0.0
    if not worst <= cfg.tau_time:
        raise IntegrationFailureError(f"time-consistency breach {worst:.3g} > tau_time={cfg.tau_time:g}")
    return p


def _schedule(t_max, dt, t_eval):
    n = max(1, math.ceil(t_max / dt - 1e-9))
    base = np.linspace(0.0, t_max, n + 1)
    if t_eval is None or len(t_eval) == 0:
        return base
    t_eval = np.unique(np.asarray(t_eval, dtype=float))
    near = np.min(np.abs(base[:, None] - t_eval[None, :]), axis=1) < 1e-12
    return np.unique(np.concatenate([base[~near], t_eval, [0.0]]))


def _check_inside(time, p, what):
    if time.inside is not None and not np.all(time.inside(p)):
        raise GeometryInconsistencyError(f"{what} left the domain")


# ---------------------------------------------------------------------------
# forward characteristics


def trace_forward_many(scaled, gamma, s, t_eval, cfg, with_f=False):
    """Trace xi(., s) for every seed s; returns positions (len(t_eval), len(s), 2).

    With ``with_f`` also returns the running trapezoid integrals of f0.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    t_max = float(t_eval.max())
    if t_max > 1.0 - cfg.eps_stop + 1e-12:
        raise ValueError(f"t_max={t_max} exceeds 1 - eps_stop")
    if np.any(t_eval < 0):
        raise ValueError("negative evaluation time")
    p0 = gamma(s).reshape(-1, 2)
    if cfg.method == "rk45":
        return _forward_rk45(scaled, p0, t_eval, cfg, with_f)
    times = _schedule(t_max, cfg.dt, t_eval)
    if len(times) - 1 > cfg.max_steps:
        raise IntegrationFailureError("max_steps exceeded")
    slot = {float(t): i for i, t in enumerate(t_eval)}
    out = np.empty((len(t_eval), len(s), 2))
    integ_out = np.zeros((len(t_eval), len(s))) if with_f else None
    p = p0.copy()
    integ = np.zeros(len(s))
    if 0.0 in slot:
        out[slot[0.0]] = p
    c0, f0 = scaled(p, with_f)
    time = scaled.time
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        k1 = c0
        k2, _ = scaled(p + (0.5 * h) * k1)
        k3, _ = scaled(p + (0.5 * h) * k2)
        k4, _ = scaled(p + h * k3)
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p = project_to_level(time, p, times[k + 1], cfg)
        c0, f1 = scaled(p, with_f)
        if with_f:
            integ = integ + 0.5 * h * (f0 + f1)
            f0 = f1
        i = slot.get(float(times[k + 1]))
        if i is not None:
            out[i] = p
            if with_f:
                integ_out[i] = integ
    _check_inside(time, p, "forward characteristic")
    return (out, integ_out) if with_f else out


def _forward_rk45(scaled, p0, t_eval, cfg, with_f):
    ns = len(p0)

    def rhs(t, y):
        p = y[: 2 * ns].reshape(ns, 2)
        c0, f0 = scaled(p, with_f)
        return np.concatenate([c0.ravel(), f0]) if with_f else c0.ravel()

    y0 = np.concatenate([p0.ravel(), np.zeros(ns)]) if with_f else p0.ravel()
    order = np.argsort(t_eval)
    sol = solve_ivp(rhs, (0.0, float(t_eval.max())), y0, t_eval=t_eval[order], rtol=cfg.rtol, atol=cfg.atol)
    if not sol.success:
        raise IntegrationFailureError(sol.message)
    out = np.empty((len(t_eval), ns, 2))
    integ = np.zeros((len(t_eval), ns)) if with_f else None
    for j, i in enumerate(order):
        p = sol.y[: 2 * ns, j].reshape(ns, 2).copy()
        out[i] = project_to_level(scaled.time, p, t_eval[i], cfg)
        if with_f:
            integ[i] = sol.y[2 * ns :, j]
    return (out, integ) if with_f else out


def trace_forward(scaled, gamma, s, t_max, cfg):
    """Single forward characteristic from gamma(s), sampled at every step."""
    times = _schedule(t_max, cfg.dt, None)
    pos = trace_forward_many(scaled, gamma, [s], times, cfg)
    return CharCurve(times, pos[:, 0, :], "forward", anchor_s=float(s))


# ---------------------------------------------------------------------------
# backward characteristics


def backward_sweep(scaled, X, cfg, with_f=False, record=False):
    """Trace eta(., x) back to the boundary for every row of X.

    Each point uses n = ceil(T0(x)/dt) equal steps so the last step lands
    exactly on T0 = 0.  Returns ``(endpoints, f0_integrals, t0)``; with
    ``record`` also the per-step positions (small batches only).
    """
    time = scaled.time
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    t0 = time.T0(X)
    if np.any(t0 > 1.0 - cfg.eps_stop + 1e-12):
        raise ValueError("backward trace started inside the stop-set collar")
    if cfg.method == "rk45":
        end, integ = _backward_rk45(scaled, X, t0, cfg, with_f)
        return end, integ, t0
    n = np.where(t0 > 0, np.ceil(t0 / cfg.dt - 1e-9), 0).astype(np.int64)
    n = np.where((t0 > 0) & (n == 0), 1, n)
    nmax = int(n.max()) if len(n) else 0
    if nmax > cfg.max_steps:
        raise IntegrationFailureError(f"backward trace needs {nmax} steps > max_steps={cfg.max_steps}")
    h = np.where(n > 0, t0 / np.maximum(n, 1), 0.0)
    order = np.argsort(-n, kind="stable")
    p = X[order].copy()
    hs, ns, ts = h[order], n[order], t0[order]
    n_sorted_up = np.sort(n)
    integ = np.zeros(len(X))
    history = [p.copy()] if record else None
    for k in range(nmax):
        m = len(n) - int(np.searchsorted(n_sorted_up, k, side="right"))
        P = p[:m]
        H = hs[:m, None]
        k1, f1 = scaled(P, with_f)
        if with_f:
            integ[:m] += hs[:m] * f1 * (0.5 if k == 0 else 1.0)
        k2, _ = scaled(P - (0.5 * H) * k1)
        k3, _ = scaled(P - (0.5 * H) * k2)
        k4, _ = scaled(P - H * k3)
        Pn = P - (H / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        target = ts[:m] * (1.0 - (k + 1) / ns[:m])
        p[:m] = project_to_level(time, Pn, target, cfg)
        if record:
            history.append(p.copy())
    if with_f:
        moved = ns > 0
        if moved.any():
            _, ff = scaled(p[moved], True)
            integ[moved] += 0.5 * hs[moved] * ff
    _check_inside(time, p, "backward characteristic")
    end = np.empty_like(p)
    end[order] = p
    out_integ = np.empty_like(integ)
    out_integ[order] = integ
    if record:
        return end, out_integ, t0, history
    return end, out_integ, t0


def _backward_rk45(scaled, X, t0, cfg, with_f):
    """All points in one system, each in its own rescaled clock sigma = tau / T0(x)."""
    moving = t0 > 0
    end = X.copy()
    integ = np.zeros(len(X))
    if not moving.any():
        return end, integ
    Xm, dur = X[moving], t0[moving]
    nm = len(Xm)

    def rhs(sig, y):
        p = y[: 2 * nm].reshape(nm, 2)
        c0, f0 = scaled(p, with_f)
        dp = -(dur[:, None] * c0)
        return np.concatenate([dp.ravel(), dur * f0]) if with_f else dp.ravel()

    y0 = np.concatenate([Xm.ravel(), np.zeros(nm)]) if with_f else Xm.ravel()
    sol = solve_ivp(rhs, (0.0, 1.0), y0, rtol=cfg.rtol, atol=cfg.atol)
    if not sol.success:
        raise IntegrationFailureError(sol.message)
    p = sol.y[: 2 * nm, -1].reshape(nm, 2).copy()
    end[moving] = project_to_level(scaled.time, p, 0.0, cfg)
    if with_f:
        integ[moving] = sol.y[2 * nm :, -1]
    _check_inside(scaled.time, end, "backward characteristic")
    return end, integ


def trace_backward(scaled, x, cfg):
    """Backward characteristic from x to the boundary, as a sampled curve."""
    pts, _ = as_points(x)
    if cfg.method == "rk45":
        end, _, t0 = backward_sweep(scaled, pts[:1], cfg)
        return CharCurve(np.array([0.0, t0[0]]), np.vstack([pts[:1], end]), "backward", anchor_x=pts[0])
    end, _, t0, hist = backward_sweep(scaled, pts[:1], cfg, record=True)
    n = len(hist) - 1
    tau = t0[0] * np.arange(n + 1) / max(n, 1)
    return CharCurve(tau, np.vstack([h[0] for h in hist]), "backward", anchor_x=pts[0])


# ---------------------------------------------------------------------------
# boundary parameters and determinants


def boundary_parameter_of(gamma, p, tol=None, n_samples=1024):
    """Parameter s minimising |gamma(s) - p|; coarse sampling then Newton."""
    pts, single = as_points(p)
    s_grid, g_pts = gamma.samples(n_samples)
    diam = float(np.max(np.ptp(g_pts, axis=0)))
    tol = 1e-5 * diam if tol is None else tol
    s = np.empty(len(pts))
    for lo in range(0, len(pts), 4096):
        chunk = pts[lo : lo + 4096]
        d2 = np.sum((chunk[:, None, :] - g_pts[None, :, :]) ** 2, axis=2)
        s[lo : lo + 4096] = s_grid[np.argmin(d2, axis=1)]
    e = 1e-6
    for _ in range(30):
        g = gamma(s)
        d1 = gamma.tangent(s)
        d2 = (gamma.tangent(s + e) - gamma.tangent(s - e)) / (2 * e)
        num = np.einsum("ij,ij->i", g - pts, d1)
        den = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", g - pts, d2)
        step = num / np.where(den > 0, den, np.einsum("ij,ij->i", d1, d1))
        s = s - step
        if np.max(np.abs(step)) < 1e-15:
            break
    dist = np.linalg.norm(gamma(s) - pts, axis=1)
    if np.any(dist > tol):
        raise GeometryInconsistencyError(f"point is {dist.max():.3g} away from the boundary (tol {tol:.3g})")
    s = gamma.wrap(s)
    return s[0] if single else s


def jacobian_determinant(scaled, gamma, t, s, cfg):
    """det D xi(t, s), orientation-corrected.

    d xi/dt is c0(xi) exactly; d xi/ds comes from central differences of
    neighbouring forward traces.  The sign is fixed so that the determinant
    is positive for a non-crossing characteristic chart; a nonpositive
    value raises.
    """
    T, S = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    d = cfg.fd_step
    su, s_inv = np.unique(S.ravel(), return_inverse=True)
    nsu = len(su)
    t_eval = np.unique(T.ravel())
    seeds = np.concatenate([su, su + d, su - d])
    pos = trace_forward_many(scaled, gamma, seeds, t_eval, cfg)
    it = np.searchsorted(t_eval, T.ravel())
    sidx = s_inv.ravel()
    dxds = (pos[it, sidx + nsu] - pos[it, sidx + 2 * nsu]) / (2 * d)
    dxdt, _ = scaled(pos[it, sidx])
    tt = T.ravel()
    sign = -gamma.orientation()
    det = sign * (dxdt[:, 0] * dxds[:, 1] - dxdt[:, 1] * dxds[:, 0])
    if np.any(det <= 0):
        k = int(np.argmin(det))
        raise CharacteristicCrossingError(
            f"nonpositive det D xi = {det[k]:.3g} at t={tt[k]:.4g}, s={S.ravel()[k]:.4g}"
        )
    return det.reshape(T.shape)
