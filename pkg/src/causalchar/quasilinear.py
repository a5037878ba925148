"""Fixed-point solution of the quasi-linear problem by causal stripe marching.

The domain is cut into T0-stripes [l h, (l+1) h).  Because the solution
operator U is functionally causal, the values on earlier stripes are final
once computed, and each stripe is iterated v <- U[v] on its own cells until
the L1 update over the stripe drops below ``tol``.
"""
from __future__ import annotations

import csv
import logging
import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .characteristics import IntegratorConfig, ScaledField, jacobian_determinant
from .errors import (
    CausalityViolationError,
    CharacteristicCrossingError,
    ContractionFailureError,
    DegeneratePairError,
)
from .fields import audit_causality_condition
from .grid import COLLAR, ScalarGridField, nearest_fill
from .linear_solver import evaluate_solution, fill_collar, solve_linear

log = logging.getLogger(__name__)

H_MIN = 0.05


@dataclass(frozen=True)
class StripePlan:
    lam_max: float
    h: float
    kappa: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.lam_max < 1:
            raise ValueError(f"lam_max must lie in (0, 1), got {self.lam_max}")
        if not self.h > 0:
            raise ValueError("stripe thickness must be positive")

    @property
    def L(self):
        return int(math.floor(self.lam_max / self.h + 1e-12))

    @property
    def final_thickness(self):
        return max(0.0, self.lam_max - self.L * self.h)

    @property
    def contraction_guaranteed(self):
        return self.kappa is not None and self.h * self.kappa < 1

    def stripes(self):
        out = []
        for l in range(self.L + 1):
            lo = l * self.h
            hi = min((l + 1) * self.h, self.lam_max)
            if self.lam_max - hi < 1e-12:
                hi = self.lam_max
            if hi - lo > 1e-12:
                out.append((lo, hi))
        return out

    @classmethod
    def from_kappa(cls, lam_max, kappa, h_min=H_MIN, safety=0.5):
        """h = safety / kappa, falling back to h_min when that is impractically thin."""
        h = safety / kappa if kappa > 0 else lam_max
        if h < h_min:
            warnings.warn(
                f"plug-in kappa={kappa:.3g} asks for h={h:.3g}; using h_min={h_min} and iterating to tolerance",
                stacklevel=2,
            )
            h = h_min
        return cls(lam_max, min(h, lam_max), kappa)


@dataclass(frozen=True)
class ContractionConstants:
    k: float
    K: float
    C: float
    kappa: float
    beta: float
    m0: float
    L1: float
    L2: float
    M_star_star: float
    area: float
    lam: float


def compute_contraction_constants(det_samples, beta, m0, L1, L2, M_star_star, area, lam):
    """k, K from determinant samples; C = K/(beta m0 k); kappa = C (L2 |Omega| + L1 M**)."""
    det = np.asarray(det_samples, dtype=float).ravel()
    if not lam < 1:
        raise ValueError("lam must be below 1")
    if det.size == 0 or np.any(det <= 0):
        raise CharacteristicCrossingError("nonpositive determinant sample")
    k, K = float(det.min()), float(det.max())
    C = K / (beta * m0 * k)
    kappa = C * (L2 * area + L1 * M_star_star)
    return ContractionConstants(k, K, C, kappa, beta, m0, L1, L2, M_star_star, area, lam)


def determinant_samples(domain, c, vs, lam, cfg, nt=11, ns=32):
    """det D xi[v] on [0, lam] x period for each frozen v in ``vs``; array (len(vs), nt, ns)."""
    a, b = domain.boundary.period
    t = np.linspace(0.0, lam, nt)
    s = a + cfg.cut + (b - a) * np.arange(ns) / ns
    out = []
    for v in vs:
        scaled = ScaledField(domain.time, c.freeze(v))
        out.append(jacobian_determinant(scaled, domain.boundary, t[:, None], s[None, :], cfg))
    return np.array(out)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class StripeRecord:
    index: int
    lo: float
    hi: float
    n_cells: int
    updates: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.updates)

    @property
    def ratios(self):
        u = self.updates
        return [u[k] / u[k - 1] if u[k - 1] > 0 else 0.0 for k in range(1, len(u))]

    @property
    def measured_ratio(self):
        r = self.ratios
        return max(r) if r else float("nan")

    @property
    def final_update(self):
        return self.updates[-1] if self.updates else 0.0


@dataclass
class SolveDiagnostics:
    mode: str
    tol: float
    lam_max: float
    h: float
    kappa: Optional[float]
    stripes: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def total_iterations(self):
        return sum(s.iterations for s in self.stripes)

    def rows(self):
        for s in self.stripes:
            ratios = [float("nan")] + s.ratios
            for it, (upd, r) in enumerate(zip(s.updates, ratios), start=1):
                yield s.index, it, upd, r

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stripe", "iteration", "update", "ratio"])
            for l, it, upd, r in self.rows():
                w.writerow([l, it, f"{upd:.12e}", "" if math.isnan(r) else f"{r:.12e}"])


# ---------------------------------------------------------------------------
# solvers


def _frozen_rhs(f, v):
    return None if f is None else f.freeze(v)


def apply_operator(domain, c, f, u0, v, cells, cfg, threads=1):
    """U[v] at the centres of the selected cells."""
    pts = v.centers()[cells]
    return evaluate_solution(domain, c.freeze(v), _frozen_rhs(f, v), u0, pts, cfg, threads)


def _depends_on_v(c, f):
    return bool(getattr(c, "depends_on_v", False) or (f is not None and getattr(f, "depends_on_v", False)))


def _check_causal(domain, c, f, grid, probe):
    for coef in (c, f):
        if coef is not None and not getattr(coef, "causal", True):
            raise CausalityViolationError(f"{getattr(coef, 'name', coef)} is not functionally causal")
    rep = audit_causality_condition(c, domain.time, grid, v=probe)
    if not rep.ok:
        raise CausalityViolationError(
            f"transport field fails its audit: min <c,N> = {rep.min_dot:.4g} (beta {rep.beta:.4g})"
        )


def _linear_shortcut(domain, c, f, u0, grid, cfg, threads, init, bounds, mode, tol, lam_max, h, kappa, t_start):
    """v-independent coefficients: U is constant, one application is the fixed point."""
    u = solve_linear(domain, c.freeze(None), _frozen_rhs(f, None), u0, grid, cfg, threads, audit=False)
    t0 = domain.time.cell_t0(grid.bbox, grid.shape)
    start = np.zeros(grid.shape) if init is None else init.values
    diag = SolveDiagnostics(mode, tol, lam_max, h, kappa)
    for l, (lo, hi) in enumerate(bounds):
        cells = grid.interior & (t0 >= lo) & (t0 < hi)
        upd = float(np.sum(np.abs(u.values[cells] - start[cells])) * grid.cell_area)
        diag.stripes.append(StripeRecord(l, lo, hi, int(cells.sum()), [upd]))
    diag.wall_time = _time.perf_counter() - t_start
    return u, diag


def solve_quasilinear(domain, c, f, u0, grid: ScalarGridField, plan: StripePlan, tol, cfg=None,
                      init: Optional[ScalarGridField] = None, max_iter=200, threads=1, audit=True):
    """March the stripes of ``plan`` in causal order; returns (u, diagnostics).

    ``init`` seeds each stripe's Picard iteration; without it each stripe
    starts from the nearest already-final values (constant extension).
    """
    cfg = cfg or IntegratorConfig()
    if not tol > 0:
        raise ValueError("tol must be positive")
    t_start = _time.perf_counter()
    zero = grid.constant(0.0)
    if audit:
        _check_causal(domain, c, f, grid, init if init is not None else zero)
    bounds = plan.stripes()
    if not _depends_on_v(c, f):
        return _linear_shortcut(domain, c, f, u0, grid, cfg, threads, init, bounds, "stripes",
                                tol, plan.lam_max, plan.h, plan.kappa, t_start)
    t0 = domain.time.cell_t0(grid.bbox, grid.shape)
    inner = grid.interior
    active = inner & (t0 < plan.lam_max)
    v = zero if init is None else init.copy()
    solved = np.zeros(grid.shape, dtype=bool)
    diag = SolveDiagnostics("stripes", tol, plan.lam_max, plan.h, plan.kappa)
    area = grid.cell_area
    for l, (lo, hi) in enumerate(bounds):
        cells = active & (t0 >= lo) & (t0 < hi)
        rec = StripeRecord(l, lo, hi, int(cells.sum()))
        diag.stripes.append(rec)
        if not cells.any():
            continue
        if init is None and solved.any():
            v.values[:] = nearest_fill(v.values, solved, cells)
        for _ in range(max_iter):
            new = apply_operator(domain, c, f, u0, v, cells, cfg, threads)
            upd = float(np.sum(np.abs(new - v.values[cells])) * area)
            v.values[cells] = new
            rec.updates.append(upd)
            if upd <= tol:
                break
        else:
            raise ContractionFailureError(
                f"stripe {l} [{lo:.3f}, {hi:.3f}) not converged after {max_iter} iterations "
                f"(update {rec.final_update:.3g}, ratio {rec.measured_ratio:.3g})",
                ratio=rec.measured_ratio, stripe=l,
            )
        solved |= cells
        log.debug("stripe %d: %d iterations, update %.3g", l, rec.iterations, rec.final_update)
    mask = grid.mask.copy()
    mask[inner & ~active] = COLLAR
    u = fill_collar(ScalarGridField(grid.bbox, v.values, mask), solved)
    diag.wall_time = _time.perf_counter() - t_start
    return u, diag


def global_picard_solve(domain, c, f, u0, grid: ScalarGridField, tol, cfg=None, lam_max=None,
                        init: Optional[ScalarGridField] = None, max_iter=500, threads=1, audit=True):
    """Whole-domain iteration u <- U[u] on Omega_{lam_max}, without stripes."""
    cfg = cfg or IntegratorConfig()
    lam_max = 1.0 - cfg.eps_stop if lam_max is None else lam_max
    if not tol > 0:
        raise ValueError("tol must be positive")
    t_start = _time.perf_counter()
    zero = grid.constant(0.0)
    if audit:
        _check_causal(domain, c, f, grid, init if init is not None else zero)
    if not _depends_on_v(c, f):
        return _linear_shortcut(domain, c, f, u0, grid, cfg, threads, init, [(0.0, lam_max)], "global",
                                tol, lam_max, lam_max, None, t_start)
    t0 = domain.time.cell_t0(grid.bbox, grid.shape)
    inner = grid.interior
    cells = inner & (t0 < lam_max)
    v = zero if init is None else init.copy()
    rec = StripeRecord(0, 0.0, lam_max, int(cells.sum()))
    diag = SolveDiagnostics("global", tol, lam_max, lam_max, None, [rec])
    for _ in range(max_iter):
        new = apply_operator(domain, c, f, u0, v, cells, cfg, threads)
        upd = float(np.sum(np.abs(new - v.values[cells])) * grid.cell_area)
        v.values[cells] = new
        rec.updates.append(upd)
        if upd <= tol:
            break
    else:
        raise ContractionFailureError(
            f"global Picard iteration not converged after {max_iter} iterations", ratio=rec.measured_ratio
        )
    mask = grid.mask.copy()
    mask[inner & ~cells] = COLLAR
    u = fill_collar(ScalarGridField(grid.bbox, v.values, mask), cells)
    diag.wall_time = _time.perf_counter() - t_start
    return u, diag


def measure_operator_lipschitz(domain, c, f, u0, v1, v2, lam, cfg=None, threads=1):
    """||U[v1] - U[v2]||_L1(Omega_lam) / ||v1 - v2||_L1(Omega_lam) from two linear solves."""
    cfg = cfg or IntegratorConfig()
    t0 = domain.time.cell_t0(v1.bbox, v1.shape)
    cells = v1.interior & (t0 < lam)
    den = float(np.sum(np.abs(v1.values[cells] - v2.values[cells])) * v1.cell_area)
    if den == 0:
        raise DegeneratePairError("v1 and v2 agree on Omega_lam")
    if not _depends_on_v(c, f):
        return 0.0
    a = apply_operator(domain, c, f, u0, v1, cells, cfg, threads)
    b = apply_operator(domain, c, f, u0, v2, cells, cfg, threads)
    return float(np.sum(np.abs(a - b)) * v1.cell_area) / den
