"""Linear solution operator: u(x) = u0(eta(T0(x), x)) + int_0^T0(x) f0(eta(tau, x)) dtau."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .characteristics import IntegratorConfig, ScaledField, backward_sweep, trace_forward_many
from .errors import CausalityViolationError, InvalidBoundsError
from .fields import audit_causality_condition
from .grid import COLLAR, INTERIOR, ScalarGridField, field_norms, nearest_fill

__all__ = [
    "SelfMapBounds",
    "compute_self_map_bounds",
    "evaluate_solution",
    "field_norms",
    "fill_collar",
    "solve_in_characteristic_coordinates",
    "solve_linear",
]


def evaluate_solution(domain, c, f, u0, points, cfg: IntegratorConfig, threads=1):
    """Solution of the linear problem with frozen coefficients at arbitrary points.

    ``c`` and ``f`` must be linear (already frozen); ``f=None`` means f = 0.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    scaled = ScaledField(domain.time, c, f)
    with_f = f is not None

    def run(chunk):
        end, integ, _ = backward_sweep(scaled, chunk, cfg, with_f=with_f)
        return u0.at_points(end, domain.boundary, tol=10 * domain.tau_bd) + integ

    if threads <= 1 or len(pts) < 2 * threads:
        return run(pts)
    chunks = np.array_split(pts, threads)
    with ThreadPoolExecutor(max_workers=threads) as ex:
        parts = list(ex.map(run, chunks))
    return np.concatenate(parts)


def fill_collar(u: ScalarGridField, solved):
    """Give every unsolved non-exterior cell the value of the nearest solved cell."""
    targets = (u.mask != 0) & ~solved
    return u.with_values(nearest_fill(u.values, solved, targets))


def solve_linear(domain, c, f, u0, grid: ScalarGridField, cfg: IntegratorConfig = None, threads=1, audit=True):
    """Solve on every interior cell centre of ``grid``; the stop-set collar is filled afterwards.

    Functional coefficients must be frozen by the caller.  With ``audit``
    the unit-speed and beta conditions are checked on the interior cells
    first and a CausalityViolationError is raised on failure.
    """
    cfg = cfg or IntegratorConfig()
    if audit:
        rep = audit_causality_condition(c, domain.time, grid)
        if not rep.ok:
            raise CausalityViolationError(
                f"transport field fails its audit: min <c,N> = {rep.min_dot:.4g} < beta = {rep.beta:.4g} "
                f"or speed error {rep.max_speed_error:.3g}"
            )
    inner = grid.interior
    vals = np.zeros(grid.shape)
    vals[inner] = evaluate_solution(domain, c, f, u0, grid.centers()[inner], cfg, threads)
    u = grid.with_values(vals)
    return fill_collar(u, inner)


def solve_in_characteristic_coordinates(domain, c, f, u0, t, s, cfg: IntegratorConfig = None):
    """v(t, s) = u0(s) + int_0^t f0(xi(tau, s)) dtau on the lattice t x s; shape (len(t), len(s))."""
    cfg = cfg or IntegratorConfig()
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    scaled = ScaledField(domain.time, c, f)
    _, integ = trace_forward_many(scaled, domain.boundary, s, t, cfg, with_f=True)
    return u0(s)[None, :] + integ


@dataclass(frozen=True)
class SelfMapBounds:
    M_star: float
    M_star_star: float
    inputs: dict


def compute_self_map_bounds(M1, M2, M3, M4, M5, beta, m0, area, sigma_length, dn_l1):
    """Radii of the BV ball the solution operator maps into.

    M*  = (M4 + M2/(beta m0)) |Omega|
    M** = 2 (M4 + M2/(beta m0)) H1(Sigma) + M5/(beta m0)
          + (M2/beta + M3/(beta^2 m0)) |Omega| + M2/(beta^3 m0) (M1 + ||DN||_L1)
    """
    inputs = dict(M1=M1, M2=M2, M3=M3, M4=M4, M5=M5, beta=beta, m0=m0, area=area,
                  sigma_length=sigma_length, dn_l1=dn_l1)
    for k, val in inputs.items():
        if val is None or not np.isfinite(val) or val < 0:
            raise InvalidBoundsError(f"{k} must be a finite nonnegative number, got {val}")
    if not 0 < beta <= 1:
        raise InvalidBoundsError(f"beta must lie in (0, 1], got {beta}")
    if not m0 > 0 or not area > 0:
        raise InvalidBoundsError("m0 and area must be positive")
    head = M4 + M2 / (beta * m0)
    m_star = head * area
    m_star_star = (
        2.0 * head * sigma_length
        + M5 / (beta * m0)
        + (M2 / beta + M3 / (beta**2 * m0)) * area
        + M2 / (beta**3 * m0) * (M1 + dn_l1)
    )
    return SelfMapBounds(m_star, m_star_star, inputs)
