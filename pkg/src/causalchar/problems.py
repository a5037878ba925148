"""Problem bundles and the built-in presets used by the CLI and the experiments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .characteristics import IntegratorConfig
from .fields import (
    AcausalField,
    BoundaryData,
    LinearRHS,
    PastIntegralField,
    constant_rhs,
    normal_transport,
    rotated_transport,
)
from .geometry import DomainSpec, ellipse, estimate_dn_l1, m0_estimate, unit_disk
from .grid import make_grid
from .linear_solver import compute_self_map_bounds


@dataclass(eq=False)
class Problem:
    """Domain, coefficients and boundary data on a fixed grid.

    ``f=None`` means f = 0.  ``exact`` is a closed-form solution when known.
    """

    name: str
    domain: DomainSpec
    c: object
    f: Optional[object]
    u0: BoundaryData
    grid: object
    cfg: IntegratorConfig = field(default_factory=IntegratorConfig)
    M1: float = 0.0
    exact: Optional[Callable] = None

    @property
    def functional(self):
        return bool(getattr(self.c, "depends_on_v", False) or getattr(self.f, "depends_on_v", False))

    @property
    def beta(self):
        return self.c.beta

    @property
    def L1(self):
        return float(getattr(self.c, "lipschitz", 0.0))

    @property
    def L2(self):
        return float(getattr(self.f, "lipschitz", 0.0)) if self.f is not None else 0.0

    @property
    def M2(self):
        return self.f.M2 if self.f is not None else 0.0

    @property
    def M3(self):
        return self.f.M3 if self.f is not None else 0.0

    @property
    def m0(self):
        if self.domain.m0 is not None:
            return self.domain.m0
        return m0_estimate(self.domain.time, self.grid)

    @property
    def dn_l1(self):
        if self.domain.dn_l1 is not None:
            return self.domain.dn_l1
        return estimate_dn_l1(self.domain)

    def self_map_bounds(self):
        return compute_self_map_bounds(
            self.M1, self.M2, self.M3, self.u0.M4, self.u0.M5, self.beta, self.m0,
            self.domain.area, self.domain.sigma_length, self.dn_l1,
        )

    def default_tol(self):
        return 1e-8 * self.self_map_bounds().M_star


def _angle(p):
    return np.arctan2(p[:, 1], p[:, 0])


def manufactured_g(p):
    """Smooth test solution on the disk."""
    x, y = p[:, 0], p[:, 1]
    return np.sin(1.3 * x) + 0.5 * np.cos(2.0 * y) + 0.3 * x * y


def manufactured_grad(p):
    x, y = p[:, 0], p[:, 1]
    return np.column_stack([1.3 * np.cos(1.3 * x) + 0.3 * y, -np.sin(2.0 * y) + 0.3 * x])


def manufactured_problem(n=64, angle=0.3, dt=None, q=4.0):
    """Rotated-normal transport on the disk with f = <c, grad g> and u0 = g on the boundary."""
    domain = unit_disk(q)
    c = rotated_transport(domain.time, angle)

    def f(p):
        return np.sum(c(p) * manufactured_grad(p), axis=1)

    # |f| <= |grad g|, and |grad g| <= sqrt((1.3+0.3)^2 + (1+0.3)^2) on the unit disk
    bound = math.hypot(1.6, 1.3)
    rhs = LinearRHS(f, bound, 0.0, "manufactured")
    u0 = BoundaryData(lambda s: manufactured_g(np.column_stack([np.cos(s), np.sin(s)])))
    cfg = IntegratorConfig(dt=dt if dt is not None else 0.064 / n)
    return Problem("disk-manufactured", domain, c, rhs, u0, make_grid(domain, n), cfg, exact=manufactured_g)


def _disk_radial_f0(n):
    d = unit_disk()
    return Problem("disk-radial-f0", d, normal_transport(d.time), None, BoundaryData.cosine(),
                   make_grid(d, n), exact=lambda p: np.cos(_angle(p)))


def _disk_radial_f1(n):
    d = unit_disk()
    return Problem("disk-radial-f1", d, normal_transport(d.time), constant_rhs(1.0), BoundaryData.constant(0.0),
                   make_grid(d, n), exact=lambda p: 1.0 - np.hypot(p[:, 0], p[:, 1]))


def _disk_beta_violating(n):
    d = unit_disk()
    # cos(1.2) ~ 0.36 falls short of the declared bound
    c = rotated_transport(d.time, 1.2, beta=0.5)
    return Problem("disk-beta-violating", d, c, None, BoundaryData.cosine(), make_grid(d, n))


def _disk_causal(n, eps=0.1):
    d = unit_disk()
    g = make_grid(d, n)
    return Problem(f"disk-causal-eps{eps:g}", d, PastIntegralField(d.time, g, eps=eps), None,
                   BoundaryData.cosine(1.0, 0.5), g, IntegratorConfig(dt=1e-2))


def _disk_acausal(n):
    d = unit_disk()
    g = make_grid(d, n)
    return Problem("disk-acausal", d, AcausalField(d.time, g, eps=0.1), None,
                   BoundaryData.cosine(1.0, 0.5), g, IntegratorConfig(dt=1e-2))


def _ellipse_normal(n):
    d = ellipse()
    return Problem("ellipse-normal", d, normal_transport(d.time), None, BoundaryData.cosine(), make_grid(d, n))


PRESETS = {
    "disk-radial-f0": _disk_radial_f0,
    "disk-radial-f1": _disk_radial_f1,
    "disk-manufactured": manufactured_problem,
    "disk-beta-violating": _disk_beta_violating,
    "disk-causal-eps0.1": _disk_causal,
    "disk-acausal": _disk_acausal,
    "ellipse-normal": _ellipse_normal,
}


def load_preset(name, n=128):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
    return factory(n)
