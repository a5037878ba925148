"""Transport fields, right-hand sides, boundary data and their audits.

Linear coefficients are plain callables on (n, 2) point arrays.  Functional
coefficients take a grid field ``v`` as well; ``freeze(v)`` turns them into
the linear coefficient used by one linear solve.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CausalityViolationError, DegeneratePairError
from .geometry import as_points, grad_transformed_time, unit_normal
from .grid import ScalarGridField, mask_past

AUDIT_TOL = 1e-9


def _perp(v):
    return np.column_stack([-v[:, 1], v[:, 0]])


# ---------------------------------------------------------------------------
# linear coefficients


class LinearTransportField:
    """Unit transport field c(x) with a declared causality bound beta."""

    depends_on_v = False
    causal = True
    lipschitz = 0.0

    def __init__(self, func, beta, name="field"):
        if not 0 < beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {beta}")
        self.func = func
        self.beta = float(beta)
        self.name = name

    def __call__(self, pts):
        return self.func(pts)

    def freeze(self, v=None):
        return self


class LinearRHS:
    """Right-hand side f(x) with sup bound M2 and gradient bound M3."""

    depends_on_v = False
    causal = True
    lipschitz = 0.0

    def __init__(self, func, M2, M3=0.0, name="rhs"):
        self.func = func
        self.M2 = float(M2)
        self.M3 = float(M3)
        self.name = name

    def __call__(self, pts):
        return self.func(pts)

    def freeze(self, v=None):
        return self


def normal_transport(time, beta=1.0):
    """c = N, the unit normal of the level lines of T."""
    return LinearTransportField(lambda p: unit_normal(time, p), beta, "normal")


def rotated_transport(time, angle, beta=None):
    """N rotated by a constant angle (radians); beta defaults to cos(angle)."""
    ca, sa = math.cos(angle), math.sin(angle)

    def func(p):
        n = unit_normal(time, p)
        return ca * n + sa * _perp(n)

    return LinearTransportField(func, math.cos(angle) if beta is None else beta, f"rotated({angle:g})")


def constant_rhs(value):
    value = float(value)
    return LinearRHS(lambda p: np.full(len(p), value), abs(value), 0.0, f"const({value:g})")


def zero_rhs():
    return constant_rhs(0.0)


# ---------------------------------------------------------------------------
# functional coefficients


class PastIntegral:
    """G[v](lam) = sum over cells z with T0(z) < lam of v(z) |z| min((lam - T0(z))/width, 1).

    The ramp keeps G continuous in lam while reading only cells strictly in
    the past, so G[v](T0(x)) is exactly causal.  |G[v] - G[w]| <= ||v - w||_L1.
    """

    def __init__(self, time, template: ScalarGridField, width=0.02):
        self.time = time
        self.bbox = template.bbox
        self.shape = template.shape
        self.width = float(width)
        self.cell_area = template.cell_area
        t0 = time.cell_t0(template.bbox, template.shape)
        flat = np.flatnonzero(template.interior.ravel())
        order = np.argsort(t0.ravel()[flat], kind="stable")
        self.index = flat[order]
        self.sorted_t = t0.ravel()[self.index]

    def prepare(self, v: ScalarGridField):
        if v.bbox != self.bbox or v.shape != self.shape:
            raise ValueError("functional argument lives on a different grid")
        vals = v.values.ravel()[self.index] * self.cell_area
        s0 = np.concatenate([[0.0], np.cumsum(vals)])
        s1 = np.concatenate([[0.0], np.cumsum(vals * self.sorted_t)])
        return s0, s1

    def past(self, sums, lam):
        s0, s1 = sums
        i = np.searchsorted(self.sorted_t, lam - self.width, side="right")
        j = np.searchsorted(self.sorted_t, lam, side="left")
        return s0[i] + (lam * (s0[j] - s0[i]) - (s1[j] - s1[i])) / self.width

    def future(self, sums, lam):
        s0, _ = sums
        k = np.searchsorted(self.sorted_t, lam, side="right")
        return s0[-1] - s0[k]


class FunctionalTransportField:
    """Base class: subclasses implement ``freeze(v)``."""

    depends_on_v = True
    causal = True

    def __init__(self, beta, lipschitz, M1=0.0, name="functional"):
        self.beta = float(beta)
        self.lipschitz = float(lipschitz)
        self.M1 = float(M1)
        self.name = name

    def freeze(self, v):
        raise NotImplementedError

    def __call__(self, v, pts):
        return self.freeze(v)(pts)


class ConstantFunctionalField(FunctionalTransportField):
    """Functional wrapper around a linear field; freezing returns the field itself."""

    depends_on_v = False

    def __init__(self, linear: LinearTransportField):
        super().__init__(linear.beta, 0.0, name=f"const[{linear.name}]")
        self.linear = linear

    def freeze(self, v=None):
        return self.linear


class PastIntegralField(FunctionalTransportField):
    """c[v](x) = normalize(c_b(x) + eps tanh(gain G[v](T0(x))) c_b(x)^perp).

    With c_b = N this is the built-in causal test field: beta =
    1/sqrt(1 + eps^2) and L1 = eps * gain.
    """

    def __init__(self, time, template, eps=0.1, gain=1.0, width=0.02, base=None, M1=0.0):
        base = normal_transport(time) if base is None else base
        sb = math.sqrt(max(0.0, 1.0 - base.beta**2))
        beta = (base.beta - eps * sb) / math.sqrt(1.0 + eps**2)
        if beta <= 0:
            raise CausalityViolationError("eps too large for the base field's causality bound")
        super().__init__(beta, eps * gain, M1, name=f"past-integral(eps={eps:g})")
        self.time = time
        self.base = base
        self.eps = float(eps)
        self.gain = float(gain)
        self.integral = PastIntegral(time, template, width)

    def _combine(self, pts, g):
        cb = self.base(pts)
        a = self.eps * np.tanh(self.gain * g)
        c = cb + a[:, None] * _perp(cb)
        return c / np.sqrt(1.0 + a * a)[:, None]

    def freeze(self, v):
        sums = self.integral.prepare(v)

        def func(pts):
            return self._combine(pts, self.integral.past(sums, self.time.T0(pts)))

        return LinearTransportField(func, self.beta, self.name)


class AcausalField(PastIntegralField):
    """Counterexample: like PastIntegralField but reading v in the future of x."""

    causal = False

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.name = f"acausal(eps={self.eps:g})"

    def freeze(self, v):
        sums = self.integral.prepare(v)

        def func(pts):
            return self._combine(pts, self.integral.future(sums, self.time.T0(pts)))

        return LinearTransportField(func, self.beta, "acausal")


class FunctionalRHS:
    depends_on_v = True
    causal = True

    def __init__(self, M2, M3, lipschitz, name="functional-rhs"):
        self.M2 = float(M2)
        self.M3 = float(M3)
        self.lipschitz = float(lipschitz)
        self.name = name

    def __call__(self, v, pts):
        return self.freeze(v)(pts)


class PastIntegralRHS(FunctionalRHS):
    """f[v](x) = f_b(x) + mu tanh(gain G[v](T0(x))); L2 = mu * gain.

    M3 is declared, not derived: the x-derivative of G depends on v.
    """

    def __init__(self, time, template, mu, gain=1.0, width=0.02, base=None, M3=0.0):
        base = zero_rhs() if base is None else base
        super().__init__(base.M2 + abs(mu), base.M3 + M3, abs(mu) * gain, f"past-integral-rhs(mu={mu:g})")
        self.time = time
        self.base = base
        self.mu = float(mu)
        self.gain = float(gain)
        self.integral = PastIntegral(time, template, width)

    def freeze(self, v):
        sums = self.integral.prepare(v)

        def func(pts):
            g = self.integral.past(sums, self.time.T0(pts))
            return self.base(pts) + self.mu * np.tanh(self.gain * g)

        return LinearRHS(func, self.M2, self.M3, self.name)


# ---------------------------------------------------------------------------
# boundary data


class BoundaryData:
    """Pull-back s -> u0(gamma(s)) with sup bound M4 and variation bound M5.

    ``breakpoints`` lists jump parameters; evaluating exactly at one returns
    the midpoint of the one-sided limits.  ``point_func`` evaluates directly
    at boundary points (raster domains without a parametrization).
    """

    def __init__(self, func=None, M4=None, M5=None, period=(0.0, 2 * math.pi), breakpoints=(), point_func=None):
        if func is None and point_func is None:
            raise ValueError("boundary data needs func or point_func")
        self.func = func
        self.point_func = point_func
        self.period = period
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        if func is not None and (M4 is None or M5 is None):
            sup, tv = self.measure()
            M4 = sup if M4 is None else M4
            M5 = tv if M5 is None else M5
        self.M4 = float(M4) if M4 is not None else float("nan")
        self.M5 = float(M5) if M5 is not None else float("nan")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        a, b = self.period
        sw = a + np.mod(s - a, b - a)
        out = np.asarray(self.func(sw), dtype=float)
        if self.breakpoints.size:
            hit = np.isin(sw, self.breakpoints)
            if np.any(hit):
                d = 1e-9 * (b - a)
                out = np.where(hit, 0.5 * (self.func(sw + d) + self.func(sw - d)), out)
        return out

    def at_points(self, pts, curve=None, tol=None):
        if self.point_func is not None:
            return self.point_func(pts)
        from .characteristics import boundary_parameter_of

        return self(boundary_parameter_of(curve, pts, tol=tol))

    def measure(self, n=8192):
        """Sup and discrete total variation over one period."""
        a, b = self.period
        s = a + (b - a) * np.arange(n + 1) / n
        vals = np.asarray(self.func(np.minimum(s, np.nextafter(b, a))), dtype=float)
        return float(np.max(np.abs(vals))), float(np.sum(np.abs(np.diff(vals))))

    def audit(self, n=8192):
        sup, tv = self.measure(n)
        return {"sup": sup, "tv": tv, "sup_ok": sup <= self.M4 + 1e-12, "tv_ok": tv <= self.M5 + 1e-9}

    @classmethod
    def constant(cls, value):
        value = float(value)
        return cls(lambda s: np.full(np.shape(s), value), abs(value), 0.0)

    @classmethod
    def cosine(cls, offset=0.0, amplitude=1.0, freq=1):
        return cls(
            lambda s: offset + amplitude * np.cos(freq * s),
            abs(offset) + abs(amplitude),
            4.0 * abs(amplitude) * freq,
        )

    @classmethod
    def piecewise(cls, breakpoints, values, period=(0.0, 2 * math.pi)):
        """Piecewise constant data: ``values[k]`` on [breakpoints[k], breakpoints[k+1])."""
        bp = np.asarray(breakpoints, dtype=float)
        vals = np.asarray(values, dtype=float)

        def func(s):
            k = np.searchsorted(bp, s, side="right") - 1
            return vals[np.mod(k, len(vals))]

        cyc = np.append(vals, vals[0])
        return cls(func, float(np.max(np.abs(vals))), float(np.sum(np.abs(np.diff(cyc)))), period, bp)


# ---------------------------------------------------------------------------
# scaled coefficients and audits


def scale_by_time(c, f, time, x, v=None):
    """(c0, f0) = (c, f) / <c, grad T0> at x."""
    pts, single = as_points(x)
    g = grad_transformed_time(time, pts)
    cv = c.freeze(v)(pts)
    den = np.sum(cv * g, axis=1)
    if np.any(den <= 0):
        raise CausalityViolationError("<c, grad T0> is not positive")
    c0 = cv / den[:, None]
    f0 = (f.freeze(v)(pts) / den) if f is not None else np.zeros(len(pts))
    return (c0[0], f0[0]) if single else (c0, f0)


@dataclass
class CausalityReport:
    min_dot: float
    max_dot: float
    max_speed_error: float
    beta: float
    points: np.ndarray = field(repr=False)
    dots: np.ndarray = field(repr=False)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations and self.max_speed_error <= AUDIT_TOL

    def to_csv(self, path):
        lo, hi = self.beta - AUDIT_TOL, 1.0 + AUDIT_TOL
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "dot", "violation"])
            for (px, py), d in zip(self.points, self.dots):
                w.writerow([f"{px:.12g}", f"{py:.12g}", f"{d:.12g}", int(not lo <= d <= hi)])


def _audit_points(sample_grid):
    if hasattr(sample_grid, "interior_centers"):
        return sample_grid.interior_centers()
    return as_points(sample_grid)[0]


def audit_causality_condition(c, time, sample_grid, v=None, beta=None):
    """Check beta <= <c, N> <= 1 and |c| = 1 at the sample points (report only)."""
    pts = _audit_points(sample_grid)
    pts = pts[time.T0(pts) <= 1.0 - time.eps_stop]
    frozen = c.freeze(v)
    beta = frozen.beta if beta is None else beta
    cv = frozen(pts)
    dots = np.sum(cv * unit_normal(time, pts), axis=1)
    speed_err = float(np.max(np.abs(np.linalg.norm(cv, axis=1) - 1.0))) if len(pts) else 0.0
    bad = (dots < beta - AUDIT_TOL) | (dots > 1.0 + AUDIT_TOL)
    violations = [(float(p[0]), float(p[1]), float(d)) for p, d in zip(pts[bad], dots[bad])]
    return CausalityReport(
        float(dots.min()), float(dots.max()), speed_err, beta, pts, dots, violations
    )


@dataclass
class FunctionalCausalityReport:
    max_discrepancy: float
    discrepancies: np.ndarray

    @property
    def ok(self):
        return self.max_discrepancy == 0.0


def audit_functional_causality(F, v, probes, time):
    """Compare F[v](x) with F[v masked to the past of x](x) at every probe.

    Both sides are evaluated on the single probe so that the arithmetic is
    identical; honest causal operators give exactly zero.
    """
    pts = as_points(probes)[0]
    out = np.zeros(len(pts))
    full = F.freeze(v)
    for i, p in enumerate(pts):
        p1 = p[None, :]
        lam = time.T0(p1)[0]
        a = np.atleast_1d(full(p1))
        b = np.atleast_1d(F.freeze(mask_past(v, time, lam))(p1))
        out[i] = float(np.max(np.abs(a - b)))
    return FunctionalCausalityReport(float(out.max()) if len(out) else 0.0, out)


def estimate_lipschitz(F, pairs, points=None):
    """max ||F[v] - F[w]||_inf / ||v - w||_L1 over the pairs (a lower bound)."""
    if not pairs:
        raise DegeneratePairError("no field pairs given")
    best = 0.0
    for v, w in pairs:
        den = (v.with_values(v.values - w.values)).l1()
        if den == 0:
            raise DegeneratePairError("pair with ||v - w||_L1 = 0")
        pts = v.interior_centers() if points is None else as_points(points)[0]
        diff = np.asarray(F.freeze(v)(pts)) - np.asarray(F.freeze(w)(pts))
        num = np.max(np.linalg.norm(diff.reshape(len(pts), -1), axis=1))
        best = max(best, float(num) / den)
    return best
