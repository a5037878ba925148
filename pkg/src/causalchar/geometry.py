"""Domains, boundary parametrizations, time functions and stop sets.

Points are passed around as float arrays of shape ``(n, 2)``; the public
evaluation functions also accept a single point of shape ``(2,)`` and then
return a scalar (or a single vector).
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .errors import (
    DomainMembershipError,
    FormatError,
    GeometryInconsistencyError,
    StopSetProximityError,
    TimeFunctionInvalidError,
)

DEFAULT_EPS_STOP = 1e-3
TIME_GRID_MAGIC = b"TGRD"
_HEADER = struct.Struct("<4sII5d")


def as_points(x):
    """Return ``(pts, single)`` with ``pts`` of shape (n, 2)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected points of shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must have finite components")
    return pts, single


def _unwrap(values, single):
    return values[0] if single else values


# ---------------------------------------------------------------------------
# boundary curves


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Regular periodic parametrization ``s -> gamma(s)`` of the boundary."""

    param: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    period: tuple[float, float]

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return self.param(np.atleast_1d(s)).reshape(s.shape + (2,))

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        return self.derivative(np.atleast_1d(s)).reshape(s.shape + (2,))

    @property
    def length_of_period(self):
        return self.period[1] - self.period[0]

    def wrap(self, s):
        a, b = self.period
        return a + np.mod(np.asarray(s, dtype=float) - a, b - a)

    def samples(self, n):
        a, b = self.period
        s = a + (b - a) * np.arange(n) / n
        return s, self(s)

    def orientation(self):
        """+1 for counterclockwise curves, -1 for clockwise ones."""
        _, p = self.samples(2048)
        x, y = p[:, 0], p[:, 1]
        area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        return 1.0 if area > 0 else -1.0

    def check(self, n=1024, tol=1e-9):
        """Verify regularity and closure; raises GeometryInconsistencyError."""
        s, _ = self.samples(n)
        speed = np.linalg.norm(self.tangent(s), axis=1)
        if np.any(speed <= 0):
            raise GeometryInconsistencyError("boundary parametrization is not regular")
        a, b = self.period
        gap = np.linalg.norm(self(np.array([a]))[0] - self(np.array([b]))[0])
        if gap > tol:
            raise GeometryInconsistencyError(f"boundary curve is not closed (gap {gap:.3g})")

    @classmethod
    def circle(cls, radius=1.0, center=(0.0, 0.0)):
        cx, cy = center

        def param(s):
            return np.stack([cx + radius * np.cos(s), cy + radius * np.sin(s)], axis=-1)

        def deriv(s):
            return np.stack([-radius * np.sin(s), radius * np.cos(s)], axis=-1)

        return cls(param, deriv, (0.0, 2 * math.pi))

    @classmethod
    def ellipse(cls, a, b):
        def param(s):
            return np.stack([a * np.cos(s), b * np.sin(s)], axis=-1)

        def deriv(s):
            return np.stack([-a * np.sin(s), b * np.cos(s)], axis=-1)

        return cls(param, deriv, (0.0, 2 * math.pi))


# ---------------------------------------------------------------------------
# stop sets


def _segments_cross(p1, p2, p3, p4):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True, eq=False)
class StopSet:
    """Isolated point or a single polyline arc with unit normals."""

    kind: str
    point: Optional[np.ndarray] = None
    arc: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    @classmethod
    def isolated_point(cls, p):
        return cls("point", point=np.asarray(p, dtype=float).reshape(2))

    @classmethod
    def single_arc(cls, polyline):
        arc = np.asarray(polyline, dtype=float).reshape(-1, 2)
        if len(arc) < 2:
            return cls.isolated_point(arc[0])
        seg = np.diff(arc, axis=0)
        tang = np.vstack([seg[:1], seg[:-1] + seg[1:], seg[-1:]])
        tang /= np.linalg.norm(tang, axis=1, keepdims=True)
        normals = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
        for i in range(len(arc) - 1):
            for j in range(i + 2, len(arc) - 1):
                if _segments_cross(arc[i], arc[i + 1], arc[j], arc[j + 1]):
                    raise GeometryInconsistencyError("stop-set arc is not simple")
        return cls("arc", arc=arc, normals=normals)

    @classmethod
    def from_points(cls, pts):
        """Point set (e.g. argmax pixels) to a point or principal-axis polyline."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts) == 1 or np.ptp(pts, axis=0).max() == 0:
            return cls.isolated_point(pts.mean(axis=0))
        center = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
        axis = vt[0]
        proj = (pts - center) @ axis
        lo, hi = proj.min(), proj.max()
        if hi - lo < 1e-12:
            return cls.isolated_point(center)
        return cls.single_arc(np.array([center + lo * axis, center + hi * axis]))

    def points(self):
        return self.point[None, :] if self.kind == "point" else self.arc

    def length(self):
        if self.kind == "point":
            return 0.0
        return float(np.sum(np.linalg.norm(np.diff(self.arc, axis=0), axis=1)))

    def distance(self, x):
        pts, single = as_points(x)
        if self.kind == "point":
            d = np.linalg.norm(pts - self.point, axis=1)
        else:
            d = np.full(len(pts), np.inf)
            for a, b in zip(self.arc[:-1], self.arc[1:]):
                ab = b - a
                tt = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
                d = np.minimum(d, np.linalg.norm(pts - (a + tt[:, None] * ab), axis=1))
        return _unwrap(d, single)


# ---------------------------------------------------------------------------
# time functions


class TimeFunction:
    """Time function T with blow-up exponent q and its stop set.

    ``value`` maps (n, 2) points to T, ``gradient`` to grad T.  ``inside``
    optionally tests membership in the closure of the domain.
    """

    representation = "analytic"

    def __init__(self, value, gradient, q, stop_set, inside=None, eps_stop=DEFAULT_EPS_STOP):
        if not q > 1:
            raise TimeFunctionInvalidError(f"blow-up exponent q must exceed 1, got {q}")
        self.value = value
        self.gradient = gradient
        self.q = float(q)
        self.stop_set = stop_set
        self.inside = inside
        self.eps_stop = float(eps_stop)
        self._cell_cache = {}

    # raw vectorised evaluations, no checks
    def T(self, pts):
        return self.value(pts)

    def T0(self, pts):
        return 1.0 - np.maximum(1.0 - self.value(pts), 0.0) ** (1.0 / self.q)

    def grad_T0(self, pts):
        one_minus = np.maximum(1.0 - self.value(pts), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = one_minus ** (1.0 / self.q - 1.0) / self.q
        return scale[:, None] * self.gradient(pts)

    def cell_t0(self, bbox, shape):
        """T0 at the cell centres of a regular grid; memoised per geometry.

        Every causal operator and every past mask reads this same array, so
        membership tests agree bit for bit.
        """
        key = (tuple(float(b) for b in bbox), tuple(shape))
        if key not in self._cell_cache:
            xs, ys = cell_centers(bbox, shape)
            X, Y = np.meshgrid(xs, ys)
            t0 = self.T0(np.column_stack([X.ravel(), Y.ravel()])).reshape(shape)
            t0.setflags(write=False)
            self._cell_cache[key] = t0
        return self._cell_cache[key]


class GridTimeFunction(TimeFunction):
    """Time function sampled at cell centres of a regular grid.

    T is interpolated bilinearly; grad T comes from central differences of
    the samples, interpolated the same way.
    """

    representation = "grid"

    def __init__(self, values, bbox, q, stop_set=None, inside=None, eps_stop=DEFAULT_EPS_STOP):
        values = np.array(values, dtype=float)
        if values.ndim != 2:
            raise TimeFunctionInvalidError("grid time function needs a 2D array")
        self.values = values
        self.bbox = tuple(float(b) for b in bbox)
        ny, nx = values.shape
        self.hx = (self.bbox[2] - self.bbox[0]) / nx
        self.hy = (self.bbox[3] - self.bbox[1]) / ny
        gy, gx = np.gradient(values, self.hy, self.hx)
        self._gx, self._gy = gx, gy
        if stop_set is None:
            xs, ys = cell_centers(self.bbox, values.shape)
            iy, ix = np.nonzero(values >= 1.0 - 1e-12)
            if len(iy) == 0:
                raise TimeFunctionInvalidError("grid time function never reaches 1")
            stop_set = StopSet.from_points(np.column_stack([xs[ix], ys[iy]]))
        super().__init__(self._interp_value, self._interp_grad, q, stop_set, inside, eps_stop)

    @property
    def grid_spacing(self):
        return max(self.hx, self.hy)

    def _coords(self, pts):
        col = (pts[:, 0] - self.bbox[0]) / self.hx - 0.5
        row = (pts[:, 1] - self.bbox[1]) / self.hy - 0.5
        return np.vstack([row, col])

    def _interp_value(self, pts):
        return ndimage.map_coordinates(self.values, self._coords(pts), order=1, mode="nearest")

    def _interp_grad(self, pts):
        c = self._coords(pts)
        gx = ndimage.map_coordinates(self._gx, c, order=1, mode="nearest")
        gy = ndimage.map_coordinates(self._gy, c, order=1, mode="nearest")
        return np.column_stack([gx, gy])


def cell_centers(bbox, shape):
    ny, nx = shape
    x0, y0, x1, y1 = bbox
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    return x0 + (np.arange(nx) + 0.5) * hx, y0 + (np.arange(ny) + 0.5) * hy


def save_time_grid(path, tf: GridTimeFunction):
    """Write header (magic, width, height, bbox, q) and row-major float64 samples, little-endian."""
    ny, nx = tf.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TIME_GRID_MAGIC, nx, ny, *tf.bbox, tf.q))
        fh.write(np.ascontiguousarray(tf.values, dtype="<f8").tobytes())


def read_grid_header(buf, magic):
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} bytes)", offset=len(buf))
    tag, nx, ny, x0, y0, x1, y1, q = _HEADER.unpack_from(buf, 0)
    if tag != magic:
        raise FormatError(f"bad magic {tag!r}, expected {magic!r}", offset=0)
    return nx, ny, (x0, y0, x1, y1), q, _HEADER.size


def pack_grid_header(magic, nx, ny, bbox, q):
    return _HEADER.pack(magic, nx, ny, *bbox, q)


def load_time_grid(path, inside=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    nx, ny, bbox, q, off = read_grid_header(buf, TIME_GRID_MAGIC)
    need = off + 8 * nx * ny
    if len(buf) < need:
        raise FormatError(f"expected {need} bytes, file has {len(buf)}", offset=len(buf))
    values = np.frombuffer(buf, dtype="<f8", count=nx * ny, offset=off).reshape(ny, nx)
    return GridTimeFunction(values.astype(float), bbox, q, inside=inside)


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Bounded simply connected domain with its time function.

    ``inside`` tests the open domain.  ``area``, ``sigma_length`` (length of
    the stop set) and ``dn_l1`` (L1 norm of DN) feed the self-map bounds;
    ``m0`` is the analytic lower bound of |grad T0| when known.
    """

    name: str
    boundary: Optional[BoundaryCurve]
    time: TimeFunction
    bounding_box: tuple[float, float, float, float]
    inside: Callable[[np.ndarray], np.ndarray]
    area: float
    sigma_length: float = 0.0
    dn_l1: Optional[float] = None
    m0: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def diameter(self):
        x0, y0, x1, y1 = self.bounding_box
        return math.hypot(x1 - x0, y1 - y0)

    @property
    def tau_bd(self):
        return 1e-6 * self.diameter


def unit_disk(q=4.0, eps_stop=DEFAULT_EPS_STOP):
    """Unit disk, T = 1 - |x|^2, stop set the origin."""
    tau = 1e-6 * 2 * math.sqrt(2)

    def value(p):
        return 1.0 - p[:, 0] ** 2 - p[:, 1] ** 2

    def gradient(p):
        return -2.0 * p

    def closure(p):
        return np.hypot(p[:, 0], p[:, 1]) <= 1.0 + tau

    def inside(p):
        return p[:, 0] ** 2 + p[:, 1] ** 2 < 1.0

    time = TimeFunction(value, gradient, q, StopSet.isolated_point((0.0, 0.0)), closure, eps_stop)
    return DomainSpec(
        name="disk",
        boundary=BoundaryCurve.circle(),
        time=time,
        bounding_box=(-1.0, -1.0, 1.0, 1.0),
        inside=inside,
        area=math.pi,
        sigma_length=0.0,
        dn_l1=2 * math.pi,
        m0=2.0 / q,
    )


def ellipse(a=1.5, b=1.0, q=3.0, eps_stop=DEFAULT_EPS_STOP):
    """Ellipse with the focal segment as stop set.

    T = 1 - (mu/mu_b)^2 in confocal elliptic coordinates, so T vanishes on
    the boundary ellipse (mu = mu_b) and equals 1 on the segment between
    the foci (mu = 0).
    """
    if not a > b > 0:
        raise GeometryInconsistencyError("ellipse needs a > b > 0")
    foc = math.sqrt(a * a - b * b)
    mu_b = math.atanh(b / a)

    def _w(p):
        z = (p[:, 0] + 1j * p[:, 1]) / foc
        return z, np.arccosh(z)

    def value(p):
        _, w = _w(p)
        return 1.0 - (w.real / mu_b) ** 2

    def gradient(p):
        z, w = _w(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = 1.0 / (foc * np.sqrt(z - 1.0) * np.sqrt(z + 1.0))
        coef = -2.0 * w.real / mu_b**2
        return np.column_stack([coef * dw.real, -coef * dw.imag])

    tau = 1e-6 * 2 * math.hypot(a, b)

    def closure(p):
        return (p[:, 0] / a) ** 2 + (p[:, 1] / b) ** 2 <= 1.0 + tau

    def inside(p):
        return (p[:, 0] / a) ** 2 + (p[:, 1] / b) ** 2 < 1.0

    stop = StopSet.single_arc(np.column_stack([np.linspace(-foc, foc, 33), np.zeros(33)]))
    time = TimeFunction(value, gradient, q, stop, closure, eps_stop)
    return DomainSpec(
        name="ellipse",
        boundary=BoundaryCurve.ellipse(a, b),
        time=time,
        bounding_box=(-a, -b, a, b),
        inside=inside,
        area=math.pi * a * b,
        sigma_length=2 * foc,
        extras={"a": a, "b": b, "focus": foc},
    )


# ---------------------------------------------------------------------------
# public operations


def transformed_time(time: TimeFunction, x):
    """T0(x) = 1 - (1 - T(x))^(1/q)."""
    pts, single = as_points(x)
    if time.inside is not None and not np.all(time.inside(pts)):
        raise DomainMembershipError("point outside the closure of the domain")
    return _unwrap(time.T0(pts), single)


def _check_collar(time, pts, eps_stop):
    eps = time.eps_stop if eps_stop is None else eps_stop
    t0 = time.T0(pts)
    if np.any(t0 > 1.0 - eps + 1e-12):
        raise StopSetProximityError(f"point within the stop-set collar (T0 > 1 - {eps:g})")


def grad_transformed_time(time: TimeFunction, x, eps_stop=None):
    """grad T0 = (1/q) (1 - T)^(1/q - 1) grad T, refused inside the stop-set collar."""
    pts, single = as_points(x)
    _check_collar(time, pts, eps_stop)
    return _unwrap(time.grad_T0(pts), single)


def normal_field(time: TimeFunction, x, eps_stop=None):
    """Unit normal N = grad T / |grad T| pointing towards increasing T."""
    pts, single = as_points(x)
    _check_collar(time, pts, eps_stop)
    g = time.gradient(pts)
    norm = np.linalg.norm(g, axis=1)
    if np.any(norm < 1e-14):
        raise StopSetProximityError("vanishing gradient of the time function")
    return _unwrap(g / norm[:, None], single)


def unit_normal(time: TimeFunction, pts):
    """Unchecked vectorised N for solver internals."""
    g = time.gradient(pts)
    return g / np.linalg.norm(g, axis=1)[:, None]


def _sample_points(sample_grid):
    if hasattr(sample_grid, "interior_centers"):
        return sample_grid.interior_centers()
    pts, _ = as_points(sample_grid)
    return pts


def m0_estimate(time: TimeFunction, sample_grid, eps_stop=None):
    """Minimum of |grad T0| over the samples outside the stop-set collar."""
    pts = _sample_points(sample_grid)
    eps = time.eps_stop if eps_stop is None else eps_stop
    pts = pts[time.T0(pts) <= 1.0 - eps]
    if len(pts) == 0:
        raise TimeFunctionInvalidError("no samples outside the stop-set collar")
    m0 = float(np.min(np.linalg.norm(time.grad_T0(pts), axis=1)))
    if not m0 > 0:
        raise TimeFunctionInvalidError(f"nonpositive m0 estimate {m0}")
    return m0


def estimate_dn_l1(domain: DomainSpec, n=256, step=1e-6):
    """Riemann-sum estimate of the L1 norm of DN (Frobenius) outside the stop-set collar."""
    time = domain.time
    shape = (n, n)
    xs, ys = cell_centers(domain.bounding_box, shape)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    pts = pts[domain.inside(pts) & (time.T0(pts) <= 1.0 - time.eps_stop)]
    h = step * domain.diameter
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    dx = (unit_normal(time, pts + ex) - unit_normal(time, pts - ex)) / (2 * h)
    dy = (unit_normal(time, pts + ey) - unit_normal(time, pts - ey)) / (2 * h)
    dens = np.sqrt(np.sum(dx**2, axis=1) + np.sum(dy**2, axis=1))
    x0, y0, x1, y1 = domain.bounding_box
    return float(np.sum(dens) * (x1 - x0) * (y1 - y0) / (n * n))


def past_membership(time: TimeFunction, lam, x):
    """True iff x lies in the domain and T0(x) < lam; never raises."""
    pts, single = as_points(x)
    ok = time.T0(pts) < lam
    if time.inside is not None:
        ok &= time.inside(pts)
    return _unwrap(ok, single)


def check_time_function(domain: DomainSpec, n=128, lambdas=(0.1, 0.3, 0.5, 0.7, 0.9)):
    """Audit T on a sample grid: boundary zero, range, gradient, level-set connectivity.

    Returns a dict of findings; raises TimeFunctionInvalidError on the first
    hard violation.
    """
    time = domain.time
    report = {}
    if domain.boundary is not None:
        _, bpts = domain.boundary.samples(4 * n)
        bmax = float(np.max(np.abs(time.T(bpts))))
        report["boundary_max_abs_T"] = bmax
        if bmax > domain.tau_bd:
            raise TimeFunctionInvalidError(f"T does not vanish on the boundary (max |T| = {bmax:.3g})")
    shape = (n, n)
    xs, ys = cell_centers(domain.bounding_box, shape)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.inside(pts).reshape(shape)
    T = time.T(pts).reshape(shape)
    if np.any(T[inside] < -1e-12) or np.any(T[inside] > 1 + 1e-12):
        raise TimeFunctionInvalidError("T leaves [0, 1] inside the domain")
    t0 = time.T0(pts).reshape(shape)
    away = inside & (t0 <= 1.0 - time.eps_stop)
    gnorm = np.linalg.norm(time.gradient(pts[away.ravel()]), axis=1)
    report["min_grad_T"] = float(gnorm.min()) if len(gnorm) else float("nan")
    if len(gnorm) and gnorm.min() <= 0:
        raise TimeFunctionInvalidError("grad T vanishes away from the stop set")
    connected = {}
    for lam in lambdas:
        upper = inside & (T >= lam)
        _, ncomp = ndimage.label(upper)
        connected[lam] = ncomp <= 1
    report["upper_level_sets_connected"] = connected
    if not all(connected.values()):
        raise TimeFunctionInvalidError(f"disconnected upper level sets: {connected}")
    return report
