"""Transport-based inpainting of grayscale images.

The damaged region is the domain, its distance transform gives the time
function, and a structure-tensor tangent field restricted to already known
information drives a quasi-linear solve with f = 0.  Pixel (i, j) has its
centre at (x, y) = (j + 0.5, i + 0.5) in domain units of one pixel.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .characteristics import IntegratorConfig
from .errors import MaskInvalidError, SolverError
from .fields import BoundaryData, FunctionalTransportField, LinearTransportField, _perp
from .geometry import DomainSpec, GridTimeFunction, unit_normal
from .grid import COLLAR, EXTERIOR, INTERIOR, ScalarGridField
from .pgm import read_pgm, write_pgm
from .quasilinear import StripePlan, solve_quasilinear


@dataclass(eq=False)
class GrayImage:
    """Pixels in [0, 1], row 0 at the top.  ``raw`` keeps the source bytes."""

    pixels: np.ndarray
    pitch: float = 1.0
    raw: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise ValueError("gray image must be 2D")
        if np.any(self.pixels < 0) or np.any(self.pixels > 1):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @classmethod
    def from_bytes(cls, arr):
        arr = np.asarray(arr, dtype=np.uint8)
        return cls(arr / 255.0, raw=arr.copy())

    @classmethod
    def read(cls, path):
        return cls.from_bytes(read_pgm(path))

    def to_bytes(self):
        if self.raw is not None:
            return self.raw
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)

    def write(self, path):
        write_pgm(path, self.to_bytes())


@dataclass(eq=False)
class InpaintMask:
    """``damaged`` is True on pixels to fill."""

    damaged: np.ndarray

    def __post_init__(self):
        self.damaged = np.asarray(self.damaged, dtype=bool)

    @classmethod
    def from_bytes(cls, arr):
        """0 = damaged, 255 = known; anything else is rejected."""
        arr = np.asarray(arr)
        bad = (arr != 0) & (arr != 255)
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise MaskInvalidError(f"mask pixel ({i}, {j}) is {arr[i, j]}, expected 0 or 255")
        return cls(arr == 0)

    @classmethod
    def read(cls, path):
        return cls.from_bytes(read_pgm(path))

    def to_bytes(self):
        return np.where(self.damaged, 0, 255).astype(np.uint8)

    def validate(self):
        d = self.damaged
        if not d.any():
            raise MaskInvalidError("mask has no damaged pixels")
        if d[0, :].any() or d[-1, :].any() or d[:, 0].any() or d[:, -1].any():
            raise MaskInvalidError("damaged region touches the image border; a known collar is required")
        _, n = ndimage.label(d)
        if n != 1:
            raise MaskInvalidError(f"damaged region has {n} connected components")
        _, n_known = ndimage.label(~d)
        if n_known != 1:
            raise MaskInvalidError("damaged region is not simply connected (it encloses known pixels)")
        return self


@dataclass(frozen=True)
class InpaintConfig:
    q: Optional[float] = 4.0
    beta_floor: float = 0.1
    rho: float = 3.0
    stripe_h: float = 0.05
    tol: float = 1e-6
    sigma: float = 1.0
    max_iter: int = 200
    integrator: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(dt=1e-2, tau_time=1e-4, newton_iters=12))

    def __post_init__(self):
        if self.q is not None and not self.q > 1:
            raise ValueError("q must exceed 1")
        if not 0 < self.beta_floor < 1:
            raise ValueError("beta_floor must lie in (0, 1)")
        if not self.rho >= 1:
            raise ValueError("rho must be at least one pixel")
        if not self.stripe_h > 0 or not self.tol > 0:
            raise ValueError("stripe_h and tol must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown inpainting config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "integrator" in data:
            data["integrator"] = IntegratorConfig(**{"dt": 1e-2, **data["integrator"]})
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# time function


def estimate_q(T, damaged, radius=4.0):
    """q = 2p from a log-log fit of 1 - T ~ r^p around the maximum, clipped to [2, 8]."""
    iy, ix = np.unravel_index(np.argmax(np.where(damaged, T, -np.inf)), T.shape)
    yy, xx = np.indices(T.shape)
    r = np.hypot(yy - iy, xx - ix)
    sel = damaged & (r > 0) & (r <= radius) & (T < 1)
    if sel.sum() < 3:
        return 4.0
    p = np.polyfit(np.log(r[sel]), np.log(1.0 - T[sel]), 1)[0]
    return float(np.clip(2.0 * p, 2.0, 8.0))


def time_from_mask(mask: InpaintMask, sigma=1.0, q=4.0, eps_stop=1e-3):
    """T = smoothed distance to the known pixels, normalised to max 1.

    Outside the hole T continues as minus the distance to the hole's pixel
    edge, so the zero level sits between known and damaged centres and
    grad T stays nonzero where integrator stages overshoot the boundary.
    """
    mask.validate()
    din = ndimage.distance_transform_edt(mask.damaged)
    if sigma > 0:
        din = ndimage.gaussian_filter(din, sigma)
    # outside: minus the distance to the pixel edge of the hole
    dout = ndimage.distance_transform_edt(~mask.damaged) - 0.5
    ds = np.where(mask.damaged, din, -dout)
    T = ds / ds[mask.damaged].max()
    T[T >= 1.0] = 1.0
    if np.any(T[mask.damaged] <= 0):
        raise MaskInvalidError("hole too thin for the smoothing scale; lower sigma")
    if q is None:
        q = estimate_q(T, mask.damaged)
    h, w = T.shape
    damaged = mask.damaged

    def inside(p):
        j = np.floor(p[:, 0]).astype(int)
        i = np.floor(p[:, 1]).astype(int)
        ok = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        out = np.zeros(len(p), dtype=bool)
        out[ok] = damaged[i[ok], j[ok]]
        return out

    return GridTimeFunction(T, (0.0, 0.0, float(w), float(h)), q, inside=None, eps_stop=eps_stop), inside


def raster_domain(mask: InpaintMask, time, inside):
    h, w = mask.damaged.shape
    return DomainSpec(
        name="raster",
        boundary=None,
        time=time,
        bounding_box=(0.0, 0.0, float(w), float(h)),
        inside=inside,
        area=float(mask.damaged.sum()),
    )


# ---------------------------------------------------------------------------
# tangent field


class TangentTransportField(FunctionalTransportField):
    """Level-line tangent of the composite image, read only from the past.

    A pixel gradient (central differences) enters the structure tensor at x
    only when every pixel of its stencil is known or has T0 below T0(x).
    """

    def __init__(self, image: GrayImage, mask: InpaintMask, time, rho=3.0, beta_floor=0.1,
                 energy_floor=1e-10, coherence_floor=1e-3):
        super().__init__(beta_floor, 0.0, name="structure-tangent")
        self.lipschitz = math.nan
        self.image = image.pixels
        self.damaged = mask.damaged
        self.time = time
        self.rho = float(rho)
        self.R = int(math.ceil(2 * rho))
        self.beta_floor = float(beta_floor)
        self.energy_floor = energy_floor
        self.coherence_floor = coherence_floor
        h, w = self.image.shape
        self.bbox = (0.0, 0.0, float(w), float(h))
        t0 = time.cell_t0(self.bbox, (h, w))
        # availability of each pixel: known pixels are always available
        avail = np.where(self.damaged, t0, -1.0)
        pad = np.pad(avail, 1, constant_values=np.inf)
        self.stencil_time = np.maximum.reduce([pad[1:-1, 2:], pad[1:-1, :-2], pad[2:, 1:-1], pad[:-2, 1:-1]])
        r = np.arange(-self.R, self.R + 1)
        oy, ox = np.meshgrid(r, r, indexing="ij")
        self.offsets = np.column_stack([oy.ravel(), ox.ravel()])

    def composite(self, v):
        if v is None:
            return np.where(self.damaged, 0.0, self.image)
        return np.where(self.damaged, v.values, self.image)

    def tensor_field(self, v):
        img = self.composite(v)
        pad = np.pad(img, 1, mode="edge")
        gx = 0.5 * (pad[1:-1, 2:] - pad[1:-1, :-2])
        gy = 0.5 * (pad[2:, 1:-1] - pad[:-2, 1:-1])
        return gx * gx, gx * gy, gy * gy

    def orient(self, pts, J, lam=None):
        """Unit field at ``pts`` from the gradient products ``J``."""
        jxx, jxy, jyy = J
        h, w = self.image.shape
        lam = self.time.T0(pts) if lam is None else lam
        ci = np.floor(pts[:, 1]).astype(int)
        cj = np.floor(pts[:, 0]).astype(int)
        ii = ci[:, None] + self.offsets[None, :, 0]
        jj = cj[:, None] + self.offsets[None, :, 1]
        valid = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
        iic, jjc = np.clip(ii, 0, h - 1), np.clip(jj, 0, w - 1)
        d2 = (jjc + 0.5 - pts[:, 0:1]) ** 2 + (iic + 0.5 - pts[:, 1:2]) ** 2
        wgt = np.exp(-d2 / (2 * self.rho**2))
        use = valid & (d2 <= self.R**2) & (self.stencil_time[iic, jjc] < lam[:, None])
        wgt = np.where(use, wgt, 0.0)
        a = np.sum(wgt * jxx[iic, jjc], axis=1)
        b = np.sum(wgt * jxy[iic, jjc], axis=1)
        c = np.sum(wgt * jyy[iic, jjc], axis=1)
        n = unit_normal(self.time, pts)
        energy = a + c
        spread = np.sqrt((a - c) ** 2 + 4 * b * b)
        with np.errstate(divide="ignore", invalid="ignore"):
            coherence = np.where(energy > 0, spread / energy, 0.0)
        theta = 0.5 * np.arctan2(2 * b, a - c)
        tangent = np.column_stack([-np.sin(theta), np.cos(theta)])
        dot = np.sum(tangent * n, axis=1)
        tangent = np.where((dot < 0)[:, None], -tangent, tangent)
        dot = np.abs(dot)
        # minimal rotation towards N reaching the floor
        side = tangent - dot[:, None] * n
        norm = np.linalg.norm(side, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            side = np.where((norm > 0)[:, None], side / norm[:, None], _perp(n))
        floor = self.beta_floor
        blended = floor * n + math.sqrt(1 - floor * floor) * side
        out = np.where((dot >= floor)[:, None], tangent, blended)
        flat = (energy <= self.energy_floor) | (coherence <= self.coherence_floor)
        return np.where(flat[:, None], n, out)

    def freeze(self, v):
        J = self.tensor_field(v)

        def func(pts):
            return self.orient(pts, J)

        return LinearTransportField(func, self.beta_floor, self.name)


def causal_tangent_field(image: GrayImage, mask: InpaintMask, time, rho=3.0, beta_floor=0.1):
    if not rho >= 1:
        raise ValueError("rho must be at least one pixel")
    if not 0 < beta_floor < 1:
        raise ValueError("beta_floor must lie in (0, 1)")
    return TangentTransportField(image, mask, time, rho, beta_floor)


# ---------------------------------------------------------------------------
# boundary data and driver


def known_sampler(image: GrayImage, mask: InpaintMask):
    """Bilinear interpolation from known pixels only, renormalised by the known weights."""
    img = np.where(mask.damaged, 0.0, image.pixels)
    known = (~mask.damaged).astype(float)

    def sample(pts):
        coords = np.vstack([pts[:, 1] - 0.5, pts[:, 0] - 0.5])
        num = ndimage.map_coordinates(img, coords, order=1, mode="nearest")
        den = ndimage.map_coordinates(known, coords, order=1, mode="nearest")
        if np.any(den <= 0):
            k = int(np.argmin(den))
            raise SolverError(f"characteristic ended at ({pts[k, 0]:.3f}, {pts[k, 1]:.3f}) away from known pixels")
        return num / den

    return sample


@dataclass
class InpaintResult:
    image: GrayImage
    solution: ScalarGridField
    diagnostics: object
    time: object


def inpaint(image: GrayImage, mask: InpaintMask, cfg: InpaintConfig = None, threads=1):
    """Fill the damaged pixels; known pixel bytes are copied from the input."""
    cfg = cfg or InpaintConfig()
    if image.pixels.shape != mask.damaged.shape:
        raise MaskInvalidError("image and mask sizes differ")
    time, inside = time_from_mask(mask, cfg.sigma, cfg.q, cfg.integrator.eps_stop)
    domain = raster_domain(mask, time, inside)
    h, w = image.pixels.shape
    t0 = time.cell_t0(domain.bounding_box, (h, w))
    grid_mask = np.where(mask.damaged, np.where(t0 > 1 - cfg.integrator.eps_stop, COLLAR, INTERIOR), EXTERIOR)
    grid = ScalarGridField(domain.bounding_box, np.zeros((h, w)), grid_mask.astype(np.uint8))
    c = causal_tangent_field(image, mask, time, cfg.rho, cfg.beta_floor)
    u0 = BoundaryData(point_func=known_sampler(image, mask))
    plan = StripePlan(1.0 - cfg.integrator.eps_stop, cfg.stripe_h)
    try:
        u, diag = solve_quasilinear(domain, c, None, u0, grid, plan, cfg.tol, cfg.integrator,
                                    max_iter=cfg.max_iter, threads=threads)
    except SolverError as exc:
        raise type(exc)(f"inpainting failed: {exc}") from exc
    filled = np.clip(u.values, 0.0, 1.0)
    raw = image.to_bytes().copy()
    raw[mask.damaged] = np.rint(filled[mask.damaged] * 255.0).astype(np.uint8)
    out = GrayImage(raw / 255.0, image.pitch, raw)
    return InpaintResult(out, u, diag, time)


# ---------------------------------------------------------------------------
# test cards


def stripes_card(n=256, period=16, kind="sine"):
    """Vertical stripes: intensity varies with the column only."""
    x = np.arange(n) + 0.5
    if kind == "sine":
        row = 0.5 + 0.5 * np.sin(2 * np.pi * x / period)
    elif kind == "square":
        row = ((x // (period / 2)) % 2).astype(float)
    else:
        raise ValueError(f"unknown stripe kind {kind!r}")
    return GrayImage.from_bytes(np.rint(np.tile(row, (n, 1)) * 255).astype(np.uint8))


def ramp_card(n=256):
    """Diagonal linear ramp from 0 at the top-left to 1 at the bottom-right."""
    i, j = np.indices((n, n)) + 0.5
    return GrayImage.from_bytes(np.rint((i + j) / (2 * n) * 255).astype(np.uint8))


def constant_card(n=64, value=128):
    return GrayImage.from_bytes(np.full((n, n), value, dtype=np.uint8))


def square_hole(n=256, size=32):
    d = np.zeros((n, n), dtype=bool)
    a = (n - size) // 2
    d[a:a + size, a:a + size] = True
    return InpaintMask(d)


def disk_hole(n=64, radius=10.0):
    i, j = np.indices((n, n)) + 0.5
    return InpaintMask(np.hypot(i - n / 2, j - n / 2) < radius)


def hole_error(result: GrayImage, truth: GrayImage, mask: InpaintMask):
    """Mean absolute error over the damaged pixels (values in [0, 1])."""
    return float(np.mean(np.abs(result.pixels[mask.damaged] - truth.pixels[mask.damaged])))
