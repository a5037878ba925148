"""Masked regular-grid fields standing in for BV functions on the domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import FormatError
from .geometry import DEFAULT_EPS_STOP, cell_centers, pack_grid_header, read_grid_header

EXTERIOR, INTERIOR, COLLAR = 0, 1, 2
FIELD_MAGIC = b"SGRD"


@dataclass(eq=False)
class ScalarGridField:
    """Values at cell centres of ``bbox`` split into ``(ny, nx)`` cells.

    ``mask`` holds EXTERIOR / INTERIOR / COLLAR per cell; only INTERIOR
    cells enter the norms.
    """

    bbox: tuple
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.bbox = tuple(float(b) for b in self.bbox)
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask shapes differ")

    @property
    def shape(self):
        return self.values.shape

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def hx(self):
        return (self.bbox[2] - self.bbox[0]) / self.nx

    @property
    def hy(self):
        return (self.bbox[3] - self.bbox[1]) / self.ny

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def interior(self):
        return self.mask == INTERIOR

    def centers(self):
        xs, ys = cell_centers(self.bbox, self.shape)
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def interior_centers(self):
        return self.centers()[self.interior]

    def with_values(self, values):
        return ScalarGridField(self.bbox, np.array(values, dtype=float), self.mask.copy())

    def copy(self):
        return self.with_values(self.values)

    def same_geometry(self, other):
        return self.bbox == other.bbox and self.shape == other.shape

    def constant(self, value):
        vals = np.where(self.mask == EXTERIOR, 0.0, float(value))
        return self.with_values(vals)

    # norms ---------------------------------------------------------------
    def l1(self, region=None):
        sel = self.interior if region is None else (self.interior & region)
        return float(np.sum(np.abs(self.values[sel])) * self.cell_area)

    def linf(self, region=None):
        sel = self.interior if region is None else (self.interior & region)
        return float(np.max(np.abs(self.values[sel]))) if sel.any() else 0.0

    def tv(self):
        """Forward-difference gradient magnitudes summed over interior cells."""
        u = self.values
        inn = self.interior
        dx = np.zeros_like(u)
        dy = np.zeros_like(u)
        okx = inn[:, :-1] & inn[:, 1:]
        oky = inn[:-1, :] & inn[1:, :]
        dx[:, :-1] = np.where(okx, (u[:, 1:] - u[:, :-1]) / self.hx, 0.0)
        dy[:-1, :] = np.where(oky, (u[1:, :] - u[:-1, :]) / self.hy, 0.0)
        return float(np.sum(np.hypot(dx, dy)[inn]) * self.cell_area)

    # io ------------------------------------------------------------------
    def save(self, path):
        """Header as for grid time functions (q slot 0), float64 values, then uint8 mask."""
        with open(path, "wb") as fh:
            fh.write(pack_grid_header(FIELD_MAGIC, self.nx, self.ny, self.bbox, 0.0))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.mask, dtype=np.uint8).tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            buf = fh.read()
        nx, ny, bbox, _, off = read_grid_header(buf, FIELD_MAGIC)
        need = off + 9 * nx * ny
        if len(buf) < need:
            raise FormatError(f"expected {need} bytes, file has {len(buf)}", offset=len(buf))
        values = np.frombuffer(buf, "<f8", nx * ny, off).reshape(ny, nx).astype(float)
        mask = np.frombuffer(buf, np.uint8, nx * ny, off + 8 * nx * ny).reshape(ny, nx).copy()
        return cls(bbox, values, mask)

    def to_pgm(self, path, lo=None, hi=None):
        """Affine map of the values to 0..255 (exterior cells black), written as binary PGM."""
        from .pgm import write_pgm

        vals = self.values
        inside = self.mask != EXTERIOR
        ref = vals[inside] if inside.any() else np.zeros(1)
        lo = float(ref.min()) if lo is None else float(lo)
        hi = float(ref.max()) if hi is None else float(hi)
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        img = np.clip(np.rint((vals - lo) * scale), 0, 255).astype(np.uint8)
        img[~inside] = 0
        # row 0 of the grid is the bottom of the domain; images store the top first
        write_pgm(path, img[::-1])


def make_grid(domain, n, eps_stop=DEFAULT_EPS_STOP):
    """Zero field on an ``n x n`` (or ``(nx, ny)``) grid over the domain's bounding box."""
    nx, ny = (n, n) if np.isscalar(n) else n
    shape = (ny, nx)
    xs, ys = cell_centers(domain.bounding_box, shape)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.inside(pts).reshape(shape)
    t0 = domain.time.cell_t0(domain.bounding_box, shape)
    mask = np.where(inside, np.where(t0 > 1.0 - eps_stop, COLLAR, INTERIOR), EXTERIOR)
    return ScalarGridField(domain.bounding_box, np.zeros(shape), mask.astype(np.uint8))


def field_norms(u: ScalarGridField, region=None):
    """L1, Linf and TV estimates of a grid field (masked Riemann sums)."""
    return {"l1": u.l1(region), "linf": u.linf(region), "tv": u.tv()}


def past_region(u: ScalarGridField, time, lam):
    """Boolean cell mask of the past {T0 < lam}."""
    return time.cell_t0(u.bbox, u.shape) < lam


def mask_past(v: ScalarGridField, time, lam):
    """v times the indicator of {T0 < lam}."""
    keep = past_region(v, time, lam)
    return v.with_values(np.where(keep, v.values, 0.0))


def nearest_fill(values, source, targets):
    """Copy into ``targets`` the value of the nearest ``source`` cell (Euclidean, in cells)."""
    out = np.array(values, dtype=float)
    if not targets.any():
        return out
    if not source.any():
        out[targets] = 0.0
        return out
    _, (iy, ix) = ndimage.distance_transform_edt(~source, return_indices=True)
    out[targets] = out[iy[targets], ix[targets]]
    return out
