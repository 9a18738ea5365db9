"""Hierarchical diverging codebooks, their high-response regions and refinement sampling.

Region boundaries are half-open: lower bounds inclusive, upper bounds
exclusive.  Frustums of one level overlap along strips one aperture wide, so
``locate_frustum`` resolves membership through the angular core of each
frustum, which does tile the tangent range exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import ArrayConfig, Direction
from .wavefield import AXES, HORIZONTAL, VERTICAL

_GRID_EPS = 1e-9


class FrustumIndex(NamedTuple):
    m: int
    x: int
    z: int

    def validate(self) -> "FrustumIndex":
        n = 2 ** self.m
        if self.m < 1 or not (1 <= self.x <= n and 1 <= self.z <= n):
            raise ValueError(f"invalid frustum index {tuple(self)}")
        return self


class ShellIndex(NamedTuple):
    m: int
    idx: int
    axis: str

    def validate(self) -> "ShellIndex":
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.m < 1 or not 1 <= self.idx <= 2 ** self.m:
            raise ValueError(f"invalid shell index {tuple(self)}")
        return self


@dataclass
class RefinementPlan:
    """Focusing points to sweep in the refinement phase."""

    focus_points: list  # of Direction
    k_set: list
    source: str
    rings: list = field(default_factory=list)  # one int per focus point
    index_ranges: dict = field(default_factory=dict)  # k -> ((x_lo, x_hi), (z_lo, z_hi)) or None

    def __len__(self):
        return len(self.focus_points)

    def points(self) -> np.ndarray:
        """Cartesian ``(P, 3)`` array of the focus points."""
        if not self.focus_points:
            return np.empty((0, 3))
        t = np.asarray(self.focus_points, float)
        return np.stack([t[:, 0] * np.tan(t[:, 1]), t[:, 0], t[:, 0] * np.tan(t[:, 2])], axis=1)

    def counts_per_ring(self) -> dict:
        return {k: self.rings.count(k) for k in self.k_set}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "y_m", "phi_rad", "theta_rad"])
            for k, d in zip(self.rings, self.focus_points):
                w.writerow([k, repr(d.y_m), repr(d.phi_rad), repr(d.theta_rad)])


# -- focal points -------------------------------------------------------------

def virtual_focal_point(cfg: ArrayConfig, fi: FrustumIndex) -> np.ndarray:
    m, x, z = FrustumIndex(*fi).validate()
    n = 2 ** m
    return np.array([
        (2 * x - n - 1) / 2 * cfg.aperture_x_m,
        -(2 ** (m - 1)) * cfg.min_aperture_m,
        (2 * z - n - 1) / 2 * cfg.aperture_z_m,
    ])


def axis_focal_point(cfg: ArrayConfig, si: ShellIndex) -> np.ndarray:
    m, i, axis = ShellIndex(*si).validate()
    n = 2 ** m
    if axis == HORIZONTAL:
        return np.array([(2 * i - n - 1) / 2 * cfg.aperture_x_m, -(2 ** (m - 1)) * cfg.aperture_x_m, 0.0])
    return np.array([0.0, -(2 ** (m - 1)) * cfg.aperture_z_m, (2 * i - n - 1) / 2 * cfg.aperture_z_m])


def level_focal_points(cfg: ArrayConfig, m: int) -> np.ndarray:
    """All ``4**m`` level-m focal points, row-major in ``(x, z)``."""
    n = 2 ** m
    return np.array([virtual_focal_point(cfg, FrustumIndex(m, x, z))
                     for x in range(1, n + 1) for z in range(1, n + 1)])


def child_indices(fi: FrustumIndex) -> list:
    m, x, z = fi
    return [FrustumIndex(m + 1, cx, cz) for cx in (2 * x - 1, 2 * x) for cz in (2 * z - 1, 2 * z)]


def child_shells(si: ShellIndex) -> list:
    m, i, axis = si
    return [ShellIndex(m + 1, 2 * i - 1, axis), ShellIndex(m + 1, 2 * i, axis)]


# -- frustum regions ----------------------------------------------------------

def _slopes(aperture: float, min_aperture: float, m: int, idx):
    """Lower/upper boundary slopes of the level-m region(s) with index ``idx``.

    At depth y the region spans ``[s_lo*y - D/2, s_hi*y + D/2)``.
    """
    n = 2 ** m
    idx = np.asarray(idx, float)
    s_lo = (n - 2 * idx) * aperture / (n * min_aperture)
    s_hi = s_lo + 2 * aperture / (n * min_aperture)
    return s_lo, s_hi


def frustum_interval(cfg: ArrayConfig, m: int, idx, depth, axis: str = HORIZONTAL):
    """Lateral interval ``[lo, hi)`` of the level-m frustum(s) at ``depth``."""
    ap = cfg.aperture_x_m if axis == HORIZONTAL else cfg.aperture_z_m
    s_lo, s_hi = _slopes(ap, cfg.min_aperture_m, m, idx)
    return s_lo * depth - ap / 2, s_hi * depth + ap / 2


def frustum_contains(cfg: ArrayConfig, fi: FrustumIndex, p) -> np.ndarray | bool:
    m, x, z = FrustumIndex(*fi).validate()
    pts = np.asarray(p, float)
    q = np.atleast_2d(pts)
    if np.any(q[:, 1] <= 0):
        raise ValueError("points must lie in front of the array")
    xl, xh = frustum_interval(cfg, m, x, q[:, 1], HORIZONTAL)
    zl, zh = frustum_interval(cfg, m, z, q[:, 1], VERTICAL)
    ok = (q[:, 0] >= xl) & (q[:, 0] < xh) & (q[:, 2] >= zl) & (q[:, 2] < zh)
    return bool(ok[0]) if pts.ndim == 1 else ok


def frustum_axis_masks(cfg: ArrayConfig, m: int, points):
    """Per-axis membership masks ``(P, 2**m)`` for every level-m index.

    A point is in frustum ``(x, z)`` iff ``mx[:, x-1] & mz[:, z-1]``.
    """
    q = np.atleast_2d(np.asarray(points, float))
    idx = np.arange(1, 2 ** m + 1)
    xl, xh = frustum_interval(cfg, m, idx[None, :], q[:, 1:2], HORIZONTAL)
    zl, zh = frustum_interval(cfg, m, idx[None, :], q[:, 1:2], VERTICAL)
    mx = (q[:, 0:1] >= xl) & (q[:, 0:1] < xh)
    mz = (q[:, 2:3] >= zl) & (q[:, 2:3] < zh)
    return mx, mz


def core_index(aperture: float, min_aperture: float, m: int, tan_val):
    """Index whose angular core ``[s_lo, s_hi)`` contains ``tan_val``; clipped to range."""
    n = 2 ** m
    r = aperture / min_aperture
    t = np.asarray(tan_val, float)
    idx = np.ceil((r - t) * n / (2 * r)).astype(int)
    return np.clip(idx, 1, n)


def locate_frustum(cfg: ArrayConfig, m: int, p) -> FrustumIndex:
    """The unique level-m frustum whose core holds ``p``; the frustum also contains ``p``."""
    x, y, z = (float(c) for c in p)
    if not y > 0:
        raise ValueError("point must lie in front of the array")
    ix = int(core_index(cfg.aperture_x_m, cfg.min_aperture_m, m, x / y))
    iz = int(core_index(cfg.aperture_z_m, cfg.min_aperture_m, m, z / y))
    return FrustumIndex(m, ix, iz)


# -- conical shells -----------------------------------------------------------

def shell_interval(cfg: ArrayConfig, m: int, idx, rho, axis: str = HORIZONTAL):
    """Shell bounds along the ULA axis for radial distance ``rho`` from that axis.

    The angle conditions against the ULA endpoints reduce to the frustum
    interval with depth replaced by ``rho``.
    """
    ap = cfg.aperture_x_m if axis == HORIZONTAL else cfg.aperture_z_m
    s_lo, s_hi = _slopes(ap, ap, m, idx)
    return s_lo * rho - ap / 2, s_hi * rho + ap / 2


def shell_contains(cfg: ArrayConfig, si: ShellIndex, p) -> np.ndarray | bool:
    m, i, axis = ShellIndex(*si).validate()
    pts = np.asarray(p, float)
    q = np.atleast_2d(pts)
    if np.any(q[:, 1] <= 0):
        raise ValueError("points must lie in front of the array")
    along, other = (q[:, 0], q[:, 2]) if axis == HORIZONTAL else (q[:, 2], q[:, 0])
    rho = np.hypot(q[:, 1], other)
    lo, hi = shell_interval(cfg, m, i, rho, axis)
    ok = (along >= lo) & (along < hi)
    return bool(ok[0]) if pts.ndim == 1 else ok


def shell_angles(cfg: ArrayConfig, v, p):
    """``(xi1, xi2, xi_v1, xi_v2)``: angles to the negative x axis used by the shell test.

    Endpoints are taken at ``(+-D_x/2, 0, 0)``.
    """
    e1 = np.array([-cfg.aperture_x_m / 2, 0.0, 0.0])
    e2 = -e1
    neg_x = np.array([-1.0, 0.0, 0.0])

    def ang(a, b):
        u = np.asarray(b, float) - np.asarray(a, float)
        return math.acos(float(np.clip(u @ neg_x / np.linalg.norm(u), -1, 1)))

    return ang(e1, p), ang(e2, p), ang(v, e1), ang(v, e2)


def shell_axis_masks(cfg: ArrayConfig, m: int, points, axis: str) -> np.ndarray:
    q = np.atleast_2d(np.asarray(points, float))
    along, other = (q[:, 0], q[:, 2]) if axis == HORIZONTAL else (q[:, 2], q[:, 0])
    rho = np.hypot(q[:, 1], other)[:, None]
    idx = np.arange(1, 2 ** m + 1)[None, :]
    lo, hi = shell_interval(cfg, m, idx, rho, axis)
    return (along[:, None] >= lo) & (along[:, None] < hi)


# -- refinement sampling ------------------------------------------------------

def yk_distance(cfg: ArrayConfig, M: int, k: int) -> float:
    if k < 0:
        raise ValueError("ring index must be non-negative")
    if k == 0:
        return math.inf
    return 2 ** (M - 1) / (2 * k - 1) * cfg.min_aperture_m


def f_bounds(cfg: ArrayConfig, M: int, aperture: float, t: int, k: int):
    """``(f_min, f_max)`` of the tangent-grid coverage lemma."""
    dmin = cfg.min_aperture_m
    base = (dmin + aperture) * (2 ** M + 1) / (2 * dmin)
    return base - aperture * (t + k) / dmin, base - aperture * (t - k) / dmin


def tangent_grid(M: int, idx):
    return (2 * np.asarray(idx, float) - 1) / 2 ** M - 1


def grid_index_of_tangent(M: int, tan_val):
    """Continuous grid coordinate: tangent grid point ``i`` maps to ``i``."""
    return (np.asarray(tan_val, float) + 1) * 2 ** (M - 1) + 0.5


def strict_grid_range(M: int, t_lo: float, t_hi: float):
    """Grid indices with tangent strictly inside ``(t_lo, t_hi)``, clipped to ``1..2**M``."""
    lo = math.floor(grid_index_of_tangent(M, t_lo) + _GRID_EPS) + 1
    hi = math.ceil(grid_index_of_tangent(M, t_hi) - _GRID_EPS) - 1
    lo, hi = max(lo, 1), min(hi, 2 ** M)
    return (lo, hi) if lo <= hi else None


def lemma_range(cfg: ArrayConfig, M: int, aperture: float, t: int, k: int):
    f_min, f_max = f_bounds(cfg, M, aperture, t, k)
    lo = max(1, math.floor(f_min))
    hi = min(2 ** M, math.ceil(f_max))
    return (lo, hi) if lo <= hi else None


def _check_k_set(k_set) -> list:
    ks = [int(k) for k in k_set]
    if not ks:
        raise ValueError("k_set must be non-empty")
    if any(k < 1 for k in ks):
        raise ValueError("ring indices must be >= 1")
    if ks != sorted(set(ks)):
        raise ValueError("k_set must be strictly ascending")
    return ks


def _emit(M: int, y: float, xr, zr, k: int, plan: RefinementPlan) -> None:
    plan.index_ranges[k] = (xr, zr) if xr and zr else None
    if not (xr and zr):
        return
    tx = np.arctan(tangent_grid(M, np.arange(xr[0], xr[1] + 1)))
    tz = np.arctan(tangent_grid(M, np.arange(zr[0], zr[1] + 1)))
    for phi in tx:
        for theta in tz:
            plan.focus_points.append(Direction(y, float(phi), float(theta)))
            plan.rings.append(k)


def refinement_plan_frustum(cfg: ArrayConfig, M: int, fi: FrustumIndex, k_set=(2, 4, 6),
                            mode: str = "section") -> RefinementPlan:
    """Focusing points covering frustum ``fi`` (a level-M index).

    ``mode="lemma"`` emits the full index ranges of the coverage lemma.
    ``mode="section"`` keeps only grid directions strictly inside the frustum
    cross-section at each ring depth, which is the tighter default.
    """
    m, x_m, z_m = FrustumIndex(*fi).validate()
    if m != M:
        raise ValueError(f"frustum level {m} does not match M={M}")
    ks = _check_k_set(k_set)
    if mode not in ("section", "lemma"):
        raise ValueError(f"mode must be 'section' or 'lemma', got {mode!r}")
    plan = RefinementPlan([], ks, "two-phase frustum")
    for k in ks:
        y = yk_distance(cfg, M, k)
        if mode == "lemma":
            xr = lemma_range(cfg, M, cfg.aperture_x_m, x_m, k)
            zr = lemma_range(cfg, M, cfg.aperture_z_m, z_m, k)
        else:
            xl, xh = frustum_interval(cfg, M, x_m, y, HORIZONTAL)
            zl, zh = frustum_interval(cfg, M, z_m, y, VERTICAL)
            xr = strict_grid_range(M, xl / y, xh / y)
            zr = strict_grid_range(M, zl / y, zh / y)
        _emit(M, y, xr, zr, k, plan)
    return plan


def rod_bounding_box(cfg: ArrayConfig, M: int, x_m: int, z_m: int, y: float, iters: int = 50):
    """Lateral bounding box of the rod cross-section at depth ``y``.

    Fixed-point iteration on the shell bounds, starting from the ``rho = y``
    box and clipped to the serving region.  Returns ``None`` when empty.
    """
    cx, cz = cfg.aperture_x_m / 2, cfg.aperture_z_m / 2
    box_x = (-y - cx, y + cx)
    box_z = (-y - cz, y + cz)

    def rho_range(lo, hi):
        near = 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))
        far = max(abs(lo), abs(hi))
        return math.hypot(y, near), math.hypot(y, far)

    xl0, xh0 = shell_interval(cfg, M, x_m, y, HORIZONTAL)
    zl0, zh0 = shell_interval(cfg, M, z_m, y, VERTICAL)
    bx = (max(xl0, box_x[0]), min(xh0, box_x[1]))
    bz = (max(zl0, box_z[0]), min(zh0, box_z[1]))
    for _ in range(iters):
        if bx[0] >= bx[1] or bz[0] >= bz[1]:
            return None
        # shell bounds are linear in rho, so extremes occur at the rho extremes
        rz = rho_range(*bz)
        rx = rho_range(*bx)
        xs = [shell_interval(cfg, M, x_m, r, HORIZONTAL) for r in rz]
        zs = [shell_interval(cfg, M, z_m, r, VERTICAL) for r in rx]
        nbx = (max(min(a for a, _ in xs), box_x[0]), min(max(b for _, b in xs), box_x[1]))
        nbz = (max(min(a for a, _ in zs), box_z[0]), min(max(b for _, b in zs), box_z[1]))
        if np.allclose(nbx, bx, atol=1e-12) and np.allclose(nbz, bz, atol=1e-12):
            break
        bx, bz = nbx, nbz
    if bx[0] >= bx[1] or bz[0] >= bz[1]:
        return None
    return bx, bz


def refinement_plan_rod(cfg: ArrayConfig, M: int, x_m: int, z_m: int, k_set=(2, 4, 6),
                        mode: str = "section") -> RefinementPlan:
    """Focusing points covering the intersection of the two identified shells.

    Per ring, grid directions strictly inside the rod cross-section are found
    by direct membership on a window around its bounding box.  ``section``
    emits exactly those directions; ``box`` emits the full index box spanning
    them.
    """
    ShellIndex(M, x_m, HORIZONTAL).validate()
    ShellIndex(M, z_m, VERTICAL).validate()
    ks = _check_k_set(k_set)
    if mode not in ("section", "box"):
        raise ValueError(f"mode must be 'section' or 'box', got {mode!r}")
    plan = RefinementPlan([], ks, "three-phase rod")
    sh, sv = ShellIndex(M, x_m, HORIZONTAL), ShellIndex(M, z_m, VERTICAL)
    for k in ks:
        y = yk_distance(cfg, M, k)
        plan.index_ranges[k] = None
        box = rod_bounding_box(cfg, M, x_m, z_m, y)
        if box is None:
            continue
        (xl, xh), (zl, zh) = box
        wx = strict_grid_range(M, xl / y - 2 ** (1 - M), xh / y + 2 ** (1 - M))
        wz = strict_grid_range(M, zl / y - 2 ** (1 - M), zh / y + 2 ** (1 - M))
        if wx is None or wz is None:
            continue
        gx, gz = np.meshgrid(np.arange(wx[0], wx[1] + 1), np.arange(wz[0], wz[1] + 1), indexing="ij")
        gx, gz = gx.ravel(), gz.ravel()
        pts = np.stack([y * tangent_grid(M, gx), np.full(gx.size, y), y * tangent_grid(M, gz)], axis=1)
        along_x, rho_x = pts[:, 0], np.hypot(y, pts[:, 2])
        along_z, rho_z = pts[:, 2], np.hypot(y, pts[:, 0])
        xlo, xhi = shell_interval(cfg, M, sh.idx, rho_x, HORIZONTAL)
        zlo, zhi = shell_interval(cfg, M, sv.idx, rho_z, VERTICAL)
        # strict on both sides, like the frustum section count
        inside = (along_x > xlo) & (along_x < xhi) & (along_z > zlo) & (along_z < zhi)
        if not inside.any():
            continue
        sx, sz = gx[inside], gz[inside]
        xr, zr = (int(sx.min()), int(sx.max())), (int(sz.min()), int(sz.max()))
        if mode == "box":
            _emit(M, y, xr, zr, k, plan)
            continue
        plan.index_ranges[k] = (xr, zr)
        for i, j in zip(sx, sz):
            plan.focus_points.append(Direction(y, float(np.arctan(tangent_grid(M, i))),
                                               float(np.arctan(tangent_grid(M, j)))))
            plan.rings.append(k)
    return plan


# -- coverage -----------------------------------------------------------------

def sample_plane(cfg: ArrayConfig, y_plane: float, n: int, rng: np.random.Generator,
                 exact: bool = True) -> np.ndarray:
    """Uniform points on the serving-region footprint at depth ``y_plane``."""
    hx = y_plane + (cfg.aperture_x_m / 2 if exact else 0.0)
    hz = y_plane + (cfg.aperture_z_m / 2 if exact else 0.0)
    x = rng.uniform(-hx, hx, n)
    z = rng.uniform(-hz, hz, n)
    return np.stack([x, np.full(n, float(y_plane)), z], axis=1)


def coverage_check(cfg: ArrayConfig, m: int, y_plane: float, samples: int = 10_000, seed: int = 0,
                   kind: str = "frustum", exclude=None) -> bool:
    """Whether every sampled point of the plane lies in some level-m region.

    ``exclude`` drops one codeword: a ``(x, z)`` pair for frustums or an index
    for shells (``kind`` is ``frustum``, ``horizontal`` or ``vertical``).
    """
    if samples < 1000:
        raise ValueError("need at least 1e3 samples")
    if not y_plane > 0:
        raise ValueError("plane depth must be positive")
    pts = sample_plane(cfg, y_plane, samples, np.random.default_rng(seed))
    if kind == "frustum":
        mx, mz = frustum_axis_masks(cfg, m, pts)
        hits = mx.sum(1) * mz.sum(1)
        if exclude is not None:
            ex, ez = exclude
            hits = hits - (mx[:, ex - 1] & mz[:, ez - 1])
    elif kind in AXES:
        mask = shell_axis_masks(cfg, m, pts, kind)
        if exclude is not None:
            mask[:, exclude - 1] = False
        hits = mask.sum(1)
    else:
        raise ValueError(f"unknown region kind {kind!r}")
    return bool(np.all(hits > 0))


def locate_shell(cfg: ArrayConfig, m: int, p, axis: str) -> ShellIndex:
    """The unique level-m shell whose angular core holds ``p``."""
    x, y, z = (float(c) for c in p)
    if not y > 0:
        raise ValueError("point must lie in front of the array")
    along, other = (x, z) if axis == HORIZONTAL else (z, x)
    ap = cfg.aperture_x_m if axis == HORIZONTAL else cfg.aperture_z_m
    return ShellIndex(m, int(core_index(ap, ap, m, along / math.hypot(y, other))), axis)


def rect_region_contains(cfg: ArrayConfig, v, points) -> np.ndarray:
    """Membership in the aperture projection from an arbitrary ``v`` (``v.y < 0``)."""
    xv, yv, zv = (float(c) for c in v)
    if not yv < 0:
        raise ValueError("virtual focal point must be behind the array (y < 0)")
    q = np.atleast_2d(np.asarray(points, float))
    ax, az = cfg.aperture_x_m / 2, cfg.aperture_z_m / 2
    t = q[:, 1] / yv
    return ((q[:, 0] >= (xv + ax) * t - ax) & (q[:, 0] < (xv - ax) * t + ax)
            & (q[:, 2] >= (zv + az) * t - az) & (q[:, 2] < (zv - az) * t + az))


def shell_region_contains(cfg: ArrayConfig, v, points, axis: str = HORIZONTAL) -> np.ndarray:
    """Conical-shell membership for an arbitrary on-plane ``v`` of a central ULA."""
    xv, yv, zv = (float(c) for c in v)
    if not yv < 0:
        raise ValueError("virtual focal point must be behind the array (y < 0)")
    q = np.atleast_2d(np.asarray(points, float))
    if axis == HORIZONTAL:
        along, other, vc, a = q[:, 0], q[:, 2], xv, cfg.aperture_x_m / 2
    else:
        along, other, vc, a = q[:, 2], q[:, 0], zv, cfg.aperture_z_m / 2
    t = np.hypot(q[:, 1], other) / yv
    return (along >= (vc + a) * t - a) & (along < (vc - a) * t + a)
