"""Array geometry, direction parameterization and near-field region tools.

Conventions
-----------
The array lies in the x-z plane, centred at the origin, and radiates toward
``y > 0``.  Antenna ``(x, z)`` (1-based) sits at
``((2x - N_x - 1) d / 2, 0, (2z - N_z - 1) d / 2)``.

A direction is described by ``(y, phi, theta)`` with ``x = y tan(phi)`` and
``z = y tan(theta)``; ``phi`` and ``theta`` are the angles of the projections
onto the x-y and y-z planes measured from the +y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

SPEED_OF_LIGHT = 3e8
"Propagation speed in m/s (rounded; reproduces the tabulated Rayleigh distances)."

NF_PHASE_THRESHOLD = math.pi / 8


@dataclass(frozen=True)
class ArrayConfig:
    """Half-wavelength uniform planar array at a single carrier."""

    n_x: int
    n_z: int
    carrier_hz: float = 28e9

    def __post_init__(self):
        if int(self.n_x) != self.n_x or self.n_x < 1:
            raise ValueError(f"n_x must be a positive integer, got {self.n_x!r}")
        if int(self.n_z) != self.n_z or self.n_z < 1:
            raise ValueError(f"n_z must be a positive integer, got {self.n_z!r}")
        if not self.carrier_hz > 0:
            raise ValueError(f"carrier_hz must be positive, got {self.carrier_hz!r}")

    @cached_property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @cached_property
    def spacing_m(self) -> float:
        return self.wavelength_m / 2

    @cached_property
    def aperture_x_m(self) -> float:
        return (self.n_x - 1) * self.spacing_m

    @cached_property
    def aperture_z_m(self) -> float:
        return (self.n_z - 1) * self.spacing_m

    @cached_property
    def diagonal_m(self) -> float:
        return math.hypot(self.aperture_x_m, self.aperture_z_m)

    @cached_property
    def min_aperture_m(self) -> float:
        return min(self.aperture_x_m, self.aperture_z_m)

    @property
    def n_elements(self) -> int:
        return self.n_x * self.n_z

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi / self.wavelength_m

    @cached_property
    def positions(self) -> np.ndarray:
        """All antenna positions, shape ``(n_x * n_z, 3)``, row ``(x-1)*n_z + (z-1)``."""
        xs = (2 * np.arange(1, self.n_x + 1) - self.n_x - 1) / 2 * self.spacing_m
        zs = (2 * np.arange(1, self.n_z + 1) - self.n_z - 1) / 2 * self.spacing_m
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        pos = np.zeros((self.n_elements, 3))
        pos[:, 0] = gx.ravel()
        pos[:, 2] = gz.ravel()
        pos.setflags(write=False)
        return pos

    @cached_property
    def corner_positions(self) -> np.ndarray:
        hx, hz = self.aperture_x_m / 2, self.aperture_z_m / 2
        return np.array([[-hx, 0, -hz], [-hx, 0, hz], [hx, 0, -hz], [hx, 0, hz]])

    def flat_index(self, x: int, z: int) -> int:
        """0-based position in a weight vector of the 1-based antenna (x, z)."""
        _check_index(self, x, z)
        return (x - 1) * self.n_z + (z - 1)

    def describe(self) -> dict:
        return {
            "n_x": self.n_x,
            "n_z": self.n_z,
            "carrier_hz": self.carrier_hz,
            "wavelength_m": self.wavelength_m,
            "spacing_m": self.spacing_m,
            "aperture_x_m": self.aperture_x_m,
            "aperture_z_m": self.aperture_z_m,
            "diagonal_m": self.diagonal_m,
        }


class Direction(NamedTuple):
    """Depth/azimuth/elevation description of a point in front of the array."""

    y_m: float
    phi_rad: float
    theta_rad: float


def _check_index(cfg: ArrayConfig, x: int, z: int) -> None:
    if not (1 <= x <= cfg.n_x and 1 <= z <= cfg.n_z):
        raise ValueError(f"antenna index ({x}, {z}) outside 1..{cfg.n_x} x 1..{cfg.n_z}")


def antenna_position(cfg: ArrayConfig, x: int, z: int) -> np.ndarray:
    _check_index(cfg, x, z)
    d = cfg.spacing_m
    return np.array([(2 * x - cfg.n_x - 1) / 2 * d, 0.0, (2 * z - cfg.n_z - 1) / 2 * d])


def direction_from_point(p) -> Direction:
    x, y, z = (float(c) for c in p)
    if not y > 0:
        raise ValueError(f"point must lie in front of the array (y > 0), got y={y}")
    return Direction(y, math.atan2(x, y), math.atan2(z, y))


def point_from_direction(t: Direction) -> np.ndarray:
    y, phi, theta = t
    if not y > 0:
        raise ValueError(f"depth must be positive, got {y}")
    return np.array([y * math.tan(phi), y, y * math.tan(theta)])


def points_from_tangents(y, tan_phi, tan_theta) -> np.ndarray:
    """Vectorised ``(y, tan phi, tan theta) -> (x, y, z)``; broadcasts its inputs."""
    y, tp, tt = np.broadcast_arrays(np.asarray(y, float), np.asarray(tan_phi, float),
                                    np.asarray(tan_theta, float))
    return np.stack([y * tp, y, y * tt], axis=-1)


def rayleigh_distance(cfg: ArrayConfig) -> float:
    return 2 * cfg.diagonal_m ** 2 / cfg.wavelength_m


def fresnel_distance(cfg: ArrayConfig) -> float:
    return 0.62 * math.sqrt(cfg.diagonal_m ** 3 / cfg.wavelength_m)


def ff_phase_error(cfg: ArrayConfig, x: int, z: int, p) -> float:
    """Phase error (rad) of the plane-wave approximation for antenna (x, z) at ``p``."""
    return float(phase_error_at(cfg, antenna_position(cfg, x, z), np.asarray(p, float)))


def phase_error_at(cfg: ArrayConfig, antennas, points) -> np.ndarray:
    """Plane-wave phase error for every (antenna, point) pair.

    ``antennas`` has shape ``(A, 3)`` (or ``(3,)``), ``points`` shape ``(P, 3)``
    (or ``(3,)``); the result has shape ``(P, A)`` with singleton axes dropped.
    """
    a = np.atleast_2d(np.asarray(antennas, float))
    p = np.atleast_2d(np.asarray(points, float))
    norm_p = np.linalg.norm(p, axis=1, keepdims=True)
    if np.any(norm_p == 0):
        raise ValueError("phase error is undefined at the array centre")
    unit = p / norm_p
    rel = p[:, None, :] - a[None, :, :]
    dist = np.linalg.norm(rel, axis=2)
    proj = np.einsum("paj,pj->pa", rel, unit)
    beta = cfg.wavenumber * (dist - proj)
    # exact arithmetic gives beta >= 0; clip rounding noise
    beta = np.maximum(beta, 0.0)
    return beta.squeeze()


def max_corner_phase_error(cfg: ArrayConfig, points) -> np.ndarray:
    """Largest plane-wave phase error over the array, evaluated at the four corners.

    Phase error is convex along any line of antennas, so the corners attain the
    maximum over the whole aperture.
    """
    beta = np.atleast_2d(phase_error_at(cfg, cfg.corner_positions, points))
    return beta.max(axis=1)


def in_near_field(cfg: ArrayConfig, points) -> np.ndarray | bool:
    """Exact near-field membership: maximum phase error of at least pi/8."""
    pts = np.asarray(points, float)
    res = max_corner_phase_error(cfg, pts) >= NF_PHASE_THRESHOLD
    return bool(res[0]) if pts.ndim == 1 else res


def _boundary_from_cosines(cfg: ArrayConfig, ux, uz):
    D = cfg.diagonal_m
    plus = (cfg.aperture_x_m * ux + cfg.aperture_z_m * uz) ** 2
    minus = (cfg.aperture_x_m * ux - cfg.aperture_z_m * uz) ** 2
    return rayleigh_distance(cfg) * (1 - np.minimum(plus, minus) / D ** 2)


def nf_boundary_distance(cfg: ArrayConfig, phi_rad, theta_rad):
    """Approximate near-field radius in direction ``(phi, theta)``.

    The region is the union of the near-field regions of the two diagonal
    ULAs; each has radius ``R (1 - (a . u)^2 / D^2)`` with ``a`` the diagonal
    vector and ``u`` the unit direction, and the larger of the two wins.
    """
    tp, tt = np.tan(phi_rad), np.tan(theta_rad)
    norm = np.sqrt(1 + tp ** 2 + tt ** 2)
    out = _boundary_from_cosines(cfg, tp / norm, tt / norm)
    return float(out) if np.ndim(out) == 0 else out


def nf_boundary_distance_spherical(cfg: ArrayConfig, azimuth_rad, elevation_rad):
    """Same boundary, with azimuth measured from +x in the x-y plane and elevation from that plane."""
    ux = np.cos(elevation_rad) * np.cos(azimuth_rad)
    uz = np.sin(elevation_rad)
    out = _boundary_from_cosines(cfg, ux, uz)
    return float(out) if np.ndim(out) == 0 else out


def nf_boundary_distance_exact(cfg: ArrayConfig, phi_rad: float, theta_rad: float,
                               rtol: float = 1e-10) -> float:
    """Radius where the maximum corner phase error drops to pi/8, by bisection."""
    u = point_from_direction(Direction(1.0, phi_rad, theta_rad))
    u /= np.linalg.norm(u)
    lo, hi = 1e-9, 2 * rayleigh_distance(cfg)
    if max_corner_phase_error(cfg, hi * u)[0] >= NF_PHASE_THRESHOLD:
        return hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if max_corner_phase_error(cfg, mid * u)[0] >= NF_PHASE_THRESHOLD:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def in_serving_region(cfg: ArrayConfig, points, exact: bool = False,
                      half_angle: float = math.pi / 4) -> np.ndarray | bool:
    """Membership in the served pyramidal region in front of the array.

    By default uses ``|phi|, |theta| < half_angle``.  With ``exact=True`` the
    aperture-offset form ``|x| < y + D_x/2, |z| < y + D_z/2`` is used (only for
    the default half-angle of pi/4).
    """
    pts = np.asarray(points, float)
    p = np.atleast_2d(pts)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    if exact:
        ok = (y > 0) & (np.abs(x) < y + cfg.aperture_x_m / 2) & (np.abs(z) < y + cfg.aperture_z_m / 2)
    else:
        t = math.tan(half_angle)
        ok = (y > 0) & (np.abs(x) < t * y) & (np.abs(z) < t * y)
    return bool(ok[0]) if pts.ndim == 1 else ok


def sample_hemisphere(radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in ``{y > 0, |p| <= radius}``."""
    out = np.empty((0, 3))
    while len(out) < n:
        cand = rng.uniform(-1, 1, size=(2 * (n - len(out)) + 16, 3))
        cand = cand[np.einsum("ij,ij->i", cand, cand) <= 1]
        out = np.vstack([out, cand])
    out = out[:n]
    out[:, 1] = np.abs(out[:, 1])
    return out * radius


def nf_volume_fraction(cfg: ArrayConfig, samples: int = 1_000_000, seed: int = 0,
                       chunk: int = 200_000) -> float:
    """Monte Carlo share of the Rayleigh hemisphere that lies in the near field."""
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    radius = rayleigh_distance(cfg)
    children = np.random.SeedSequence(seed).spawn(-(-samples // chunk))
    hits = 0
    remaining = samples
    for ss in children:
        n = min(chunk, remaining)
        pts = sample_hemisphere(radius, n, np.random.default_rng(ss))
        hits += int(np.count_nonzero(in_near_field(cfg, pts)))
        remaining -= n
    return hits / samples
