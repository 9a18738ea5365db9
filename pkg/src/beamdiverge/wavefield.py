"""Spherical-wave steering vectors, codewords and received-amplitude maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayConfig

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
AXES = (HORIZONTAL, VERTICAL)


@dataclass(frozen=True, eq=False)
class Codeword:
    """Unit-norm complex weight vector over the flattened array.

    Entry ``(x-1)*N_z + (z-1)`` drives antenna ``(x, z)``.
    """

    weights: np.ndarray
    label: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=complex)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.weights))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.weights))

    def is_phase_only(self, tol: float = 1e-12) -> bool:
        mags = np.abs(self.weights[self.weights != 0])
        return bool(np.all(np.abs(mags - 1 / math.sqrt(len(mags))) <= tol))


def _as_points(points) -> np.ndarray:
    return np.atleast_2d(np.asarray(points, dtype=float))


def distances(cfg: ArrayConfig, points) -> np.ndarray:
    """Antenna-to-point distances, shape ``(P, N)``."""
    p = _as_points(points)
    diff = p[:, None, :] - cfg.positions[None, :, :]
    return np.sqrt(np.einsum("pnj,pnj->pn", diff, diff))


def steering_matrix(cfg: ArrayConfig, points) -> np.ndarray:
    """Rows are the steering vectors ``exp(-j k |p_xz - s|)`` of each point."""
    dist = distances(cfg, points)
    if np.any(dist < 1e-12):
        raise ValueError("steering point coincides with an antenna")
    return np.exp(-1j * cfg.wavenumber * dist)


def steering_vector(cfg: ArrayConfig, s) -> np.ndarray:
    return steering_matrix(cfg, s)[0]


def diverging_weights(cfg: ArrayConfig, points) -> np.ndarray:
    p = _as_points(points)
    if np.any(p[:, 1] >= 0):
        raise ValueError("virtual focal point must be behind the array (y < 0)")
    return steering_matrix(cfg, p) / math.sqrt(cfg.n_elements)


def focusing_weights(cfg: ArrayConfig, points) -> np.ndarray:
    p = _as_points(points)
    if np.any(p[:, 1] <= 0):
        raise ValueError("focus point must be in front of the array (y > 0)")
    return np.conj(steering_matrix(cfg, p)) / math.sqrt(cfg.n_elements)


def diverging_codeword(cfg: ArrayConfig, v) -> Codeword:
    return Codeword(diverging_weights(cfg, v)[0], "diverging", {"point": list(map(float, v))})


def focusing_codeword(cfg: ArrayConfig, u) -> Codeword:
    return Codeword(focusing_weights(cfg, u)[0], "focusing", {"point": list(map(float, u))})


def central_line_mask(cfg: ArrayConfig, axis: str) -> np.ndarray:
    """Boolean mask of the central row (horizontal) or column (vertical)."""
    mask = np.zeros((cfg.n_x, cfg.n_z), dtype=bool)
    if axis == HORIZONTAL:
        mask[:, math.ceil(cfg.n_z / 2) - 1] = True
    elif axis == VERTICAL:
        mask[math.ceil(cfg.n_x / 2) - 1, :] = True
    else:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    return mask.ravel()


def axis_diverging_weights(cfg: ArrayConfig, points, axis: str) -> np.ndarray:
    """Diverging weights restricted to the central row or column."""
    p = _as_points(points)
    if np.any(p[:, 1] >= 0):
        raise ValueError("virtual focal point must be behind the array (y < 0)")
    mask = central_line_mask(cfg, axis)
    n_active = int(mask.sum())
    out = np.zeros((len(p), cfg.n_elements), dtype=complex)
    sub = distances(cfg, p)[:, mask]
    out[:, mask] = np.exp(-1j * cfg.wavenumber * sub) / math.sqrt(n_active)
    return out


def axis_restricted_diverging_codeword(cfg: ArrayConfig, v, axis: str) -> Codeword:
    w = axis_diverging_weights(cfg, v, axis)[0]
    return Codeword(w, "axis-diverging", {"point": list(map(float, v)), "axis": axis})


def dft_grid(n_beams: int) -> np.ndarray:
    """Direction-cosine beam centres ``-1 + (2b - 1) / n`` for ``b = 1..n``."""
    return -1 + (2 * np.arange(1, n_beams + 1) - 1) / n_beams


def dft_weights(cfg: ArrayConfig, axis: str, sines, n_active: int | None = None,
                rows: int = 1) -> np.ndarray:
    """Far-field DFT-style weights on the central line(s) of the array.

    ``sines`` are the steering direction cosines along ``axis``.  ``n_active``
    central elements of the line are driven (all by default).  ``rows > 1``
    drives that many central parallel lines, each steered across the other
    axis to a different cell of a ``rows``-point DFT grid so that together
    they keep a wide footprint in the orthogonal direction.
    """
    sines = np.atleast_1d(np.asarray(sines, float))
    n_line = cfg.n_x if axis == HORIZONTAL else cfg.n_z
    n_other = cfg.n_z if axis == HORIZONTAL else cfg.n_x
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    n_active = n_line if n_active is None else int(n_active)
    if not 1 <= n_active <= n_line:
        raise ValueError(f"n_active must lie in 1..{n_line}")
    rows = int(rows)
    if not 1 <= rows <= n_other:
        raise ValueError(f"rows must lie in 1..{n_other}")
    start = (n_line - n_active) // 2
    along = np.arange(n_line)
    active_along = (along >= start) & (along < start + n_active)
    centre_other = math.ceil(n_other / 2) - 1
    first_row = centre_other - (rows - 1) // 2
    first_row = min(max(first_row, 0), n_other - rows)
    other_idx = np.arange(first_row, first_row + rows)
    row_sines = dft_grid(rows) if rows > 1 else np.zeros(1)

    grid = np.zeros((len(sines), n_line, n_other), dtype=complex)
    phase_along = np.exp(-1j * math.pi * np.outer(sines, along))  # (B, n_line)
    phase_along = phase_along * active_along
    phase_other = np.exp(-1j * math.pi * np.outer(row_sines, np.arange(rows)))  # (rows, rows)
    for r, oi in enumerate(other_idx):
        grid[:, :, oi] = phase_along * phase_other[r, r]
    if axis == VERTICAL:
        grid = grid.transpose(0, 2, 1)
    w = grid.reshape(len(sines), -1)
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def dft_codeword(cfg: ArrayConfig, axis: str, beam_index: int, level: int | None = None) -> Codeword:
    """DFT beam ``beam_index`` (1-based) on the central horizontal/vertical line.

    Without ``level`` the grid has one beam per element of the line.  At
    ``level = m`` the grid has ``2**m`` beams and the central ``min(2**m, N)``
    elements are active, which widens the beam at coarse levels.
    """
    n_line = cfg.n_x if axis == HORIZONTAL else cfg.n_z
    if level is None:
        n_beams, n_active = n_line, n_line
    else:
        if level < 0:
            raise ValueError("level must be non-negative")
        n_beams, n_active = 2 ** level, min(2 ** level, n_line)
    if not 1 <= beam_index <= n_beams:
        raise ValueError(f"beam_index must lie in 1..{n_beams}")
    s = dft_grid(n_beams)[beam_index - 1]
    w = dft_weights(cfg, axis, [s], n_active=n_active)[0]
    return Codeword(w, "dft", {"axis": axis, "beam": beam_index, "level": level, "sine": float(s)})


def _weights(w) -> np.ndarray:
    return w.weights if isinstance(w, Codeword) else np.asarray(w, dtype=complex)


def response_matrix(cfg: ArrayConfig, weights, points) -> np.ndarray:
    """``|c(p)^T w|`` for every (codeword, point) pair; shape ``(W, P)``."""
    W = np.atleast_2d(_weights(weights))
    C = steering_matrix(cfg, points) / math.sqrt(cfg.n_elements)
    return np.abs(W @ C.T)


def normalized_response(cfg: ArrayConfig, w, p) -> float:
    """Normalised LOS amplitude ``|c(p)^T w|`` seen at ``p`` for codeword ``w``."""
    p = np.asarray(p, float)
    if p[1] <= 0:
        raise ValueError("observation point must be in front of the array")
    return float(response_matrix(cfg, w, p)[0, 0])


def plane_field_sample(cfg: ArrayConfig, w, y_plane_m: float, grid_extent=None,
                       grid_resolution: int = 256, chunk: int = 4096):
    """Amplitude map on the plane ``y = y_plane_m``.

    ``grid_extent`` is ``(x_min, x_max, z_min, z_max)`` and defaults to the
    serving-region footprint ``|x|, |z| <= y``.  Returns ``(xs, zs, amp)``
    where ``amp[i, j]`` is the response at ``(xs[j], y, zs[i])``.
    """
    if not y_plane_m > 0:
        raise ValueError("plane depth must be positive")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    if grid_extent is None:
        grid_extent = (-y_plane_m, y_plane_m, -y_plane_m, y_plane_m)
    x0, x1, z0, z1 = grid_extent
    xs = np.linspace(x0, x1, grid_resolution)
    zs = np.linspace(z0, z1, grid_resolution)
    gz, gx = np.meshgrid(zs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), np.full(gx.size, y_plane_m), gz.ravel()], axis=1)
    wv = _weights(w)
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        out[i:i + chunk] = response_matrix(cfg, wv, pts[i:i + chunk])[0]
    return xs, zs, out.reshape(gz.shape)
