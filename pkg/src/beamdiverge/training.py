"""Beam-training procedures driven only through a pilot-response oracle.

Every trainer sees the channel exclusively via ``oracle.observe(W)``, which
returns noisy received pilots for a batch of codewords transmitted in row
order.  Powers are compared with ``argmax``, so ties resolve to the first
candidate, i.e. the lexicographically lowest index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import codebook as cb
from .channel import MultipathChannel, channel_vector
from .geometry import ArrayConfig, Direction, direction_from_point
from .wavefield import (HORIZONTAL, VERTICAL, Codeword, axis_diverging_weights, dft_grid,
                        dft_weights, diverging_weights, focusing_weights)

METHODS = ("two-phase", "three-phase", "upa-partitioning", "hier-dft", "dft-sweep", "grid-matching")
BENCHMARKS = METHODS[2:]
RF_CHAINS = {"two-phase": "1", "three-phase": "3", "upa-partitioning": "log2(NxNz)",
             "hier-dft": "log2(NxNz)", "dft-sweep": "3", "grid-matching": "1"}


class PilotOracle:
    """BS-to-UE pilot transmission with complex Gaussian receiver noise.

    Noise for consecutive pilots is drawn sequentially from one generator, so
    a batch of B codewords consumes the same stream as B single calls.
    """

    def __init__(self, h, noise_power: float, seed=0):
        self._h = np.asarray(h, complex)
        self.noise_power = float(noise_power)
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.pilots_sent = 0

    @property
    def n_elements(self) -> int:
        return self._h.size

    def observe(self, W) -> np.ndarray:
        W = np.atleast_2d(W.weights if isinstance(W, Codeword) else np.asarray(W, complex))
        y = W @ self._h
        if self.noise_power > 0:
            n = self._rng.standard_normal((len(W), 2))
            y = y + (n[:, 0] + 1j * n[:, 1]) * math.sqrt(self.noise_power / 2)
        self.pilots_sent += len(W)
        return y

    def __call__(self, w) -> complex:
        return complex(self.observe(w)[0])

    def powers(self, W) -> np.ndarray:
        return np.abs(self.observe(W)) ** 2


def oracle_from_channel(cfg: ArrayConfig, ch: MultipathChannel, seed=0) -> PilotOracle:
    return PilotOracle(channel_vector(cfg, ch), ch.noise_power, seed)


@dataclass
class TrainingOutcome:
    method: str
    chosen: Codeword
    focus_point: Direction | None
    pilots_per_phase: list
    identified: object = None
    trace: list = field(default_factory=list)  # (codeword id, |y|^2)

    @property
    def total_pilots(self) -> int:
        return int(sum(self.pilots_per_phase))

    def to_dict(self) -> dict:
        fp = None if self.focus_point is None else dict(self.focus_point._asdict())
        ident = self.identified
        if isinstance(ident, tuple) and hasattr(ident, "_asdict"):
            ident = dict(ident._asdict())
        elif isinstance(ident, (tuple, list)):
            ident = [dict(i._asdict()) if hasattr(i, "_asdict") else i for i in ident]
        powers = [p for _, p in self.trace]
        return {
            "method": self.method,
            "pilots_per_phase": [int(p) for p in self.pilots_per_phase],
            "total_pilots": self.total_pilots,
            "identified": ident,
            "focus_point": fp,
            "chosen": self.chosen.label,
            "trace": {"length": len(self.trace),
                      "max_power": max(powers) if powers else None,
                      "chosen_id": self.chosen.meta.get("id")},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class _Recorder:
    def __init__(self, oracle: PilotOracle):
        self.oracle = oracle
        self.trace = []

    def sweep(self, W, ids) -> np.ndarray:
        p = self.oracle.powers(W)
        self.trace.extend((i, float(v)) for i, v in zip(ids, p))
        return p


# -- refinement stage shared by all non-grid methods --------------------------

def _refine(cfg: ArrayConfig, rec: _Recorder, plan: cb.RefinementPlan, phase: str):
    pts = plan.points()
    if len(pts) == 0:
        raise RuntimeError("refinement plan is empty")
    W = focusing_weights(cfg, pts)
    ids = [f"{phase}:k={k}:{i}" for i, k in enumerate(plan.rings)]
    p = rec.sweep(W, ids)
    best = int(np.argmax(p))
    fp = plan.focus_points[best]
    cw = Codeword(W[best], "focusing", {"id": ids[best], "point": pts[best].tolist()})
    return cw, fp, len(W)


def _nonempty(plan: cb.RefinementPlan, cfg: ArrayConfig, M: int, tan_x: float, tan_z: float):
    """Fall back to the grid direction nearest ``(tan_x, tan_z)`` on every ring."""
    if len(plan):
        return plan
    ix = int(np.clip(round(float(cb.grid_index_of_tangent(M, tan_x))), 1, 2 ** M))
    iz = int(np.clip(round(float(cb.grid_index_of_tangent(M, tan_z))), 1, 2 ** M))
    for k in plan.k_set:
        y = cb.yk_distance(cfg, M, k)
        plan.focus_points.append(Direction(y, math.atan(cb.tangent_grid(M, ix)),
                                           math.atan(cb.tangent_grid(M, iz))))
        plan.rings.append(k)
    return plan


# -- proposed methods ---------------------------------------------------------

def two_phase_train(cfg: ArrayConfig, oracle: PilotOracle, M: int, k_set=(2, 4, 6),
                    mode: str = "section") -> TrainingOutcome:
    if M < 1:
        raise ValueError("M must be >= 1")
    rec = _Recorder(oracle)
    node = cb.FrustumIndex(0, 1, 1)
    for m in range(1, M + 1):
        kids = cb.child_indices(node)
        W = diverging_weights(cfg, np.array([cb.virtual_focal_point(cfg, c) for c in kids]))
        p = rec.sweep(W, [f"I:{c.m}:{c.x}:{c.z}" for c in kids])
        node = kids[int(np.argmax(p))]
    plan = cb.refinement_plan_frustum(cfg, M, node, k_set, mode=mode)
    s_lo, s_hi = cb._slopes(cfg.aperture_x_m, cfg.min_aperture_m, M, node.x)
    t_lo, t_hi = cb._slopes(cfg.aperture_z_m, cfg.min_aperture_m, M, node.z)
    plan = _nonempty(plan, cfg, M, (s_lo + s_hi) / 2, (t_lo + t_hi) / 2)
    cw, fp, n2 = _refine(cfg, rec, plan, "II")
    return TrainingOutcome("two-phase", cw, fp, [4 * M, n2], node, rec.trace)


def _shell_descent(cfg: ArrayConfig, rec: _Recorder, M: int, axis: str, tag: str) -> cb.ShellIndex:
    node = cb.ShellIndex(0, 1, axis)
    for m in range(1, M + 1):
        kids = cb.child_shells(node)
        pts = np.array([cb.axis_focal_point(cfg, c) for c in kids])
        W = axis_diverging_weights(cfg, pts, axis)
        p = rec.sweep(W, [f"{tag}:{c.m}:{c.idx}" for c in kids])
        node = kids[int(np.argmax(p))]
    return node


def three_phase_train(cfg: ArrayConfig, oracle: PilotOracle, M: int, k_set=(2, 4, 6),
                      mode: str = "section") -> TrainingOutcome:
    if M < 1:
        raise ValueError("M must be >= 1")
    rec = _Recorder(oracle)
    sh = _shell_descent(cfg, rec, M, HORIZONTAL, "I")
    sv = _shell_descent(cfg, rec, M, VERTICAL, "II")
    plan = cb.refinement_plan_rod(cfg, M, sh.idx, sv.idx, k_set, mode=mode)
    sx = cb._slopes(cfg.aperture_x_m, cfg.aperture_x_m, M, sh.idx)
    sz = cb._slopes(cfg.aperture_z_m, cfg.aperture_z_m, M, sv.idx)
    plan = _nonempty(plan, cfg, M, sum(sx) / 2, sum(sz) / 2)
    cw, fp, n3 = _refine(cfg, rec, plan, "III")
    return TrainingOutcome("three-phase", cw, fp, [2 * M, 2 * M, n3], (sh, sv), rec.trace)


# -- benchmarks ---------------------------------------------------------------

def tangent_range_from_cosines(ux_lo: float, ux_hi: float, uz_lo: float, uz_hi: float):
    """Range of ``tan phi = u_x / u_y`` over a direction-cosine box (clipped to the unit disc)."""
    ux = [ux_lo, ux_hi]
    uz = [uz_lo, uz_hi] + ([0.0] if uz_lo < 0 < uz_hi else [])
    vals = []
    for a in ux:
        for c in uz:
            s = 1 - a * a - c * c
            if s <= 1e-12:
                vals.append(math.copysign(1e6, a) if a != 0 else 0.0)
            else:
                vals.append(a / math.sqrt(s))
    return min(vals), max(vals)


def cosine_box_plan(cfg: ArrayConfig, M: int, ux_cell, uz_cell, k_set=(1, 2, 3, 4, 5, 6),
                    margin: int = 2) -> cb.RefinementPlan:
    """Refinement plan over the tangent-grid box spanned by a direction-cosine cell.

    The box is dilated by ``margin`` grid cells per side; the same box is used
    on every ring since far-field localization carries no range information.
    """
    ks = cb._check_k_set(k_set)
    txl, txh = tangent_range_from_cosines(*ux_cell, *uz_cell)
    tzl, tzh = tangent_range_from_cosines(*uz_cell, *ux_cell)
    n = 2 ** M

    def idx_range(lo, hi):
        a = math.floor(float(cb.grid_index_of_tangent(M, max(lo, -2.0)))) - margin
        b = math.ceil(float(cb.grid_index_of_tangent(M, min(hi, 2.0)))) + margin
        # a box beyond the grid edge collapses onto the edge index
        a, b = min(max(a, 1), n), max(min(b, n), 1)
        return (min(a, b), max(a, b))

    xr, zr = idx_range(txl, txh), idx_range(tzl, tzh)
    plan = cb.RefinementPlan([], ks, "cosine box")
    for k in ks:
        cb._emit(M, cb.yk_distance(cfg, M, k), xr, zr, k, plan)
    return plan


def _cell(n_beams: int, b: int):
    """Direction-cosine interval of beam ``b`` (1-based) on an ``n_beams`` grid."""
    w = 2 / n_beams
    return -1 + (b - 1) * w, -1 + b * w


def _hier_dft_axis(cfg, rec, M, axis, tag, partitioned: bool):
    n_line = cfg.n_x if axis == HORIZONTAL else cfg.n_z
    n_other = cfg.n_z if axis == HORIZONTAL else cfg.n_x
    b = 1
    for m in range(1, M + 1):
        kids = [2 * b - 1, 2 * b]
        sines = dft_grid(2 ** m)[np.array(kids) - 1]
        rows = max(1, n_other // 2 ** m) if partitioned else 1
        W = dft_weights(cfg, axis, sines, n_active=min(2 ** m, n_line), rows=rows)
        p = rec.sweep(W, [f"{tag}:{m}:{k}" for k in kids])
        b = kids[int(np.argmax(p))]
    return b


def _sweep_axis(cfg, rec, n_beams, axis, tag):
    W = dft_weights(cfg, axis, dft_grid(n_beams))
    p = rec.sweep(W, [f"{tag}:{b}" for b in range(1, n_beams + 1)])
    return int(np.argmax(p)) + 1


def grid_matching_points(y_range, spacing: float, slope: float = 1.0, eps: float = 1e-9) -> np.ndarray:
    """Uniform 3D grid of focusing points inside ``|x|, |z| <= slope * y``.

    Depth layers start at ``y_range[0]`` with the given spacing; the lateral
    lattice is common to all layers and centred on boresight.
    """
    y_lo, y_hi = y_range
    if not (spacing > 0 and 0 < y_lo <= y_hi and slope > 0):
        raise ValueError("invalid grid parameters")
    ys = np.arange(y_lo, y_hi + eps, spacing)
    half = slope * ys[-1]
    lat = np.arange(-half, half + eps, spacing)
    out = []
    for y in ys:
        keep = lat[np.abs(lat) <= slope * y + eps]
        gx, gz = np.meshgrid(keep, keep, indexing="ij")
        out.append(np.stack([gx.ravel(), np.full(gx.size, y), gz.ravel()], axis=1))
    return np.vstack(out)


def benchmark_train(cfg: ArrayConfig, oracle: PilotOracle, method: str, params=None) -> TrainingOutcome:
    """Benchmark trainers; ``params`` keys depend on ``method``.

    Common keys: ``M`` (default 9), ``k_set`` (default rings 1..6), ``margin``
    (grid cells added around the far-field direction box, default 2).
    ``dft-sweep`` takes ``n_beams`` (default ``2**M``).  ``grid-matching``
    takes ``spacing``, ``y_range``, ``slope`` and ``chunk``.
    """
    params = dict(params or {})
    if method not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {method!r}; expected one of {BENCHMARKS}")
    rec = _Recorder(oracle)
    if method == "grid-matching":
        return _grid_matching(cfg, rec, params)
    M = int(params.pop("M", 9))
    k_set = tuple(params.pop("k_set", (1, 2, 3, 4, 5, 6)))
    margin = int(params.pop("margin", 2))
    n_beams = params.pop("n_beams", None)
    if params:
        raise ValueError(f"unexpected parameters for {method}: {sorted(params)}")
    if M < 1 or margin < 0:
        raise ValueError("M must be >= 1 and margin >= 0")
    if method == "dft-sweep":
        nb = int(n_beams or 2 ** M)
        bx = _sweep_axis(cfg, rec, nb, HORIZONTAL, "I")
        bz = _sweep_axis(cfg, rec, nb, VERTICAL, "II")
        cx, cz = _cell(nb, bx), _cell(nb, bz)
        loc = [nb, nb]
    else:
        part = method == "upa-partitioning"
        bx = _hier_dft_axis(cfg, rec, M, HORIZONTAL, "I", part)
        bz = _hier_dft_axis(cfg, rec, M, VERTICAL, "II", part)
        cx, cz = _cell(2 ** M, bx), _cell(2 ** M, bz)
        loc = [2 * M, 2 * M]
    plan = cosine_box_plan(cfg, M, cx, cz, k_set, margin)
    cw, fp, n3 = _refine(cfg, rec, plan, "III")
    return TrainingOutcome(method, cw, fp, loc + [n3], {"beam_x": bx, "beam_z": bz}, rec.trace)


def _grid_matching(cfg: ArrayConfig, rec: _Recorder, params: dict) -> TrainingOutcome:
    spacing = float(params.pop("spacing", 1.0))
    y_range = tuple(params.pop("y_range", (7.5, 45.0)))
    slope = float(params.pop("slope", 1.0))
    chunk = int(params.pop("chunk", 2048))
    params.pop("M", None)
    params.pop("k_set", None)
    if params:
        raise ValueError(f"unexpected parameters for grid-matching: {sorted(params)}")
    pts = grid_matching_points(y_range, spacing, slope)
    best_p, best_i = -1.0, -1
    for s in range(0, len(pts), chunk):
        W = focusing_weights(cfg, pts[s:s + chunk])
        p = rec.oracle.powers(W)
        rec.trace.extend((f"G:{s + i}", float(v)) for i, v in enumerate(p))
        i = int(np.argmax(p))
        if p[i] > best_p:
            best_p, best_i = float(p[i]), s + i
    w = focusing_weights(cfg, pts[best_i])[0]
    cw = Codeword(w, "focusing", {"id": f"G:{best_i}", "point": pts[best_i].tolist()})
    return TrainingOutcome("grid-matching", cw, direction_from_point(pts[best_i]), [len(pts)],
                           {"grid_index": best_i, "spacing": spacing}, rec.trace)


def train(cfg: ArrayConfig, oracle: PilotOracle, method: str, M: int = 9, k_set=None,
          params=None) -> TrainingOutcome:
    """Dispatch by method name with each family's default ring set."""
    if method == "two-phase":
        return two_phase_train(cfg, oracle, M, k_set or (2, 4, 6))
    if method == "three-phase":
        return three_phase_train(cfg, oracle, M, k_set or (2, 4, 6))
    p = {"M": M, **(params or {})}
    if k_set is not None:
        p["k_set"] = k_set
    return benchmark_train(cfg, oracle, method, p)
