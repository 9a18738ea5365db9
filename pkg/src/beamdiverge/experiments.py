"""Monte Carlo harnesses: identification accuracy, SNR-loss sweeps, pilot overhead, heatmaps.

Each trial draws from its own generator keyed by ``(seed, scenario, trial,
stream)``, so results do not depend on trial order.  Means are accumulated
with ``math.fsum``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codebook as cb
from .channel import noise_power_for, sample_channel, snr_metrics
from .geometry import ArrayConfig, fresnel_distance, rayleigh_distance
from .training import METHODS, RF_CHAINS, grid_matching_points, oracle_from_channel, train
from .wavefield import HORIZONTAL, VERTICAL, Codeword, plane_field_sample, steering_matrix

SAMPLERS = ("volume", "plane", "wide", "angle")
CSV_COLUMNS = ("scenario", "metric", "value", "n", "stderr")


@dataclass(frozen=True)
class ExperimentSpec:
    """One reproducible simulation scenario."""

    name: str = "custom"
    n_x: int = 64
    n_z: int = 64
    carrier_hz: float = 28e9
    methods: tuple = ("two-phase",)
    M: int = 9
    k_set: tuple = (2, 4, 6)
    bench_k_set: tuple = (1, 2, 3, 4, 5, 6)
    margin: int = 2
    sampler: str = "volume"
    depth_range: tuple = (7.5, 45.0)
    y_planes: tuple = ()
    angles_deg: tuple = ()
    ref_snr_db: tuple = (35.0,)
    trials: int = 500
    seed: int = 0
    rician_db: float = 13.0
    L: int = 8
    snr_convention: str = "total"
    grid_spacing: tuple = (1.0, 0.5)
    grid_slope: float = 1.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("depth bounds must be positive and ordered")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        if self.sampler == "plane" and not self.y_planes:
            raise ValueError("plane sampler needs y_planes")
        if self.sampler == "angle" and not self.angles_deg:
            raise ValueError("angle sampler needs angles_deg")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    @property
    def array(self) -> ArrayConfig:
        return ArrayConfig(self.n_x, self.n_z, self.carrier_hz)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentSpec":
        return dataclasses.replace(self, **kw)


_ALL = METHODS[:5]
_WIDE = math.sqrt(3)

PRESETS = {
    "fig5": ExperimentSpec("fig5", methods=_ALL, sampler="plane",
                           y_planes=(7.5, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0),
                           ref_snr_db=(15.0, 35.0), trials=200),
    "fig6": ExperimentSpec("fig6", methods=_ALL, sampler="angle",
                           angles_deg=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 44.0),
                           ref_snr_db=(15.0, 35.0), trials=200),
    "fig8a": ExperimentSpec("fig8a", n_x=32, n_z=32, M=8, k_set=(2, 4), bench_k_set=(1, 2, 3, 4),
                            methods=_ALL, depth_range=(1.875, 11.25), grid_spacing=(0.5, 0.25),
                            ref_snr_db=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)),
    "fig8b": ExperimentSpec("fig8b", methods=_ALL,
                            ref_snr_db=(0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)),
    "fig9a": ExperimentSpec("fig9a", n_x=16, n_z=32, M=8, k_set=(2, 4), bench_k_set=(1, 2, 3, 4),
                            methods=_ALL, depth_range=(1.25, 7.5), grid_spacing=(0.5, 0.25),
                            ref_snr_db=(0.0, 10.0, 20.0, 30.0, 40.0)),
    "fig9b": ExperimentSpec("fig9b", n_x=32, n_z=64, M=9, methods=_ALL, depth_range=(5.0, 30.0),
                            grid_spacing=(1.0, 0.5), ref_snr_db=(0.0, 10.0, 20.0, 30.0, 40.0)),
    "fig10a": ExperimentSpec("fig10a", n_x=32, n_z=32, M=8, k_set=(2, 4), bench_k_set=(1, 2, 3, 4),
                             methods=_ALL, sampler="wide", depth_range=(1.875, 11.25),
                             grid_spacing=(0.5, 0.25), grid_slope=_WIDE,
                             ref_snr_db=(0.0, 10.0, 20.0, 30.0, 40.0)),
    "fig10b": ExperimentSpec("fig10b", methods=_ALL, sampler="wide", grid_slope=_WIDE,
                             ref_snr_db=(0.0, 10.0, 20.0, 30.0, 40.0)),
    "table1": ExperimentSpec("table1", sampler="plane", y_planes=(0.0, 0.3, 0.7),
                             ref_snr_db=(10.0, 40.0), trials=2000),
    "table2": ExperimentSpec("table2", n_x=64, n_z=1, sampler="plane", y_planes=(0.0, 0.3, 0.7),
                             ref_snr_db=(10.0, 40.0), trials=2000),
    "table3": ExperimentSpec("table3", methods=METHODS, trials=200),
}


def get_preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class ResultTable:
    """Rows of ``(scenario, metric, value, n, stderr)`` plus run metadata.

    ``stderr`` holds the binomial standard error for accuracies and the sample
    standard deviation for losses and pilot counts.
    """

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, scenario: str, metric: str, value: float, n: int, stderr: float = float("nan")):
        self.rows.append((str(scenario), str(metric), float(value), int(n), float(stderr)))

    def get(self, scenario: str, metric: str):
        for r in self.rows:
            if r[0] == scenario and r[1] == metric:
                return r
        raise KeyError((scenario, metric))

    def value(self, scenario: str, metric: str) -> float:
        return self.get(scenario, metric)[2]

    def to_csv_string(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r[0], r[1], repr(r[2]), r[3], repr(r[4])])
        return buf.getvalue()

    def write(self, path) -> tuple:
        """Write ``path`` (CSV) and its ``.json`` metadata sidecar; returns both paths."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_string())
        side = path.with_suffix(".json")
        side.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path, side


def _metadata(spec: ExperimentSpec | None, **extra) -> dict:
    md = dict(extra)
    if spec is not None:
        md.update(seed=spec.seed, spec=spec.to_dict(), spec_sha256=spec.content_hash())
    return md


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _mean_sd(vals):
    n = len(vals)
    if n == 0:
        return float("nan"), float("nan")
    mean = math.fsum(vals) / n
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    return mean, sd


# -- UE sampling --------------------------------------------------------------

def plane_depth(cfg: ArrayConfig, k_hat: float) -> float:
    """Depth between Fresnel (k=0) and Rayleigh (k=1) distances."""
    return (1 - k_hat) * fresnel_distance(cfg) + k_hat * rayleigh_distance(cfg)


def sample_ue(spec: ExperimentSpec, rng: np.random.Generator, plane: float | None = None,
              angle_deg: float | None = None) -> np.ndarray:
    lo, hi = spec.depth_range
    if spec.sampler == "plane":
        y = float(plane)
    else:
        y = rng.uniform(lo, hi)
    if spec.sampler == "angle":
        a = math.tan(math.radians(angle_deg))
        other = rng.uniform(-a, a)
        main = a * rng.choice((-1.0, 1.0))
        tx, tz = (main, other) if rng.uniform() < 0.5 else (other, main)
        return np.array([tx * y, y, tz * y])
    s = _WIDE if spec.sampler == "wide" else 1.0
    x, z = rng.uniform(-s * y, s * y, 2)
    return np.array([x, y, z])


# -- identification accuracy --------------------------------------------------

def _region_masks(cfg, focal_points, region_kind, pts, axis):
    if region_kind == "frustum-rect":
        return np.stack([cb.rect_region_contains(cfg, v, pts) for v in focal_points], axis=1)
    if region_kind == "shell":
        return np.stack([cb.shell_region_contains(cfg, v, pts, axis) for v in focal_points], axis=1)
    raise ValueError(f"region_kind must be 'frustum-rect' or 'shell', got {region_kind!r}")


def _codebook_weights(cfg, focal_points, region_kind, axis):
    from .wavefield import axis_diverging_weights, diverging_weights
    V = np.asarray(focal_points, float)
    if region_kind == "shell":
        return axis_diverging_weights(cfg, V, axis)
    return diverging_weights(cfg, V)


def table_focal_points(cfg: ArrayConfig, level: int, kind: str = "frustum-rect") -> np.ndarray:
    """Accuracy-table codeword sets: ``(+-k_x/2 D_x, -k_y D_x, +-k_z/2 D_z)`` with odd ``k_x``.

    Level ``m`` uses ``k_x, k_z in {1, 3, .., 2**m - 1}`` and ``k_y = 2**(m-1)``.
    """
    n = 2 ** level
    ks = np.arange(1, n, 2)
    signed = np.concatenate([-ks[::-1], ks]) / 2
    yv = -(2 ** (level - 1)) * cfg.aperture_x_m
    if kind == "shell":
        return np.array([[sx * cfg.aperture_x_m, yv, 0.0] for sx in signed])
    return np.array([[sx * cfg.aperture_x_m, yv, sz * cfg.aperture_z_m] for sx in signed for sz in signed])


class Estimate(tuple):
    """``(value, n, stderr)`` for a Bernoulli-mean estimate."""

    __slots__ = ()

    def __new__(cls, value, n, stderr):
        return super().__new__(cls, (float(value), int(n), float(stderr)))

    value = property(lambda self: self[0])
    n = property(lambda self: self[1])
    stderr = property(lambda self: self[2])


def identification_accuracy(cfg: ArrayConfig, focal_points, region_kind: str, y_plane: float,
                            gamma_db: float, trials: int = 2000, seed: int = 0,
                            axis: str = HORIZONTAL, chunk: int = 256) -> Estimate:
    """Probability that the strongest pilot's region contains the UE.

    LOS-only channel with unit gain and ``sigma^2 = 1/gamma``; UE uniform on
    ``|x|, |z| < y_plane``.  Any region containing the UE counts as correct,
    since regions of one set overlap.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    V = np.atleast_2d(np.asarray(focal_points, float))
    cov = sample_plane_points(cfg, y_plane, 20_000, _rng(seed, 2**31 - 1))
    if not _region_masks(cfg, V, region_kind, cov, axis).any(axis=1).all():
        raise ValueError("focal points do not cover the sampled plane")
    W = _codebook_weights(cfg, V, region_kind, axis)
    sigma2 = 0.0 if math.isinf(gamma_db) else 10 ** (-gamma_db / 10)
    hits = 0
    for s in range(0, trials, chunk):
        idx = range(s, min(s + chunk, trials))
        rngs = [_rng(seed, t) for t in idx]
        pts = np.array([[r.uniform(-y_plane, y_plane), y_plane, r.uniform(-y_plane, y_plane)] for r in rngs])
        g0 = np.array([np.exp(1j * r.uniform(0, 2 * math.pi)) for r in rngs])
        y = g0[:, None] * (steering_matrix(cfg, pts) @ W.T)
        if sigma2 > 0:
            n = np.array([r.standard_normal((len(V), 2)) for r in rngs])
            y = y + (n[..., 0] + 1j * n[..., 1]) * math.sqrt(sigma2 / 2)
        choice = np.argmax(np.abs(y), axis=1)
        masks = _region_masks(cfg, V, region_kind, pts, axis)
        hits += int(masks[np.arange(len(pts)), choice].sum())
    p = hits / trials
    return Estimate(p, trials, math.sqrt(max(p * (1 - p), 0.0) / trials))


def sample_plane_points(cfg: ArrayConfig, y_plane: float, n: int, rng) -> np.ndarray:
    x = rng.uniform(-y_plane, y_plane, n)
    z = rng.uniform(-y_plane, y_plane, n)
    return np.stack([x, np.full(n, float(y_plane)), z], axis=1)


def accuracy_table(spec: ExperimentSpec, levels=(1,)) -> ResultTable:
    """Identification accuracy per (level, k_hat, gamma); ``y_planes`` hold k_hat values."""
    cfg = spec.array
    kind = "shell" if spec.n_z == 1 else "frustum-rect"
    tab = ResultTable(metadata=_metadata(spec, region_kind=kind))
    for level in levels:
        V = table_focal_points(cfg, level, kind)
        for i, kh in enumerate(spec.y_planes):
            yp = plane_depth(cfg, kh)
            for gamma in spec.ref_snr_db:
                est = identification_accuracy(cfg, V, kind, yp, gamma, spec.trials,
                                              seed=spec.seed * 1000 + i)
                tab.add(f"level={level};k_hat={kh};gamma={gamma:g}dB", "accuracy", est.value,
                        est.n, est.stderr)
    return tab


def descent_consistency(cfg: ArrayConfig, M: int, trials: int = 1000, seed: int = 0) -> Estimate:
    """Share of noiseless LOS UEs for which every hierarchical step picks a containing child."""
    from .wavefield import diverging_weights
    lo, hi = fresnel_distance(cfg), rayleigh_distance(cfg)
    Wlev = {}
    ok = 0
    for t in range(trials):
        r = _rng(seed, t)
        y = r.uniform(lo, hi)
        p = np.array([r.uniform(-y, y), y, r.uniform(-y, y)])
        h = steering_matrix(cfg, p)[0]
        node, good = cb.FrustumIndex(0, 1, 1), True
        for m in range(1, M + 1):
            kids = cb.child_indices(node)
            key = (m, node.x, node.z)
            if key not in Wlev:
                Wlev[key] = diverging_weights(cfg, np.array([cb.virtual_focal_point(cfg, k) for k in kids]))
            node = kids[int(np.argmax(np.abs(Wlev[key] @ h)))]
            if not cb.frustum_contains(cfg, node, p):
                good = False
                break
        ok += good
    p_ok = ok / trials
    return Estimate(p_ok, trials, math.sqrt(p_ok * (1 - p_ok) / trials))


# -- SNR loss -----------------------------------------------------------------

def _method_params(spec: ExperimentSpec, method: str) -> dict:
    if method in ("two-phase", "three-phase"):
        return {"k_set": spec.k_set}
    if method == "grid-matching":
        return {"params": {"spacing": spec.grid_spacing[0], "y_range": spec.depth_range,
                           "slope": spec.grid_slope}}
    return {"k_set": spec.bench_k_set, "params": {"margin": spec.margin}}


def run_trial(spec: ExperimentSpec, method: str, ue, snr_db: float, trial_key: tuple):
    """One channel draw plus one training run; returns ``(loss_db, pilots_per_phase)``."""
    cfg = spec.array
    m_idx = METHODS.index(method)
    ch = sample_channel(cfg, ue, spec.rician_db, spec.L, snr_db, _rng(*trial_key, 0),
                        spec.snr_convention)
    oracle = oracle_from_channel(cfg, ch, _rng(*trial_key, 1 + m_idx))
    kw = _method_params(spec, method)
    out = train(cfg, oracle, method, M=spec.M, k_set=kw.get("k_set"), params=kw.get("params"))
    return snr_metrics(cfg, ch, out.chosen).snr_loss_db, out.pilots_per_phase


def _scenarios(spec: ExperimentSpec):
    if spec.sampler == "plane":
        return [(f"y={y:g}m", {"plane": y}) for y in spec.y_planes]
    if spec.sampler == "angle":
        return [(f"angle={a:g}deg", {"angle_deg": a}) for a in spec.angles_deg]
    lo, hi = spec.depth_range
    return [(f"{spec.sampler}[{lo:g},{hi:g})", {})]


def snr_loss_sweep(spec: ExperimentSpec, progress=None) -> ResultTable:
    """Mean/median/P90 SNR loss per (method, scenario, reference SNR)."""
    tab = ResultTable(metadata=_metadata(spec, snr_convention=spec.snr_convention,
                                         loss_dispersion="sample standard deviation"))
    for s_idx, (label, kw) in enumerate(_scenarios(spec)):
        ues = [sample_ue(spec, _rng(spec.seed, s_idx, t, 99), **kw) for t in range(spec.trials)]
        for method in spec.methods:
            for snr in spec.ref_snr_db:
                losses = [run_trial(spec, method, ue, snr, (spec.seed, s_idx, t))[0]
                          for t, ue in enumerate(ues)]
                mean, sd = _mean_sd(losses)
                scen = f"{method};{label};snr={snr:g}dB"
                tab.add(scen, "loss_mean_db", mean, len(losses), sd)
                tab.add(scen, "loss_median_db", float(np.median(losses)), len(losses))
                tab.add(scen, "loss_p90_db", float(np.percentile(losses, 90)), len(losses))
                if progress:
                    progress(scen, mean)
    return tab


# -- pilot overhead -----------------------------------------------------------

def overhead_report(spec: ExperimentSpec, methods=None, snr_db: float = 35.0) -> ResultTable:
    """Per-phase pilot counts (min/mean/max) over trials, plus RF-chain metadata."""
    cfg = spec.array
    methods = tuple(methods or spec.methods)
    tab = ResultTable(metadata=_metadata(spec, rf_chains={m: RF_CHAINS[m] for m in methods},
                                         count_dispersion="sample standard deviation"))
    ues = [sample_ue(spec, _rng(spec.seed, 0, t, 99)) for t in range(spec.trials)]
    for method in methods:
        if method == "grid-matching":
            for tag, sp in zip(("large", "small"), spec.grid_spacing):
                n = len(grid_matching_points(spec.depth_range, sp, spec.grid_slope))
                for stat in ("min", "mean", "max"):
                    tab.add(f"{method};{tag}", f"phase1_{stat}", n, spec.trials, 0.0)
            continue
        counts = [run_trial(spec, method, ue, snr_db, (spec.seed, 0, t))[1] for t, ue in enumerate(ues)]
        counts = np.array(counts)
        for ph in range(counts.shape[1]):
            c = counts[:, ph].tolist()
            mean, sd = _mean_sd(c)
            tab.add(method, f"phase{ph + 1}_min", min(c), len(c), 0.0)
            tab.add(method, f"phase{ph + 1}_mean", mean, len(c), sd)
            tab.add(method, f"phase{ph + 1}_max", max(c), len(c), 0.0)
        tot = counts.sum(1).tolist()
        mean, sd = _mean_sd(tot)
        tab.add(method, "total_mean", mean, len(tot), sd)
    return tab


# -- heatmaps -----------------------------------------------------------------

def region_boundary(cfg: ArrayConfig, cw: Codeword, y_plane: float, samples: int = 201) -> np.ndarray:
    """Closed ``(x, z)`` polygon of the analytic bright region of ``cw`` on the plane."""
    v = cw.meta.get("point")
    if v is None:
        return np.empty((0, 2))
    xv, yv, zv = v
    if cw.label == "focusing":
        return np.array([[xv, zv]])
    ax, az = cfg.aperture_x_m / 2, cfg.aperture_z_m / 2
    if cw.label == "diverging":
        t = y_plane / yv
        x0, x1 = (xv + ax) * t - ax, (xv - ax) * t + ax
        z0, z1 = (zv + az) * t - az, (zv - az) * t + az
        return np.array([[x0, z0], [x1, z0], [x1, z1], [x0, z1], [x0, z0]])
    if cw.label == "axis-diverging":
        s = np.linspace(-y_plane, y_plane, samples)
        if cw.meta.get("axis") == VERTICAL:
            rho = np.hypot(y_plane, s) / yv
            lo, hi = (zv + az) * rho - az, (zv - az) * rho + az
            poly = np.concatenate([np.stack([s, lo], 1), np.stack([s[::-1], hi[::-1]], 1)])
        else:
            rho = np.hypot(y_plane, s) / yv
            lo, hi = (xv + ax) * rho - ax, (xv - ax) * rho + ax
            poly = np.concatenate([np.stack([lo, s], 1), np.stack([hi[::-1], s[::-1]], 1)])
        return np.vstack([poly, poly[:1]])
    return np.empty((0, 2))


def heatmap_export(cfg: ArrayConfig, cw: Codeword, y_plane: float, path, grid_resolution: int = 256,
                   grid_extent=None) -> tuple:
    """Write the amplitude grid CSV and a ``*_boundary.csv`` polygon companion."""
    xs, zs, amp = plane_field_sample(cfg, cw, y_plane, grid_extent, grid_resolution)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z\\x"] + [repr(float(x)) for x in xs])
        for z, row in zip(zs, amp):
            w.writerow([repr(float(z))] + [repr(float(a)) for a in row])
    bpath = path.with_name(path.stem + "_boundary.csv")
    with open(bpath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_m", "z_m"])
        for x, z in region_boundary(cfg, cw, y_plane):
            w.writerow([repr(float(x)), repr(float(z))])
    return path, bpath


def nf_region_report(cfg: ArrayConfig, samples: int = 1_000_000, seed: int = 0) -> ResultTable:
    from .geometry import nf_boundary_distance, nf_volume_fraction
    tab = ResultTable(metadata={"array": cfg.describe(), "seed": seed})
    n = samples
    tab.add("geometry", "rayleigh_m", rayleigh_distance(cfg), 1, 0.0)
    tab.add("geometry", "fresnel_m", fresnel_distance(cfg), 1, 0.0)
    tab.add("geometry", "boresight_boundary_m", float(nf_boundary_distance(cfg, 0.0, 0.0)), 1, 0.0)
    p = nf_volume_fraction(cfg, samples=n, seed=seed)
    tab.add("geometry", "nf_volume_fraction", p, n, math.sqrt(p * (1 - p) / n))
    return tab


def noise_for_gamma(gamma_db: float) -> float:
    """Noise variance for a unit LOS gain at LOS reference SNR ``gamma_db``."""
    return noise_power_for([1.0], gamma_db, "los")
