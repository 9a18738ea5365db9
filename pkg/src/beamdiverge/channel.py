"""Rician multipath channel, noisy pilot reception and SNR bookkeeping."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .geometry import ArrayConfig, fresnel_distance, in_serving_region, rayleigh_distance
from .wavefield import Codeword, steering_matrix

SNR_CONVENTIONS = ("total", "los")


class Path(NamedTuple):
    position: tuple
    gain: complex


class PilotObservation(NamedTuple):
    value: complex
    codeword_id: object = None

    @property
    def power(self) -> float:
        return abs(self.value) ** 2


class SNRMetrics(NamedTuple):
    achieved_snr: float
    upper_bound_snr: float
    snr_loss_db: float
    reference_snr: float
    los_reference_snr: float


@dataclass(frozen=True)
class MultipathChannel:
    los: Path
    nlos: tuple = ()
    noise_power: float = 0.0

    @property
    def paths(self) -> list:
        return [self.los, *self.nlos]

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.paths], dtype=float)

    @property
    def rician_factor(self) -> float:
        nl = sum(abs(p.gain) ** 2 for p in self.nlos)
        return math.inf if nl == 0 else abs(self.los.gain) ** 2 / nl

    def to_dict(self) -> dict:
        def path(p):
            return {"position": [float(c) for c in p.position], "gain": [p.gain.real, p.gain.imag]}
        return {"los": path(self.los), "nlos": [path(p) for p in self.nlos],
                "noise_power": self.noise_power}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MultipathChannel":
        def path(e):
            return Path(tuple(float(c) for c in e["position"]), complex(*e["gain"]))
        return cls(path(d["los"]), tuple(path(e) for e in d["nlos"]), float(d["noise_power"]))

    @classmethod
    def from_json(cls, s: str) -> "MultipathChannel":
        return cls.from_dict(json.loads(s))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_scatterers(cfg: ArrayConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points in the pyramid ``|x|, |z| < y`` between Fresnel and Rayleigh depths."""
    lo, hi = fresnel_distance(cfg), rayleigh_distance(cfg)
    # pyramid cross-section grows as y^2, so depth has cdf ~ y^3
    y = np.cbrt(lo ** 3 + rng.uniform(size=n) * (hi ** 3 - lo ** 3))
    x = rng.uniform(-1, 1, n) * y
    z = rng.uniform(-1, 1, n) * y
    return np.stack([x, y, z], axis=1)


def noise_power_for(gains, ref_snr_db: float, convention: str = "total") -> float:
    """Noise variance giving reference SNR ``ref_snr_db`` under ``convention``."""
    g = np.asarray(gains, complex)
    if convention == "total":
        power = float(np.sum(np.abs(g) ** 2))
    elif convention == "los":
        power = float(abs(g[0]) ** 2)
    else:
        raise ValueError(f"convention must be one of {SNR_CONVENTIONS}")
    if math.isinf(ref_snr_db) and ref_snr_db > 0:
        return 0.0
    return power / 10 ** (ref_snr_db / 10)


def sample_channel(cfg: ArrayConfig, ue, rician_db: float = 13.0, L: int = 8, ref_snr_db: float = 20.0,
                   seed=0, convention: str = "total") -> MultipathChannel:
    ue = tuple(float(c) for c in ue)
    if not in_serving_region(cfg, ue, exact=True):
        raise ValueError(f"UE position {ue} outside the serving region")
    if L < 0:
        raise ValueError("L must be non-negative")
    rng = _rng(seed)
    g0 = complex(np.exp(1j * rng.uniform(0, 2 * math.pi)))
    nlos = ()
    if L > 0 and not (math.isinf(rician_db) and rician_db > 0):
        pos = sample_scatterers(cfg, L, rng)
        g = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / math.sqrt(2)
        target = abs(g0) ** 2 * 10 ** (-rician_db / 10)
        g = g * math.sqrt(target / float(np.sum(np.abs(g) ** 2)))
        nlos = tuple(Path(tuple(map(float, p)), complex(gl)) for p, gl in zip(pos, g))
    sigma2 = noise_power_for([g0] + [p.gain for p in nlos], ref_snr_db, convention)
    return MultipathChannel(Path(ue, g0), nlos, sigma2)


def channel_vector(cfg: ArrayConfig, ch: MultipathChannel) -> np.ndarray:
    return ch.gains @ steering_matrix(cfg, ch.positions)


def _w(w) -> np.ndarray:
    return w.weights if isinstance(w, Codeword) else np.asarray(w, complex)


def pilot_response(cfg: ArrayConfig, ch: MultipathChannel, w, seed_stream, h=None) -> PilotObservation:
    """``h^T w + n`` with ``n ~ CN(0, sigma^2)`` drawn from ``seed_stream``."""
    h = channel_vector(cfg, ch) if h is None else h
    clean = complex(h @ _w(w))
    if ch.noise_power > 0:
        rng = _rng(seed_stream)
        clean += complex(rng.standard_normal(), rng.standard_normal()) * math.sqrt(ch.noise_power / 2)
    cid = w.label if isinstance(w, Codeword) else None
    return PilotObservation(clean, cid)


def snr_metrics(cfg: ArrayConfig, ch: MultipathChannel, w, h=None) -> SNRMetrics:
    wv = _w(w)
    if abs(np.linalg.norm(wv) - 1) > 1e-9:
        raise ValueError("codeword must have unit norm")
    h = channel_vector(cfg, ch) if h is None else h
    gain = abs(complex(h @ wv)) ** 2
    total = float(np.sum(np.abs(ch.gains) ** 2))
    los = abs(ch.los.gain) ** 2
    full = cfg.n_elements * total
    if ch.noise_power > 0:
        s2 = ch.noise_power
        achieved, upper = gain / s2, full / s2
        ref, ref_los = total / s2, los / s2
    else:
        achieved = upper = ref = ref_los = math.inf
    loss = 10 * math.log10(full / gain) if gain > 0 else math.inf
    return SNRMetrics(achieved, upper, loss, ref, ref_los)


def snr_loss_floor_db(rician_db: float) -> float:
    """Loss of the LOS-matched codeword when NLOS power is lost entirely."""
    return 10 * math.log10(1 + 10 ** (-rician_db / 10))
