import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from beamdiverge.channel import (MultipathChannel, Path, channel_vector, noise_power_for, pilot_response,
                                 sample_channel, sample_scatterers, snr_loss_floor_db, snr_metrics)
from beamdiverge.geometry import ArrayConfig, fresnel_distance, in_serving_region, rayleigh_distance
from beamdiverge.wavefield import diverging_codeword, focusing_codeword, steering_vector

UE = (1.0, 10.0, 1.0)


class TestSampleChannel:
    def test_rician_factor_exact(self, cfg32):
        ch = sample_channel(cfg32, (0.5, 5.0, -0.5), rician_db=13, L=8, seed=1)
        assert ch.rician_factor == pytest.approx(19.953, abs=1e-3)
        assert ch.rician_factor == pytest.approx(10 ** 1.3, rel=1e-9)
        assert len(ch.nlos) == 8
        assert abs(ch.los.gain) == pytest.approx(1.0, abs=1e-12)

    @given(st.floats(-5, 30), st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
    def test_energy_normalisation(self, k_db, L, seed):
        cfg = ArrayConfig(8, 8)
        ch = sample_channel(cfg, (0.1, 1.0, 0.1), rician_db=k_db, L=L, seed=seed)
        nl = math.fsum(abs(p.gain) ** 2 for p in ch.nlos)
        assert nl == pytest.approx(abs(ch.los.gain) ** 2 * 10 ** (-k_db / 10), rel=1e-9)

    def test_pure_los(self, cfg32):
        ch = sample_channel(cfg32, UE, rician_db=math.inf, L=8, seed=2)
        assert ch.nlos == ()
        h = channel_vector(cfg32, ch)
        assert np.allclose(np.abs(h), 1.0)
        assert np.allclose(h, ch.los.gain * steering_vector(cfg32, UE), atol=1e-15)

    def test_seeded(self, cfg32):
        assert sample_channel(cfg32, UE, seed=5) == sample_channel(cfg32, UE, seed=5)
        assert sample_channel(cfg32, UE, seed=5) != sample_channel(cfg32, UE, seed=6)

    def test_domain_errors(self, cfg32):
        with pytest.raises(ValueError):
            sample_channel(cfg32, (30.0, 5.0, 0.0))
        with pytest.raises(ValueError):
            sample_channel(cfg32, UE, L=-1)

    def test_scatterers_in_region(self, cfg64, rng):
        s = sample_scatterers(cfg64, 5000, rng)
        assert np.all(in_serving_region(cfg64, s))
        assert s[:, 1].min() >= fresnel_distance(cfg64) and s[:, 1].max() <= rayleigh_distance(cfg64)

    def test_reference_snr_conventions(self, cfg32):
        ch = sample_channel(cfg32, UE, ref_snr_db=20, seed=3)
        total = float(np.sum(np.abs(ch.gains) ** 2))
        assert total / ch.noise_power == pytest.approx(100.0, rel=1e-12)
        los = sample_channel(cfg32, UE, ref_snr_db=20, seed=3, convention="los")
        assert abs(los.los.gain) ** 2 / los.noise_power == pytest.approx(100.0, rel=1e-12)
        with pytest.raises(ValueError):
            noise_power_for([1.0], 10, "bogus")

    def test_json_round_trip(self, cfg32):
        ch = sample_channel(cfg32, UE, seed=9)
        back = MultipathChannel.from_json(ch.to_json())
        assert back == ch


class TestChannelVector:
    def test_path_loop(self, cfg32):
        ch = sample_channel(cfg32, UE, seed=4)
        acc = np.zeros(cfg32.n_elements, complex)
        for p in ch.paths:
            acc += p.gain * steering_vector(cfg32, p.position)
        assert np.allclose(channel_vector(cfg32, ch), acc, atol=1e-12)

    def test_linearity(self, cfg32):
        ch = sample_channel(cfg32, UE, seed=4)
        doubled = MultipathChannel(Path(ch.los.position, 2 * ch.los.gain),
                                   tuple(Path(p.position, 2 * p.gain) for p in ch.nlos), ch.noise_power)
        assert np.allclose(channel_vector(cfg32, doubled), 2 * channel_vector(cfg32, ch), atol=1e-12)


class TestPilots:
    def test_noiseless(self, cfg32):
        ch = sample_channel(cfg32, UE, ref_snr_db=math.inf, seed=1)
        w = focusing_codeword(cfg32, UE)
        obs = pilot_response(cfg32, ch, w, 0)
        assert obs.value == pytest.approx(complex(channel_vector(cfg32, ch) @ w.weights), abs=1e-12)
        assert obs.codeword_id == "focusing"

    def test_noise_statistics(self, cfg32):
        ch = sample_channel(cfg32, UE, ref_snr_db=0.0, seed=1)
        w = diverging_codeword(cfg32, (0.0, -0.2, 0.0))
        h = channel_vector(cfg32, ch)
        clean = complex(h @ w.weights)
        r = np.random.default_rng(0)
        vals = np.array([pilot_response(cfg32, ch, w, r, h).value for _ in range(10_000)])
        assert np.var(vals) == pytest.approx(ch.noise_power, rel=0.05)
        assert np.mean(np.abs(vals) ** 2) == pytest.approx(abs(clean) ** 2 + ch.noise_power, rel=0.05)


class TestSNR:
    def test_perfect_los_alignment(self, cfg32):
        ch = sample_channel(cfg32, UE, rician_db=math.inf, ref_snr_db=10, seed=0)
        m = snr_metrics(cfg32, ch, focusing_codeword(cfg32, UE))
        assert m.snr_loss_db == pytest.approx(0.0, abs=1e-9)
        assert m.achieved_snr == pytest.approx(cfg32.n_elements * 10.0, rel=1e-9)
        assert m.upper_bound_snr == pytest.approx(m.achieved_snr, rel=1e-9)

    def test_floor(self):
        assert snr_loss_floor_db(13) == pytest.approx(10 * math.log10(1 + 10 ** -1.3), abs=1e-12)
        assert snr_loss_floor_db(13) == pytest.approx(0.212, abs=1e-3)

    def test_average_loss_above_floor(self, cfg32):
        losses = [snr_metrics(cfg32, sample_channel(cfg32, UE, seed=s), focusing_codeword(cfg32, UE)).snr_loss_db
                  for s in range(200)]
        assert np.mean(losses) >= snr_loss_floor_db(13) - 0.05

    def test_phase_invariance_and_bounds(self, cfg32):
        ch = sample_channel(cfg32, UE, seed=8)
        w = focusing_codeword(cfg32, (1.2, 9.0, 0.7)).weights
        a = snr_metrics(cfg32, ch, w)
        b = snr_metrics(cfg32, ch, w * np.exp(1j * 0.7))
        assert a.snr_loss_db == pytest.approx(b.snr_loss_db, abs=1e-10)
        h = channel_vector(cfg32, ch)
        assert abs(h @ w) <= np.linalg.norm(h) * np.linalg.norm(w) + 1e-12

    def test_rejects_non_unit_codeword(self, cfg32):
        ch = sample_channel(cfg32, UE, seed=8)
        with pytest.raises(ValueError):
            snr_metrics(cfg32, ch, 2 * focusing_codeword(cfg32, UE).weights)

    def test_focusing_at_ue_wins_noiseless_los(self, cfg32, rng):
        ch = sample_channel(cfg32, UE, rician_db=math.inf, ref_snr_db=20, seed=0)
        others = rng.uniform([-2, 5, -2], [2, 12, 2], size=(50, 3))
        best = snr_metrics(cfg32, ch, focusing_codeword(cfg32, UE)).achieved_snr
        assert all(snr_metrics(cfg32, ch, focusing_codeword(cfg32, p)).achieved_snr <= best for p in others)
