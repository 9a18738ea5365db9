import math

import numpy as np
import pytest

from beamdiverge import codebook as cb
from beamdiverge.channel import channel_vector, sample_channel, snr_metrics
from beamdiverge.geometry import ArrayConfig
from beamdiverge.training import (BENCHMARKS, PilotOracle, benchmark_train, cosine_box_plan,
                                  grid_matching_points, oracle_from_channel, tangent_range_from_cosines,
                                  three_phase_train, train, two_phase_train)
from beamdiverge.wavefield import HORIZONTAL, VERTICAL, focusing_codeword, focusing_weights, steering_vector


def los_oracle(cfg, ue, snr_db=math.inf, seed=0, convention="total"):
    ch = sample_channel(cfg, ue, rician_db=math.inf, L=0, ref_snr_db=snr_db, seed=seed, convention=convention)
    return ch, oracle_from_channel(cfg, ch, seed)


def check_trace(out):
    assert len(out.trace) == out.total_pilots == sum(out.pilots_per_phase)
    ids = [i for i, _ in out.trace]
    assert out.chosen.meta["id"] in ids


class TestOracle:
    def test_noiseless_deterministic(self, cfg32):
        _, o = los_oracle(cfg32, (0.5, 4.0, 0.5))
        w = focusing_weights(cfg32, [(0.5, 4.0, 0.5), (0, 3, 0)])
        assert np.array_equal(o.observe(w), o.observe(w))
        assert o.pilots_sent == 4

    def test_same_seed_same_trace(self, cfg32):
        ch = sample_channel(cfg32, (0.5, 4.0, 0.5), ref_snr_db=0, seed=3)
        a = two_phase_train(cfg32, oracle_from_channel(cfg32, ch, 11), 8, (2, 4))
        b = two_phase_train(cfg32, oracle_from_channel(cfg32, ch, 11), 8, (2, 4))
        assert a.trace == b.trace
        c = two_phase_train(cfg32, oracle_from_channel(cfg32, ch, 12), 8, (2, 4))
        assert [p for _, p in c.trace] != [p for _, p in a.trace]

    def test_full_array_gain(self, cfg32):
        ue = (0.5, 4.0, 0.5)
        _, o = los_oracle(cfg32, ue)
        assert o.powers(focusing_codeword(cfg32, ue).weights[None, :])[0] == pytest.approx(cfg32.n_elements)

    def test_noise_variance(self):
        o = PilotOracle(np.zeros(4, complex), 2.0, seed=1)
        y = o.observe(np.ones((20_000, 4)) / 2)
        assert np.var(y) == pytest.approx(2.0, rel=0.05)


class TestTwoPhase:
    def test_pilot_accounting(self, cfg64):
        _, o = los_oracle(cfg64, (1, 10, 1))
        out = two_phase_train(cfg64, o, 9)
        assert out.pilots_per_phase[0] == 36
        assert out.pilots_per_phase[1] == 179
        check_trace(out)

    @pytest.mark.parametrize("M", [1, 3, 8])
    def test_phase_one_is_4m(self, cfg32, M):
        _, o = los_oracle(cfg32, (0.3, 3, -0.4), snr_db=10, seed=M)
        out = two_phase_train(cfg32, o, M, (1, 2))
        assert out.pilots_per_phase[0] == 4 * M
        assert out.identified.m == M

    def test_level_one_identification(self, cfg64):
        ue = (-1.0, 4.0, -1.0)
        _, o = los_oracle(cfg64, ue)
        out = two_phase_train(cfg64, o, 1, (1,))
        # the projection through the aperture is mirrored: only frustum (1,2,2) contains this UE
        hits = [fi for fi in [cb.FrustumIndex(1, x, z) for x in (1, 2) for z in (1, 2)]
                if cb.frustum_contains(cfg64, fi, ue)]
        assert hits == [(1, 2, 2)]
        assert out.identified == (1, 2, 2)

    def test_grid_point_ue_is_recovered(self, cfg64, rng):
        recovered = 0
        for _ in range(6):
            fi = cb.FrustumIndex(9, int(rng.integers(200, 313)), int(rng.integers(200, 313)))
            plan = cb.refinement_plan_frustum(cfg64, 9, fi)
            ue = plan.points()[int(rng.integers(len(plan)))]
            _, o = los_oracle(cfg64, ue)
            out = two_phase_train(cfg64, o, 9)
            final = cb.refinement_plan_frustum(cfg64, 9, out.identified).points()
            if np.any(np.all(np.isclose(final, ue, atol=1e-9), axis=1)):
                recovered += 1
                assert np.allclose(out.chosen.meta["point"], ue, atol=1e-9)
        assert recovered >= 4

    def test_argmax_over_plan(self, cfg32):
        ch = sample_channel(cfg32, (0.7, 5.0, -0.2), ref_snr_db=math.inf, seed=2)
        out = two_phase_train(cfg32, oracle_from_channel(cfg32, ch), 8, (2, 4))
        plan = cb.refinement_plan_frustum(cfg32, 8, out.identified, (2, 4))
        best = snr_metrics(cfg32, ch, out.chosen).achieved_snr if ch.noise_power else None
        h = channel_vector(cfg32, ch)
        gains = np.abs(focusing_weights(cfg32, plan.points()) @ h)
        assert abs(h @ out.chosen.weights) == pytest.approx(gains.max(), rel=1e-12)
        assert best is None

    def test_rejects_bad_m(self, cfg32):
        _, o = los_oracle(cfg32, (0, 3, 0))
        with pytest.raises(ValueError):
            two_phase_train(cfg32, o, 0)


class TestThreePhase:
    def test_pilot_accounting(self, cfg64):
        _, o = los_oracle(cfg64, (1, 10, 1))
        out = three_phase_train(cfg64, o, 9)
        assert out.pilots_per_phase[:2] == [18, 18]
        check_trace(out)

    def test_diagonal_ue_gives_equal_indices(self, cfg32, rng):
        for t in rng.uniform(-0.9, 0.9, 10):
            y = rng.uniform(2, 10)
            _, o = los_oracle(cfg32, (t * y, y, t * y))
            sh, sv = three_phase_train(cfg32, o, 8, (2, 4)).identified
            assert sh.axis == HORIZONTAL and sv.axis == VERTICAL
            assert sh.idx == sv.idx

    def test_level_one_shell_accuracy(self, cfg64, rng):
        ok, n = 0, 300
        for s in range(n):
            y = rng.uniform(2.0, 42.0)
            ue = (rng.uniform(-y, y), y, rng.uniform(-y, y))
            ch = sample_channel(cfg64, ue, rician_db=math.inf, L=0, ref_snr_db=10, seed=s, convention="los")
            sh, _ = three_phase_train(cfg64, oracle_from_channel(cfg64, ch, s), 1, (1,)).identified
            ok += cb.shell_contains(cfg64, sh, ue)
        assert ok / n >= 0.98


class TestBenchmarks:
    def test_dft_sweep_budget(self, cfg64):
        _, o = los_oracle(cfg64, (1, 10, 1))
        out = benchmark_train(cfg64, o, "dft-sweep", {"M": 9})
        assert sum(out.pilots_per_phase[:2]) == 1024
        check_trace(out)

    @pytest.mark.parametrize("method", ["hier-dft", "upa-partitioning"])
    def test_hierarchical_localisation_budget(self, cfg64, method):
        _, o = los_oracle(cfg64, (1, 10, 1))
        out = benchmark_train(cfg64, o, method, {"M": 9})
        assert sum(out.pilots_per_phase[:2]) == 36
        check_trace(out)

    def test_benchmarks_find_noiseless_los_ue(self, cfg32):
        ue = (0.6, 4.0, -0.3)
        ch, o = los_oracle(cfg32, ue)
        for m in ("hier-dft", "upa-partitioning", "dft-sweep"):
            out = benchmark_train(cfg32, oracle_from_channel(cfg32, ch), m, {"M": 8, "k_set": (1, 2, 3, 4)})
            assert snr_metrics(cfg32, ch, out.chosen).snr_loss_db < 3.0

    def test_grid_matching_small(self, cfg32):
        grid = grid_matching_points((1.875, 11.25), 0.5)
        ue = tuple(grid[np.argmin(np.linalg.norm(grid - [0.5, 3.0, 0.5], axis=1))])
        ch, o = los_oracle(cfg32, ue)
        out = benchmark_train(cfg32, o, "grid-matching", {"spacing": 0.5, "y_range": (1.875, 11.25)})
        assert out.pilots_per_phase == [15124]
        check_trace(out)
        assert np.allclose(out.chosen.meta["point"], ue)

    @pytest.mark.parametrize("y_range,spacing,count", [
        ((7.5, 45.0), 1.0, 125020), ((7.5, 45.0), 0.5, 1000236),
        ((1.875, 11.25), 0.5, 15124), ((1.875, 11.25), 0.25, 125020),
        ((1.25, 7.5), 0.5, 4940), ((1.25, 7.5), 0.25, 39546),
        ((5.0, 30.0), 1.0, 39546), ((5.0, 30.0), 0.5, 301291),
    ])
    def test_grid_counts(self, y_range, spacing, count):
        pts = grid_matching_points(y_range, spacing)
        assert len(pts) == count
        assert np.all(np.abs(pts[:, 0]) <= pts[:, 1] + 1e-9)

    def test_invalid_parameters(self, cfg32):
        _, o = los_oracle(cfg32, (0, 3, 0))
        with pytest.raises(ValueError):
            benchmark_train(cfg32, o, "beam-magic")
        with pytest.raises(ValueError):
            benchmark_train(cfg32, o, "hier-dft", {"M": 0})
        with pytest.raises(ValueError):
            benchmark_train(cfg32, o, "dft-sweep", {"bogus": 1})
        with pytest.raises(ValueError):
            grid_matching_points((5.0, 1.0), 0.5)

    def test_cosine_box(self, cfg32):
        lo, hi = tangent_range_from_cosines(0.1, 0.2, -0.1, 0.1)
        assert lo == pytest.approx(0.1 / math.sqrt(1 - 0.01))
        assert hi == pytest.approx(0.2 / math.sqrt(1 - 0.04 - 0.01))
        plan = cosine_box_plan(cfg32, 8, (0.1, 0.2), (-0.1, 0.1), (1, 2), margin=0)
        assert len(plan) > 0
        assert set(plan.rings) == {1, 2}
        # a cell off the edge of the grid still yields a plan
        assert len(cosine_box_plan(cfg32, 8, (0.98, 1.0), (0.98, 1.0), (1,))) >= 1


class TestDispatch:
    def test_names(self, cfg32):
        _, o = los_oracle(cfg32, (0, 3, 0))
        assert train(cfg32, o, "two-phase", M=8, k_set=(2, 4)).method == "two-phase"
        assert train(cfg32, o, "dft-sweep", M=8, k_set=(1,)).method == "dft-sweep"
        assert set(BENCHMARKS) == {"upa-partitioning", "hier-dft", "dft-sweep", "grid-matching"}

    def test_outcome_json(self, cfg32):
        import json
        _, o = los_oracle(cfg32, (0, 3, 0))
        d = json.loads(three_phase_train(cfg32, o, 8, (2, 4)).to_json())
        assert d["pilots_per_phase"][:2] == [16, 16]
        assert d["total_pilots"] == sum(d["pilots_per_phase"])
        assert d["identified"][0]["axis"] == HORIZONTAL
