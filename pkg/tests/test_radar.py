import math

import numpy as np
import pytest

from seqtrack.errors import StructureError
from seqtrack.markov import validate_chain
from seqtrack.observation import GridExponentialModel
from seqtrack.radar import (
    FssConfig,
    RadarGrid,
    build_radar_chain,
    calibrate_fss_threshold,
    componentwise_distance,
    noise_statistics,
    run_fss,
)
from seqtrack.sequential import Outcome, SprtConfig, SprtState
from seqtrack.streams import trial_rng

SMALL = RadarGrid(n_azimuth=2, n_elevation=1, n_range=12, n_doppler=3, sigma_range=1.0, sigma_doppler=math.inf)


class TestGrid:
    def test_reference_dimensions(self):
        g = RadarGrid()
        assert g.dims == (4, 1, 100, 16) and g.num_states == 6400

    def test_coordinates_round_trip(self):
        g = RadarGrid()
        s = np.arange(0, 6400, 37)
        c = g.unravel(s)
        assert c.shape == s.shape + (4,)
        assert np.array_equal(g.ravel(c), s)
        # Row-major: doppler varies fastest.
        assert g.unravel(1).tolist() == [0, 0, 0, 1]
        assert g.unravel(16).tolist() == [0, 0, 1, 0]

    def test_validation(self):
        with pytest.raises(StructureError):
            RadarGrid(n_range=0)
        with pytest.raises(ValueError):
            RadarGrid(sigma_range=-1.0)
        with pytest.raises(ValueError):
            RadarGrid(sigma_doppler=math.nan)

    def test_componentwise_distance(self):
        g = RadarGrid()
        a = g.ravel([1, 0, 10, 3])
        b = g.ravel([0, 0, 12, 4])
        assert componentwise_distance(g, a, b) == 2
        assert componentwise_distance(g, a, a) == 0


class TestChain:
    def test_all_static_is_identity(self):
        g = RadarGrid(n_azimuth=2, n_elevation=2, n_range=3, n_doppler=2,
                      sigma_range=0.0, sigma_doppler=0.0)
        assert np.array_equal(build_radar_chain(g).transitions, np.eye(24))

    def test_uniform_range_only(self):
        g = RadarGrid(n_azimuth=1, n_elevation=1, n_range=3, n_doppler=1,
                      sigma_range=math.inf, max_range_step=None)
        np.testing.assert_allclose(build_radar_chain(g).transitions, np.full((3, 3), 1 / 3), atol=1e-15)

    def test_reference_grid(self):
        chain = build_radar_chain(RadarGrid())
        assert chain.num_states == 6400 and chain.is_factored
        az, el, rng_f, dop = chain.factors
        assert np.array_equal(az, np.eye(4)) and np.array_equal(el, np.eye(1))
        np.testing.assert_allclose(dop, np.full((16, 16), 1 / 16), atol=1e-15)
        for f in chain.factors:
            np.testing.assert_allclose(f.sum(axis=1), 1.0, atol=1e-13)
        i, j = np.nonzero(rng_f)
        assert np.abs(i - j).max() == 3
        # Full support: each row reaches 7 range bins times 16 doppler bins, minus edge rows.
        sup = chain.support()
        assert sup.shape == (6400, 6400) and sup.getnnz(axis=1).max() == 7 * 16
        np.testing.assert_allclose(chain.propagate(np.full(6400, 1 / 6400)).sum(), 1.0, rtol=1e-12)

    def test_reference_chain_is_stochastic_but_not_ergodic(self):
        # Azimuth never changes, so the chain splits into four closed classes.
        report = validate_chain(build_radar_chain(RadarGrid()))
        assert report.stochastic and not report.ergodic

    def test_cap(self):
        with pytest.raises(StructureError, match="cap"):
            build_radar_chain(RadarGrid(n_range=1000, n_doppler=200))
        assert build_radar_chain(RadarGrid(), cap=6400).num_states == 6400

    def test_trajectories_respect_range_step(self, rng):
        g = RadarGrid(sigma_range=3.0)
        path = build_radar_chain(g).sample_path(3000, rng)
        c = g.unravel(path)
        assert np.abs(np.diff(c[:, 2])).max() <= 3
        assert np.all(c[:, 0] == c[0, 0])


class TestFss:
    def setup_method(self):
        self.chain = build_radar_chain(SMALL)
        self.model = GridExponentialModel(SMALL.num_states, 4.0)

    def test_statistic_equals_sequential_likelihood(self, rng):
        frames = self.model.sample_signal(self.chain.sample_path(4, rng), rng)
        rec = run_fss(self.chain, self.model, FssConfig(4, 0.0), frames)
        s = SprtState(self.chain, self.model, SprtConfig(-np.inf, np.inf))
        for z in frames:
            s.update(self.model.log_lr(z[None])[0])
        assert rec.log_lambda_tau == pytest.approx(s.log_lambda, rel=1e-13)
        assert rec.tau == 4
        if rec.outcome is Outcome.ACCEPT_H1:
            assert np.array_equal(rec.trajectory, s.map_trajectory())

    def test_infinite_thresholds(self, rng):
        frames = self.model.sample_noise(rng, 3)
        assert run_fss(self.chain, self.model, FssConfig(3, -math.inf), frames).outcome is Outcome.ACCEPT_H1
        rec = run_fss(self.chain, self.model, FssConfig(3, math.inf), frames)
        assert rec.outcome is Outcome.ACCEPT_H0 and rec.trajectory is None

    def test_frame_count_must_match(self, rng):
        with pytest.raises(ValueError, match="expected 4"):
            run_fss(self.chain, self.model, FssConfig(4, 0.0), self.model.sample_noise(rng, 3))
        with pytest.raises(ValueError):
            FssConfig(0, 0.0)


class TestCalibration:
    def setup_method(self):
        self.chain = build_radar_chain(SMALL)
        self.model = GridExponentialModel(SMALL.num_states, 4.0)

    def test_minimum_trials(self):
        with pytest.raises(ValueError, match="at least 10000"):
            calibrate_fss_threshold(self.chain, self.model, 2, 1e-2, 5000, trial_rng(0, 0, "c"))

    def test_target_domain(self):
        for bad in (0.0, 1.5, -0.1):
            with pytest.raises(ValueError):
                calibrate_fss_threshold(self.chain, self.model, 2, bad, 1000, trial_rng(0, 0, "c"))

    def test_unit_target(self):
        cal = calibrate_fss_threshold(self.chain, self.model, 2, 1.0, 200, trial_rng(0, 0, "c"))
        assert cal.log_threshold == -math.inf

    def test_threshold_is_empirical_quantile(self):
        stats_ = noise_statistics(self.chain, self.model, 3, 20_000, trial_rng(1, 0, "c"))
        cal = calibrate_fss_threshold(self.chain, self.model, 3, 0.05, 20_000, trial_rng(1, 0, "c"))
        assert np.mean(stats_ >= cal.log_threshold) == pytest.approx(0.05, abs=1 / 20_000)
        assert cal.std_error > 0 and cal.num_trials == 20_000

    def test_monotone_in_target(self):
        t = [calibrate_fss_threshold(self.chain, self.model, 3, p, 20_000, trial_rng(2, 0, "c"), n_boot=20)
             .log_threshold for p in (0.2, 0.05, 0.01)]
        assert t[0] < t[1] < t[2]

    def test_worker_count_does_not_change_result(self):
        a = noise_statistics(self.chain, self.model, 2, 20_000, trial_rng(3, 0, "c"), workers=1)
        b = noise_statistics(self.chain, self.model, 2, 20_000, trial_rng(3, 0, "c"), workers=2)
        assert np.array_equal(a, b)
