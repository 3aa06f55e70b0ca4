"""Radar surveillance scenario: 4-D resolution grid and the fixed-sample baseline.

States are resolution cells ``(azimuth, elevation, range, doppler)`` encoded
row-major. Target motion is an independent quantized Gaussian walk per
dimension, so the transition matrix is the Kronecker product of four
one-dimensional walks and is never formed densely.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import StructureError
from .markov import MarkovChain, gaussian_walk_matrix, kronecker_chain
from .observation import ObservationModel
from .sequential import DecisionRecord, Outcome, SprtConfig, SprtState, forward_advance, forward_start, log_lambda_of

DEFAULT_STATE_CAP = 100_000


@dataclass(frozen=True)
class RadarGrid:
    """Resolution lattice and per-dimension mobility.

    ``sigma_*`` of 0 (or anything up to the steady floor) freezes a
    dimension; ``math.inf`` makes every admissible step equally likely.
    ``max_range_step`` truncates range moves to ``+-max_range_step`` bins.
    """

    n_azimuth: int = 4
    n_elevation: int = 1
    n_range: int = 100
    n_doppler: int = 16
    sigma_azimuth: float = 0.0
    sigma_elevation: float = 0.0
    sigma_range: float = 1.0
    sigma_doppler: float = math.inf
    max_range_step: Optional[int] = 3

    def __post_init__(self):
        for n in self.dims:
            if n < 1:
                raise StructureError("grid dimensions must be positive")
        for s in self.sigmas:
            if s < 0 or math.isnan(s):
                raise ValueError("mobility parameters must be >= 0 or inf")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.n_azimuth, self.n_elevation, self.n_range, self.n_doppler)

    @property
    def sigmas(self) -> tuple[float, float, float, float]:
        return (self.sigma_azimuth, self.sigma_elevation, self.sigma_range, self.sigma_doppler)

    @property
    def num_states(self) -> int:
        return int(np.prod(self.dims))

    def unravel(self, states) -> np.ndarray:
        """Cell coordinates, shape ``states.shape + (4,)``."""
        return np.stack(np.unravel_index(np.asarray(states), self.dims), axis=-1)

    def ravel(self, coords) -> np.ndarray:
        coords = np.asarray(coords)
        return np.ravel_multi_index(tuple(np.moveaxis(coords, -1, 0)), self.dims)


def build_radar_chain(grid: RadarGrid, cap: int = DEFAULT_STATE_CAP, initial=None) -> MarkovChain:
    """Kronecker-product mobility chain over the grid (uniform prior unless ``initial`` is given)."""
    if grid.num_states > cap:
        raise StructureError(f"grid has {grid.num_states} states, above the cap of {cap}")
    steps = (None, None, grid.max_range_step, None)
    factors = [gaussian_walk_matrix(n, s, m) for n, s, m in zip(grid.dims, grid.sigmas, steps)]
    return kronecker_chain(factors, initial)


def componentwise_distance(grid: RadarGrid, a, b) -> np.ndarray:
    """Largest per-dimension bin distance between cells ``a`` and ``b``."""
    return np.abs(grid.unravel(a) - grid.unravel(b)).max(axis=-1)


@dataclass(frozen=True)
class FssConfig:
    sample_size: int
    log_threshold: float

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")


def run_fss(chain: MarkovChain, model: ObservationModel, config: FssConfig, observations) -> DecisionRecord:
    """Fixed-sample test on exactly ``config.sample_size`` frames.

    The statistic is the same forward recursion the sequential test uses;
    H1 is accepted iff ``log_lambda >= log_threshold``, in which case the MAP
    trajectory over all frames is attached.
    """
    frames = list(observations)
    if len(frames) != config.sample_size:
        raise ValueError(f"expected {config.sample_size} frames, got {len(frames)}")
    state = SprtState(chain, model, SprtConfig(-math.inf, math.inf))
    for z in frames:
        state.update(model.log_lr(np.asarray(z)[None])[0])
    ll = state.log_lambda
    if ll >= config.log_threshold:
        return DecisionRecord(Outcome.ACCEPT_H1, config.sample_size, ll, state.map_trajectory())
    return DecisionRecord(Outcome.ACCEPT_H0, config.sample_size, ll, None)


@dataclass(frozen=True)
class FssCalibration:
    log_threshold: float
    std_error: float
    target_pfa: float
    num_trials: int


def _noise_chunk(task) -> np.ndarray:
    chain, model, sample_size, n, seed = task
    rng = np.random.Generator(np.random.PCG64(seed))
    f = shift = None
    for k in range(sample_size):
        llr = model.log_lr(model.sample_noise(rng, n))
        if k == 0:
            f, shift = forward_start(chain, llr)
        else:
            f, shift = forward_advance(chain, f, shift, llr)
    return log_lambda_of(f, shift)


def noise_statistics(chain: MarkovChain, model: ObservationModel, sample_size: int, num_trials: int,
                     rng: np.random.Generator, workers: int = 1) -> np.ndarray:
    """``log_lambda`` after ``sample_size`` noise-only frames, for each of ``num_trials`` runs.

    Runs are split into fixed chunks, each seeded from ``rng`` up front, so
    the result does not depend on ``workers``.
    """
    chunk = max(64, min(8192, (1 << 22) // chain.num_states))
    sizes = [min(chunk, num_trials - s) for s in range(0, num_trials, chunk)]
    seeds = rng.integers(0, 2**63, size=len(sizes))
    tasks = [(chain, model, sample_size, n, int(seed)) for n, seed in zip(sizes, seeds)]
    if workers > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            parts = list(pool.map(_noise_chunk, tasks))
    else:
        parts = [_noise_chunk(t) for t in tasks]
    return np.concatenate(parts) if parts else np.empty(0)


def _upper_order_stat(values: np.ndarray, count: int) -> float:
    # The count-th largest value: exactly `count` samples reach it (barring ties).
    return float(np.partition(values, values.size - count)[values.size - count])


def calibrate_fss_threshold(chain: MarkovChain, model: ObservationModel, sample_size: int, target_pfa: float,
                            num_trials: int, rng: np.random.Generator, n_boot: int = 200,
                            workers: int = 1) -> FssCalibration:
    """Empirical ``1 - target_pfa`` quantile of the noise-only FSS statistic.

    The standard error comes from ``n_boot`` bootstrap resamples of the
    simulated statistics.
    """
    if not 0.0 < target_pfa <= 1.0:
        raise ValueError("target_pfa must lie in (0, 1]")
    if target_pfa == 1.0:
        return FssCalibration(-math.inf, 0.0, 1.0, num_trials)
    if target_pfa * num_trials < 100:
        need = math.ceil(100 / target_pfa)
        raise ValueError(f"need at least {need} trials to calibrate P_fa={target_pfa} (got {num_trials})")
    stats = noise_statistics(chain, model, sample_size, num_trials, rng, workers)
    count = math.ceil(target_pfa * num_trials)
    thr = _upper_order_stat(stats, count)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        boot[b] = _upper_order_stat(stats[rng.integers(0, num_trials, num_trials)], count)
    return FssCalibration(thr, float(boot.std(ddof=1)), float(target_pfa), int(num_trials))
