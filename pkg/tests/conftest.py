import math

import numpy as np
import pytest

from seqtrack.observation import ObservationModel


class BernoulliCellModel(ObservationModel):
    """Toy discrete model: binary cell hits, ``p_signal[x]`` in the lit cell, ``p_noise`` elsewhere.

    Per-cell signal probabilities may differ, so the model is symmetric only
    when they are all equal.
    """

    def __init__(self, p_noise, p_signal):
        self.p_noise = float(p_noise)
        self.p_signal = np.asarray(p_signal, dtype=float)
        self.num_states = self.p_signal.size
        self.permutation_symmetric = bool(np.all(self.p_signal == self.p_signal[0]))
        self._hit = np.log(self.p_signal / self.p_noise)
        self._miss = np.log((1 - self.p_signal) / (1 - self.p_noise))

    def log_lr(self, frames):
        z = np.asarray(frames, dtype=float)
        return z * self._hit + (1 - z) * self._miss

    def sample_noise(self, rng, size=1):
        return (rng.random((size, self.num_states)) < self.p_noise).astype(float)

    def sample_signal(self, states, rng):
        states = np.atleast_1d(np.asarray(states, dtype=np.intp))
        z = self.sample_noise(rng, states.size)
        z[np.arange(states.size), states] = (rng.random(states.size) < self.p_signal[states]).astype(float)
        return z

    def state_kl(self, state):
        p, q = self.p_signal[state], self.p_noise
        d10 = p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))
        d01 = q * math.log(q / p) + (1 - q) * math.log((1 - q) / (1 - p))
        return d10, d01


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def bernoulli_model():
    return BernoulliCellModel(0.2, [0.6, 0.7, 0.8])


def random_stochastic(rng, n, sparsity=0.0):
    a = rng.random((n, n))
    if sparsity:
        a[rng.random((n, n)) < sparsity] = 0.0
        a[np.arange(n), rng.integers(0, n, n)] += 0.1
    return a / a.sum(axis=1, keepdims=True)
