"""Seed derivation and per-trial data streams for Monte Carlo runs.

Every trial owns a generator seeded by :func:`derive_trial_seed`, so a
trial's data depend only on ``(master_seed, trial_index, stream_tag)`` and
never on batching or worker scheduling.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .markov import MarkovChain
from .observation import ObservationModel

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer (Steele, Lea and Flood)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_trial_seed(master_seed: int, trial_index: int, stream_tag: str) -> int:
    """Mix a master seed, trial index and stream tag into a 64-bit seed.

    ``seed = splitmix64(splitmix64(master ^ fnv1a64(tag)) ^ splitmix64(index))``
    with all arithmetic modulo 2**64 and the tag encoded as UTF-8.
    """
    a = splitmix64((master_seed & _MASK) ^ fnv1a64(stream_tag.encode("utf-8")))
    return splitmix64(a ^ splitmix64(trial_index & _MASK))


def trial_rng(master_seed: int, trial_index: int, stream_tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_trial_seed(master_seed, trial_index, stream_tag)))


def block_size_for(num_states: int) -> int:
    """Frames drawn per refill; a function of the state count only."""
    return max(1, min(32, 32768 // num_states))


class TrialStream:
    """Lazily generated data of one trial, drawn in fixed-size blocks.

    Under the signal hypothesis each block first extends the target
    trajectory, then draws the frames it lights. ``states`` accumulates the
    true trajectory produced so far.
    """

    def __init__(self, chain: MarkovChain, model: ObservationModel, signal: bool,
                 rng: np.random.Generator, block: Optional[int] = None):
        self.chain = chain
        self.model = model
        self.signal = signal
        self.rng = rng
        self.block = block or block_size_for(chain.num_states)
        self._paths: list[np.ndarray] = []
        self._last: Optional[int] = None

    def next_block(self) -> np.ndarray:
        if not self.signal:
            return self.model.sample_noise(self.rng, self.block)
        path = self.chain.sample_path(self.block, self.rng, self._last)
        self._last = int(path[-1])
        self._paths.append(path)
        return self.model.sample_signal(path, self.rng)

    @property
    def states(self) -> np.ndarray:
        if not self._paths:
            return np.empty(0, dtype=np.intp)
        return np.concatenate(self._paths)

    def frames(self, count: int) -> np.ndarray:
        """Convenience: the first ``count`` frames of a fresh pass (consumes the stream)."""
        blocks = []
        n = 0
        while n < count:
            b = self.next_block()
            blocks.append(b)
            n += len(b)
        return np.concatenate(blocks)[:count]
