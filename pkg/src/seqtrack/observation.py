"""Observation models: conditional densities exposed as per-sample log likelihood ratios.

A model maps one frame (the measurement at one epoch) and a hypothesised
target state to ``ln f(z | x) - ln f(z | noise)``. The detector only ever
needs that quantity, vectorised over states, so concrete models implement
:meth:`ObservationModel.log_lr` with frames stacked on leading axes.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


class ObservationModel(ABC):
    """Capability required by the sequential detector and the simulators."""

    num_states: int

    #: Models for which every permutation of a mixture weight vector leaves
    #: the mixture-vs-noise divergences unchanged set this to True.
    permutation_symmetric: bool = False

    @abstractmethod
    def log_lr(self, frames) -> np.ndarray:
        """Per-state log likelihood ratios, shape ``frames.shape[:-frame_ndim] + (M,)``."""

    @abstractmethod
    def sample_noise(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """``size`` noise-only frames stacked on a leading axis."""

    @abstractmethod
    def sample_signal(self, states, rng: np.random.Generator) -> np.ndarray:
        """One frame per entry of ``states`` (target present in that state)."""

    def per_sample_log_lr(self, frame, state: int) -> float:
        return float(self.log_lr(np.asarray(frame)[None])[0, state])

    def state_kl(self, state: int) -> tuple[float, float]:
        """``(D(f(.|x) || f(.|noise)), D(f(.|noise) || f(.|x)))`` for one state."""
        raise NotImplementedError(f"{type(self).__name__} has no per-state divergence")


class GridExponentialModel(ObservationModel):
    """Independent exponential cell powers with one cell lit by the target.

    Noise cells are Exponential(mean 1); the target cell is Exponential with
    mean ``1 + snr_true`` (Swerling-I fluctuation). The likelihood ratio uses
    ``snr_design``, which may differ from the SNR that generated the data.
    Because noise factors cancel, the ratio for state ``x`` depends only on
    cell ``x``: ``z[x] * rho' / (1 + rho') - ln(1 + rho')``.

    Frames are float arrays of shape ``(num_cells,)``.
    """

    permutation_symmetric = True

    def __init__(self, num_cells: int, snr_true: float, snr_design: Optional[float] = None):
        if num_cells < 1:
            raise ValueError("num_cells must be >= 1")
        if snr_design is None:
            snr_design = snr_true
        if snr_true < 0:
            raise ValueError("snr_true must be >= 0")
        if not snr_design > 0:
            raise ValueError("snr_design must be > 0")
        self.num_states = self.num_cells = int(num_cells)
        self.snr_true = float(snr_true)
        self.snr_design = float(snr_design)
        self._slope = self.snr_design / (1.0 + self.snr_design)
        self._offset = math.log1p(self.snr_design)

    def __repr__(self) -> str:
        return f"GridExponentialModel(num_cells={self.num_cells}, snr_true={self.snr_true}, snr_design={self.snr_design})"

    def log_lr(self, frames) -> np.ndarray:
        return np.asarray(frames, dtype=float) * self._slope - self._offset

    def sample_noise(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        return rng.standard_exponential((size, self.num_cells))

    def sample_signal(self, states, rng: np.random.Generator) -> np.ndarray:
        states = np.atleast_1d(np.asarray(states, dtype=np.intp))
        z = rng.standard_exponential((states.size, self.num_cells))
        z[np.arange(states.size), states] *= 1.0 + self.snr_true
        return z

    def sample_frame(self, target_state: Optional[int], rng: np.random.Generator) -> np.ndarray:
        """A single frame; ``target_state=None`` means noise only."""
        if target_state is None:
            return self.sample_noise(rng, 1)[0]
        if not 0 <= target_state < self.num_cells:
            raise ValueError("target_state out of range")
        return self.sample_signal([target_state], rng)[0]

    def closed_form_kl(self) -> tuple[float, float]:
        """Divergences between the lit-cell and noise exponentials at the design SNR.

        Returns ``(rho' - ln(1+rho'), ln(1+rho') - rho'/(1+rho'))``.
        """
        r = self.snr_design
        return r - math.log1p(r), math.log1p(r) - r / (1.0 + r)

    def state_kl(self, state: int) -> tuple[float, float]:
        return self.closed_form_kl()

    def with_num_cells(self, num_cells: int) -> "GridExponentialModel":
        return GridExponentialModel(num_cells, self.snr_true, self.snr_design)
