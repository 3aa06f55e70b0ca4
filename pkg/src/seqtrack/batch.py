"""Vectorised execution of many independent trials of the sequential test.

All active trials sit at the same epoch, so one set of array operations
advances the whole batch; stopped trials are compacted out. Results are
identical in distribution to running :class:`~seqtrack.sequential.SprtState`
per trial on the same streams, and agree with it numerically to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .markov import MarkovChain
from .observation import ObservationModel
from .sequential import (
    H1_CODES,
    SprtConfig,
    decide,
    forward_advance,
    forward_start,
    log_lambda_of,
    viterbi_advance,
    viterbi_start,
)
from .streams import TrialStream


@dataclass
class BatchResult:
    """Per-trial outcomes of a batch.

    ``codes`` uses the integer outcome codes of :mod:`seqtrack.sequential`
    (0 = step cap reached without a decision). ``estimates[i]`` is the gated
    MAP trajectory (only for H1 acceptances when tracking) and ``truths[i]``
    the first ``tau[i]`` true states (signal streams only).
    """

    codes: np.ndarray
    tau: np.ndarray
    log_lambda: np.ndarray
    estimates: list
    truths: list


def _backtrack_rows(trial_ids: np.ndarray, last: np.ndarray, history: list, k: int) -> np.ndarray:
    """Vectorised backtracking for several trials that stopped at epoch ``k``."""
    paths = np.empty((trial_ids.size, k), dtype=np.intp)
    cur = last
    paths[:, k - 1] = cur
    for t in range(k, 1, -1):
        ids_t, bp_t = history[t - 2]
        rows = np.searchsorted(ids_t, trial_ids)
        cur = bp_t[rows, cur]
        paths[:, t - 2] = cur
    return paths


def run_batch(chain: MarkovChain, model: ObservationModel, config: Optional[SprtConfig],
              streams: Sequence[TrialStream], *, track: bool = True, max_steps: int = 10_000,
              fixed_steps: Optional[int] = None) -> BatchResult:
    """Drive every stream until its test stops.

    Parameters
    ----------
    config : SprtConfig or None
        Boundaries. ``None`` together with ``fixed_steps`` runs a fixed-sample
        pass: every trial stops at ``fixed_steps`` with code 0 and the
        statistic recorded (used by the FSS baseline).
    track : bool
        Maintain Viterbi recursions and emit MAP trajectories.
    max_steps : int
        Safety cap; trials still running are reported with code 0.
    """
    n = len(streams)
    if n == 0:
        empty = np.zeros(0)
        return BatchResult(np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.int64), empty, [], [])
    codes = np.zeros(n, dtype=np.int8)
    tau = np.zeros(n, dtype=np.int64)
    log_lam = np.full(n, np.nan)
    estimates: list = [None] * n
    ids = np.arange(n)
    horizon = fixed_steps if fixed_steps is not None else max_steps
    history: list = []
    buf = None
    f = shift = v = None

    for k in range(1, horizon + 1):
        j = (k - 1) % streams[0].block
        if j == 0:
            buf = np.stack([streams[i].next_block() for i in ids])
        llr = model.log_lr(buf[:, j])
        if k == 1:
            f, shift = forward_start(chain, llr)
            if track:
                v = viterbi_start(chain, llr, shift)
        else:
            f, new_shift = forward_advance(chain, f, shift, llr)
            if track:
                v, pred = viterbi_advance(chain, v, llr, new_shift - shift)
                history.append((ids, pred.astype(np.int32 if chain.num_states > 32767 else np.int16)))
            shift = new_shift
        ll = log_lambda_of(f, shift)

        if fixed_steps is not None and config is None:
            step_codes = np.zeros(ids.size, dtype=np.int8)
            done = np.full(ids.size, k == horizon)
        else:
            step_codes = decide(config, ll, k)
            done = (step_codes != 0) | (k == horizon)
        if not done.any():
            continue

        rows = np.flatnonzero(done)
        stopped_ids = ids[rows]
        codes[stopped_ids] = step_codes[rows]
        tau[stopped_ids] = k
        log_lam[stopped_ids] = ll[rows]
        if track:
            want = np.isin(step_codes[rows], H1_CODES) | (config is None)
            if want.any():
                sel = rows[want]
                last = np.argmax(v[sel], axis=-1)
                paths = _backtrack_rows(ids[sel], last, history, k)
                for tid, p in zip(ids[sel], paths):
                    estimates[tid] = p

        keep = ~done
        if not keep.any():
            break
        ids = ids[keep]
        f, shift, buf = f[keep], shift[keep], buf[keep]
        if track:
            v = v[keep]

    truths = [None] * n
    for i, s in enumerate(streams):
        if s.signal:
            truths[i] = s.states[: tau[i]]
    return BatchResult(codes, tau, log_lam, estimates, truths)
