"""Sequential probability ratio test over an HMM mixture, with gated MAP trajectory.

The test statistic is the mixture likelihood ratio

    Lambda_k = sum_x p_k(x_{1:k}) prod_i f(z_i | x_i) / f(z_i | noise),

computed by a scaled forward (sum-product) recursion. The gated estimator is
the maximizer of the same summand, computed by a Viterbi (max-product)
recursion that shares the per-sample log likelihood ratios.

Numerics
--------
The forward vector is kept in the linear domain scaled so that its largest
entry is 1, with the scale folded into ``shift`` (nats). Hence
``log_lambda = log(sum(forward)) + shift`` and ``forward_log = log(forward)``
stays in ``[-inf, 0]``. The Viterbi scores are stored relative to the same
``shift``. Ties in the Viterbi argmax go to the smallest state index.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import StructureError, UsageError
from .markov import MarkovChain
from .observation import ObservationModel

BRUTE_FORCE_LIMIT = 10**7


class Outcome(enum.Enum):
    ACCEPT_H0 = "accept_h0"
    ACCEPT_H1 = "accept_h1"
    TRUNCATED_ACCEPT_H0 = "truncated_accept_h0"
    TRUNCATED_ACCEPT_H1 = "truncated_accept_h1"

    @property
    def accepts_h1(self) -> bool:
        return self in (Outcome.ACCEPT_H1, Outcome.TRUNCATED_ACCEPT_H1)

    @property
    def truncated(self) -> bool:
        return self in (Outcome.TRUNCATED_ACCEPT_H0, Outcome.TRUNCATED_ACCEPT_H1)


# Integer codes used by the vectorised engine; 0 means "still running".
OUTCOME_CODES = {1: Outcome.ACCEPT_H0, 2: Outcome.ACCEPT_H1, 3: Outcome.TRUNCATED_ACCEPT_H0, 4: Outcome.TRUNCATED_ACCEPT_H1}
H1_CODES = (2, 4)


@dataclass(frozen=True)
class Truncation:
    K: int
    log_gamma_k: float


@dataclass(frozen=True)
class SprtConfig:
    """Log-domain boundaries and optional truncation.

    Requires ``log_gamma0 < 0 < log_gamma1`` and, with truncation,
    ``log_gamma0 <= log_gamma_k <= log_gamma1``.
    """

    log_gamma0: float
    log_gamma1: float
    truncation: Optional[Truncation] = None

    def __post_init__(self):
        if not self.log_gamma0 < 0.0 < self.log_gamma1:
            raise ValueError(f"need log_gamma0 < 0 < log_gamma1, got {self.log_gamma0}, {self.log_gamma1}")
        t = self.truncation
        if t is not None:
            if t.K < 1:
                raise ValueError("truncation stage K must be >= 1")
            if not self.log_gamma0 <= t.log_gamma_k <= self.log_gamma1:
                raise ValueError("truncation threshold must lie between the two boundaries")

    def truncated(self, K: int, log_gamma_k: Optional[float] = None) -> "SprtConfig":
        """Copy with truncation at ``K``; the default threshold is ``sqrt(gamma0 * gamma1)``."""
        if log_gamma_k is None:
            log_gamma_k = 0.5 * (self.log_gamma0 + self.log_gamma1)
        return SprtConfig(self.log_gamma0, self.log_gamma1, Truncation(int(K), float(log_gamma_k)))


def thresholds_from_strength(alpha_prime: float, beta_prime: float) -> SprtConfig:
    """Wald boundaries ``gamma1 = (1-beta')/alpha'`` and ``gamma0 = beta'/(1-alpha')``."""
    for name, val in (("alpha_prime", alpha_prime), ("beta_prime", beta_prime)):
        if not 0.0 < val < 1.0:
            raise ValueError(f"{name} must lie in (0, 1), got {val}")
    g1 = math.log1p(-beta_prime) - math.log(alpha_prime)
    g0 = math.log(beta_prime) - math.log1p(-alpha_prime)
    return SprtConfig(g0, g1)


@dataclass
class DecisionRecord:
    outcome: Outcome
    tau: int
    log_lambda_tau: float
    trajectory: Optional[np.ndarray] = None


# --- shared recursion -------------------------------------------------------
# All helpers act on the last axis and broadcast over leading (trial) axes.


def forward_start(chain: MarkovChain, llr: np.ndarray):
    """First forward step ``f_1 = pi * exp(llr)``, scaled. Returns ``(f, shift)``."""
    m = llr.max(axis=-1)
    f = chain.initial * np.exp(llr - m[..., None])
    return _rescale(f, m)


def forward_advance(chain: MarkovChain, f: np.ndarray, shift: np.ndarray, llr: np.ndarray):
    m = llr.max(axis=-1)
    g = chain.propagate(f) * np.exp(llr - m[..., None])
    g, delta = _rescale(g, m)
    return g, shift + delta


def _rescale(g: np.ndarray, m: np.ndarray):
    s = g.max(axis=-1)
    ok = s > 0
    g = g / np.where(ok, s, 1.0)[..., None]
    with np.errstate(divide="ignore"):
        delta = m + np.log(s)
    return g, delta


def log_lambda_of(f: np.ndarray, shift) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(f.sum(axis=-1)) + shift


def viterbi_start(chain: MarkovChain, llr: np.ndarray, shift) -> np.ndarray:
    return chain.log_initial + llr - np.asarray(shift)[..., None]


def viterbi_advance(chain: MarkovChain, v: np.ndarray, llr: np.ndarray, delta):
    """Max-product step; ``delta`` is this step's increment of ``shift``."""
    best, pred = chain.max_propagate(v)
    return best + llr - np.asarray(delta)[..., None], pred


def decide(config: SprtConfig, log_lambda: np.ndarray, k: int) -> np.ndarray:
    """Outcome codes for every entry of ``log_lambda`` at step ``k`` (0 = continue)."""
    ll = np.asarray(log_lambda)
    code = np.zeros(ll.shape, dtype=np.int8)
    code[ll <= config.log_gamma0] = 1
    code[ll >= config.log_gamma1] = 2
    t = config.truncation
    if t is not None and k >= t.K:
        running = code == 0
        code[running & (ll >= t.log_gamma_k)] = 4
        code[running & (ll < t.log_gamma_k)] = 3
    return code


def backtrack(backpointers, last: int) -> np.ndarray:
    """Follow per-step predecessor tables (step 2..k) back from ``last``."""
    k = len(backpointers) + 1
    path = np.empty(k, dtype=np.intp)
    path[-1] = last
    for t in range(k - 1, 0, -1):
        path[t - 1] = backpointers[t - 1][path[t]]
    return path


class SprtState:
    """Running test for a single trial.

    Feed frames with :meth:`step`; it returns ``None`` while sampling should
    continue and a :class:`DecisionRecord` once the test stops.
    """

    def __init__(self, chain: MarkovChain, model: ObservationModel, config: SprtConfig):
        if model.num_states != chain.num_states:
            raise StructureError(f"model has {model.num_states} states, chain has {chain.num_states}")
        self.chain = chain
        self.model = model
        self.config = config
        self.k = 0
        self.shift = 0.0
        self._f: Optional[np.ndarray] = None
        self._v: Optional[np.ndarray] = None
        self._bp: list[np.ndarray] = []
        self.record: Optional[DecisionRecord] = None

    @property
    def stopped(self) -> bool:
        return self.record is not None

    def _require_started(self):
        if self.k == 0:
            raise UsageError("no observation has been processed yet")

    @property
    def forward_log(self) -> np.ndarray:
        self._require_started()
        with np.errstate(divide="ignore"):
            return np.log(self._f)

    @property
    def viterbi_log(self) -> np.ndarray:
        self._require_started()
        return self._v.copy()

    @property
    def log_lambda(self) -> float:
        self._require_started()
        return float(log_lambda_of(self._f, self.shift))

    @property
    def backpointers(self) -> np.ndarray:
        """``k x M`` predecessor table; row 0 (first epoch) is ``-1``."""
        self._require_started()
        first = np.full((1, self.chain.num_states), -1, dtype=np.intp)
        return np.vstack([first] + [bp[None] for bp in self._bp])

    def update(self, llr: np.ndarray) -> None:
        """Advance both recursions by one epoch given per-state log LRs."""
        llr = np.asarray(llr, dtype=float)
        if self.k == 0:
            self._f, self.shift = forward_start(self.chain, llr)
            self._v = viterbi_start(self.chain, llr, self.shift)
        else:
            self._f, new_shift = forward_advance(self.chain, self._f, self.shift, llr)
            self._v, pred = viterbi_advance(self.chain, self._v, llr, new_shift - self.shift)
            self.shift = new_shift
            self._bp.append(pred)
        self.k += 1

    def step(self, observation) -> Optional[DecisionRecord]:
        if self.stopped:
            raise UsageError("test has already stopped")
        llr = self.model.log_lr(np.asarray(observation)[None])[0]
        self.update(llr)
        ll = self.log_lambda
        code = int(decide(self.config, ll, self.k))
        if code == 0:
            return None
        outcome = OUTCOME_CODES[code]
        traj = self.map_trajectory() if outcome.accepts_h1 else None
        self.record = DecisionRecord(outcome, self.k, ll, traj)
        return self.record

    def map_trajectory(self) -> np.ndarray:
        """Most probable trajectory given the data so far (length ``k``)."""
        self._require_started()
        return backtrack(self._bp, int(np.argmax(self._v)))


def init(chain: MarkovChain, model: ObservationModel, config: SprtConfig) -> SprtState:
    return SprtState(chain, model, config)


def run_sequential(chain: MarkovChain, model: ObservationModel, config: SprtConfig, frames) -> Optional[DecisionRecord]:
    """Feed ``frames`` in order until the test stops; ``None`` if it never does."""
    state = SprtState(chain, model, config)
    for z in frames:
        rec = state.step(z)
        if rec is not None:
            return rec
    return None


# --- exhaustive oracles -----------------------------------------------------


def _path_scores(chain: MarkovChain, llr: np.ndarray, chunk: int = 1 << 18):
    """Yield ``(first_index, paths, scores)`` over all of S^k in lexicographic order."""
    k, M = llr.shape
    total = M**k
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(f"exhaustive enumeration of {M}^{k} paths exceeds the {BRUTE_FORCE_LIMIT} limit")
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        paths = np.stack(np.unravel_index(idx, (M,) * k), axis=1)
        score = chain.log_initial[paths[:, 0]].copy()
        for t in range(1, k):
            score += chain.log_transition(paths[:, t - 1], paths[:, t])
        for t in range(k):
            score += llr[t, paths[:, t]]
        yield start, paths, score


def _llr_matrix(model: ObservationModel, observations) -> np.ndarray:
    obs = [np.asarray(z) for z in observations]
    if not obs:
        raise ValueError("need at least one observation")
    return np.vstack([model.log_lr(z[None]) for z in obs])


def brute_force_log_lr(chain: MarkovChain, model: ObservationModel, observations) -> float:
    """``ln Lambda_k`` by summing over every trajectory in S^k."""
    llr = _llr_matrix(model, observations)
    parts = [logsumexp(score) for _, _, score in _path_scores(chain, llr)]
    return float(logsumexp(parts))


def brute_force_map(chain: MarkovChain, model: ObservationModel, observations) -> np.ndarray:
    """Exhaustive maximizer of ``p_k(x) Lambda_k(z | x)``.

    Exact ties resolve to the path whose states are smallest when compared
    from the last epoch backwards, which is the order Viterbi backtracking
    with smallest-predecessor tie-breaking produces.
    """
    llr = _llr_matrix(model, observations)
    best_score = -np.inf
    best_paths: list[np.ndarray] = []
    for _, paths, score in _path_scores(chain, llr):
        top = score.max()
        if top > best_score:
            best_score, best_paths = top, [paths[score == top]]
        elif top == best_score:
            best_paths.append(paths[score == top])
    cands = np.vstack(best_paths)
    # lexsort uses the last key as primary: order by x_k, then x_{k-1}, ...
    order = np.lexsort(tuple(cands[:, t] for t in range(cands.shape[1])))
    return cands[order[0]].astype(np.intp)
