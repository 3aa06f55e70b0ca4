"""Rate constants of the log likelihood ratio and the predictions built on them.

Under ``H_i`` the normalised statistic ``k**-1 ln Lambda_k`` converges to a
constant ``lambda_i`` (``lambda_0 < 0 < lambda_1``). These constants fix the
first-order behaviour of every moment of the stopping time, e.g.
``E_H1[tau] ~ |ln alpha'| / lambda_1``. This module estimates them by
simulation, bounds them with Kullback-Leibler divergences, and turns them
into stopping-time predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import ConvergenceError
from .markov import MarkovChain, stationary_distribution
from .observation import GridExponentialModel, ObservationModel
from .sequential import forward_advance, forward_start, log_lambda_of


@dataclass(frozen=True)
class LambdaEstimate:
    value: float
    std_error: float
    horizon_k: int
    num_trials: int
    hypothesis: str


@dataclass(frozen=True)
class LambdaBounds:
    """Bounds in nats per frame; ``which`` is ``"lambda1"`` or ``"abs_lambda0"``.

    ``lower_std_error`` is nonzero when the lower bound comes from Monte Carlo.
    """

    lower: Optional[float]
    upper: float
    which: str
    lower_std_error: float = 0.0

    def contains(self, value: float, band: float = 0.0) -> bool:
        lo = -math.inf if self.lower is None else self.lower
        return lo - band <= value <= self.upper + band


def _hyp(hypothesis: str) -> str:
    h = hypothesis.upper()
    if h not in ("H0", "H1"):
        raise ValueError(f"hypothesis must be 'H0' or 'H1', got {hypothesis!r}")
    return h


def estimate_lambda(chain: MarkovChain, model: ObservationModel, hypothesis: str,
                    horizon_k: int = 10_000, num_trials: int = 100,
                    rng: Optional[np.random.Generator] = None, block: int = 64) -> LambdaEstimate:
    """Monte Carlo estimate of ``lambda_0`` or ``lambda_1``.

    Each trial runs the forward recursion, without stopping, over
    ``horizon_k`` frames simulated under ``hypothesis``; the estimate is the
    across-trial mean of ``log_lambda / horizon_k`` with its standard error.
    """
    hyp = _hyp(hypothesis)
    if horizon_k < 1:
        raise ValueError("horizon_k must be >= 1")
    if num_trials < 2:
        raise ValueError("num_trials must be >= 2")
    rng = np.random.default_rng() if rng is None else rng
    n = num_trials
    states = chain.sample_initial(rng, n) if hyp == "H1" else None
    f = shift = None
    k = 0
    while k < horizon_k:
        b = min(block, horizon_k - k)
        for j in range(b):
            if hyp == "H1":
                if k > 0:
                    states = chain.sample_next(states, rng)
                z = model.sample_signal(states, rng)
            else:
                z = model.sample_noise(rng, n)
            llr = model.log_lr(z)
            if k == 0:
                f, shift = forward_start(chain, llr)
            else:
                f, shift = forward_advance(chain, f, shift, llr)
            k += 1
    per_trial = log_lambda_of(f, shift) / horizon_k
    return LambdaEstimate(float(per_trial.mean()), float(per_trial.std(ddof=1) / math.sqrt(n)),
                          int(horizon_k), int(n), hyp)


def kl_numeric(density_p, density_q, tol: float = 1e-8) -> float:
    """``D(p || q)`` for two 1-D continuous densities by adaptive quadrature.

    ``density_p`` and ``density_q`` are frozen ``scipy.stats`` distributions
    sharing a support. The integration range is cut where ``p`` has tail
    mass below ``1e-12``.

    Raises
    ------
    ConvergenceError
        If the quadrature error estimate exceeds ``tol``.
    """
    lo, hi = density_p.support()
    lo = density_p.ppf(1e-12) if not math.isfinite(lo) else lo
    hi = density_p.isf(1e-12) if not math.isfinite(hi) else hi

    def integrand(x):
        return density_p.pdf(x) * (density_p.logpdf(x) - density_q.logpdf(x))

    val, err = integrate.quad(integrand, lo, hi, epsabs=tol / 10, epsrel=1e-12, limit=500)
    if not err <= tol:
        raise ConvergenceError(f"KL quadrature error {err:.3g} exceeds {tol:.3g}")
    return max(float(val), 0.0)


def _state_kls(model: ObservationModel, states) -> np.ndarray:
    out = np.empty((len(states), 2))
    for i, x in enumerate(states):
        try:
            out[i] = model.state_kl(x)
        except NotImplementedError:
            p, q = model.state_densities(x)  # type: ignore[attr-defined]
            out[i] = kl_numeric(p, q), kl_numeric(q, p)
    return out


def lambda_upper_bounds(chain: MarkovChain, model: ObservationModel) -> tuple[LambdaBounds, LambdaBounds]:
    """Stationary-average divergence bounds on ``lambda_1`` and ``|lambda_0|``.

    ``lambda_1 <= sum_x pibar(x) D(f(.|x) || f_0)`` and
    ``|lambda_0| <= sum_x pibar(x) D(f_0 || f(.|x))`` with ``pibar`` the
    stationary distribution. Raises ``NonErgodicError`` for non-ergodic chains.
    """
    pibar = stationary_distribution(chain)
    if isinstance(model, GridExponentialModel):
        d = np.tile(model.closed_form_kl(), (chain.num_states, 1))
    else:
        d = _state_kls(model, range(chain.num_states))
    up1, up0 = pibar @ d
    return LambdaBounds(None, float(up1), "lambda1"), LambdaBounds(None, float(up0), "abs_lambda0")


def _mixture_kl_two_cells(model: GridExponentialModel) -> tuple[float, float]:
    """Exact (quadrature) mixture divergences for two exponential cells."""
    r = model.snr_design
    c = r / (1.0 + r)
    off = math.log(2.0) + math.log1p(r)
    # Cut each exponential where its tail mass drops below 1e-12.
    top0 = 12.0 * math.log(10.0)
    top1 = (1.0 + r) * top0

    def log_l(z0, z1):
        return np.logaddexp(c * z0, c * z1) - off

    def under_signal(z1, z0):
        return math.exp(-z0 / (1.0 + r)) / (1.0 + r) * math.exp(-z1) * log_l(z0, z1)

    def under_noise(z1, z0):
        return math.exp(-z0 - z1) * log_l(z0, z1)

    d10, e1 = integrate.dblquad(under_signal, 0.0, top1, 0.0, top0, epsabs=1e-11, epsrel=1e-11)
    d01, e0 = integrate.dblquad(under_noise, 0.0, top0, 0.0, top0, epsabs=1e-11, epsrel=1e-11)
    if max(e0, e1) > 1e-8:
        raise ConvergenceError("two-cell mixture quadrature missed 1e-8")
    return float(d10), float(-d01)


def mixture_divergences_mc(model: ObservationModel, rng: np.random.Generator,
                           num_samples: int = 1_000_000, chunk: int = 100_000):
    """Monte Carlo ``D(mix || f_0)`` and ``D(f_0 || mix)`` for a symmetric model.

    ``mix`` is the uniform mixture over states. By symmetry, the signal lit
    in state 0 stands in for a draw from the mixture. Returns
    ``(d_mix_noise, se, d_noise_mix, se)``.
    """
    M = model.num_states
    sums = np.zeros(2)
    sq = np.zeros(2)
    done = 0
    while done < num_samples:
        n = min(chunk, num_samples - done)
        zs = model.sample_signal(np.zeros(n, dtype=np.intp), rng)
        zn = model.sample_noise(rng, n)
        a = logsumexp(model.log_lr(zs), axis=-1) - math.log(M)
        b = -(logsumexp(model.log_lr(zn), axis=-1) - math.log(M))
        sums += a.sum(), b.sum()
        sq += (a * a).sum(), (b * b).sum()
        done += n
    mean = sums / num_samples
    var = sq / num_samples - mean**2
    se = np.sqrt(np.maximum(var, 0.0) / num_samples)
    return float(mean[0]), float(se[0]), float(mean[1]), float(se[1])


def lambda_bounds_symmetric(model: ObservationModel, M: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None,
                            num_samples: int = 1_000_000) -> tuple[LambdaBounds, LambdaBounds]:
    """Two-sided bounds for permutation-symmetric models.

    Lower bounds are the divergences between the uniform ``M``-mixture and
    noise; upper bounds are the single-state divergences. For ``M = 1`` the
    two coincide, for ``M = 2`` (grid-exponential) the lower bound is a 2-D
    quadrature, and beyond that a Monte Carlo estimate whose standard error
    is recorded in ``lower_std_error``. Divergences are evaluated at the
    design SNR.
    """
    if not getattr(model, "permutation_symmetric", False):
        raise ValueError(f"{type(model).__name__} does not declare permutation symmetry")
    if M is not None and M != model.num_states:
        model = model.with_num_cells(M)  # type: ignore[attr-defined]
    M = model.num_states
    if isinstance(model, GridExponentialModel):
        model = GridExponentialModel(M, model.snr_design, model.snr_design)
        up1, up0 = model.closed_form_kl()
    else:
        up1, up0 = model.state_kl(0)
    if M == 1:
        return LambdaBounds(up1, up1, "lambda1"), LambdaBounds(up0, up0, "abs_lambda0")
    if M == 2 and isinstance(model, GridExponentialModel):
        lo1, lo0 = _mixture_kl_two_cells(model)
        return LambdaBounds(lo1, up1, "lambda1"), LambdaBounds(lo0, up0, "abs_lambda0")
    rng = np.random.default_rng(0) if rng is None else rng
    lo1, se1, lo0, se0 = mixture_divergences_mc(model, rng, num_samples)
    return (LambdaBounds(lo1, up1, "lambda1", se1), LambdaBounds(lo0, up0, "abs_lambda0", se0))


def predicted_stopping_moments(lambda0: float, lambda1: float, alpha_prime: float,
                               beta_prime: float, r: int = 1) -> tuple[float, float]:
    """First-order ``(E_H0[tau^r], E_H1[tau^r])``: ``(|ln b'|/|l0|)^r`` and ``(|ln a'|/l1)^r``."""
    if not lambda0 < 0:
        raise ValueError("lambda0 must be negative")
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    if r < 1:
        raise ValueError("r must be a positive integer")
    h0 = (abs(math.log(beta_prime)) / abs(lambda0)) ** r
    h1 = (abs(math.log(alpha_prime)) / lambda1) ** r
    return h0, h1
