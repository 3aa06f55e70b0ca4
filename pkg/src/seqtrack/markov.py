"""Finite-state homogeneous Markov chains used as the signal prior.

A chain is an initial distribution ``initial`` (length ``M``) and a
row-stochastic transition matrix with ``A[x, y] = P(X_k = y | X_{k-1} = x)``.
The matrix may be stored densely or as a Kronecker product of small
per-dimension factors; every operation the detector needs (sum-product and
max-product propagation, sampling, path log-probabilities) works on either
form without materializing the full matrix.

State encoding for factored chains is row-major over the factor order, i.e.
``np.ravel_multi_index(digits, chain.shape)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import ndtr

from .errors import ConvergenceError, NonErgodicError, StructureError

#: Mobility values at or below this produce a steady (identity) walk.
SIGMA_FLOOR = 1e-1

_SUM_TOL = 1e-12


def _log(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


class Factor:
    """One square stochastic factor of a (possibly factored) transition matrix.

    Classifies the matrix once (identity, uniform, banded, dense) so that
    propagation along its axis can take a cheaper exact route.
    """

    def __init__(self, matrix: np.ndarray):
        m = np.array(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise StructureError(f"transition factor must be square and non-empty, got shape {m.shape}")
        m.setflags(write=False)
        self.matrix = m
        self.n = m.shape[0]
        self.log = _log(m)
        self.log.setflags(write=False)

        nz = np.nonzero(m)
        self.bandwidth = int(np.max(np.abs(nz[0] - nz[1]))) if nz[0].size else 0
        if np.array_equal(m, np.eye(self.n)):
            self.kind = "identity"
        elif np.all(m == m[0, 0]):
            self.kind = "uniform"
        elif 2 * self.bandwidth + 1 <= self.n // 2:
            self.kind = "banded"
        else:
            self.kind = "dense"

        cum = np.cumsum(m, axis=1)
        # Pin the cumulative sum to 1 from the last positive entry onward so
        # a uniform draw never lands on a zero-probability successor.
        for row in range(self.n):
            pos = np.flatnonzero(m[row] > 0)
            if pos.size:
                cum[row, pos[-1]:] = 1.0
        self._cum = cum
        self._cum_rows = [list(r) for r in cum] if self.kind in ("banded", "dense") else None

    def propagate(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Sum-product step ``g[..y..] = sum_x f[..x..] * m[x, y]`` along ``axis``."""
        if self.kind == "identity":
            return f
        if self.kind == "uniform":
            return np.broadcast_to(f.sum(axis=axis, keepdims=True) * self.matrix[0, 0], f.shape).copy()
        moved = np.moveaxis(f, axis, -1) @ self.matrix
        return np.moveaxis(moved, -1, axis)

    def max_propagate(self, logv: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Max-product step along ``axis`` in the log domain.

        Returns ``(best, arg)`` where ``best[..y..] = max_x logv[..x..] + log m[x, y]``
        and ``arg`` holds the smallest maximizing ``x``.
        """
        n = self.n
        if self.kind == "identity":
            idx = np.arange(n).reshape((n,) + (1,) * (logv.ndim - 1 - (axis % logv.ndim)))
            return logv, np.broadcast_to(idx, logv.shape)
        v = np.moveaxis(logv, axis, -1)
        if self.kind == "uniform":
            arg = np.argmax(v, axis=-1)
            best = np.take_along_axis(v, arg[..., None], axis=-1) + self.log[0, 0]
            best = np.broadcast_to(best, v.shape)
            arg = np.broadcast_to(arg[..., None], v.shape)
        elif self.kind == "banded":
            v = np.ascontiguousarray(v)
            best = np.full(v.shape, -np.inf)
            arg = np.zeros(v.shape, dtype=np.intp)
            better = np.empty(v.shape, dtype=bool)
            b = self.bandwidth
            ys = np.arange(n)
            for off in range(-b, b + 1):  # predecessor x = y + off, ascending in x
                lo, hi = max(0, -off), min(n, n - off)
                if lo >= hi:
                    continue
                y = ys[lo:hi]
                cand = v[..., lo + off:hi + off] + self.log[y + off, y]
                cur, mask = best[..., lo:hi], better[..., lo:hi]
                np.greater(cand, cur, out=mask)
                np.copyto(cur, cand, where=mask)
                np.copyto(arg[..., lo:hi], y + off, where=mask)
        else:
            cand = v[..., :, None] + self.log
            arg = np.argmax(cand, axis=-2)
            best = np.take_along_axis(cand, arg[..., None, :], axis=-2)[..., 0, :]
        return np.moveaxis(best, -1, axis), np.moveaxis(arg, -1, axis)

    def sample_next(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "identity":
            return states.copy()
        if self.kind == "uniform":
            return rng.integers(0, self.n, size=states.shape)
        u = rng.random(states.shape)
        nxt = (u[..., None] >= self._cum[states]).sum(axis=-1)
        return np.minimum(nxt, self.n - 1)

    def sample_path(self, start: int, steps: int, rng: np.random.Generator) -> np.ndarray:
        """``steps`` successive states after ``start`` along this factor alone."""
        if self.kind == "identity":
            return np.full(steps, start, dtype=np.intp)
        if self.kind == "uniform":
            return rng.integers(0, self.n, size=steps)
        u = rng.random(steps)
        out = np.empty(steps, dtype=np.intp)
        rows, top, x = self._cum_rows, self.n - 1, int(start)
        for i in range(steps):
            x = min(bisect.bisect_right(rows[x], u[i]), top)
            out[i] = x
        return out


class MarkovChain:
    """Homogeneous Markov chain on states ``0..M-1``.

    Parameters
    ----------
    initial : array_like
        Initial distribution, length ``M``.
    transitions : array_like, optional
        Dense ``M x M`` row-stochastic matrix. Mutually exclusive with ``factors``.
    factors : sequence of array_like, optional
        Square stochastic factors whose Kronecker product is the transition
        matrix (first factor is the most significant index digit).
    check : bool
        Enforce the probability invariants (entries in [0, 1], unit sums).
        Structural checks always run. Pass ``False`` to build deliberately
        invalid chains for :func:`validate_chain`.

    Instances are treated as immutable and may be shared between workers.
    """

    def __init__(self, initial, transitions=None, *, factors: Optional[Sequence] = None, check: bool = True):
        if (transitions is None) == (factors is None):
            raise StructureError("give exactly one of `transitions` or `factors`")
        mats = [transitions] if factors is None else list(factors)
        self._factors = tuple(Factor(f) for f in mats)
        self._dense_given = factors is None
        self.shape = tuple(f.n for f in self._factors)
        self.num_states = int(np.prod(self.shape))

        pi = np.array(initial, dtype=float)
        if pi.ndim != 1 or pi.shape[0] != self.num_states:
            raise StructureError(f"initial distribution has shape {pi.shape}, expected ({self.num_states},)")
        pi.setflags(write=False)
        self.initial = pi
        self.log_initial = _log(pi)
        self.log_initial.setflags(write=False)
        self._dense: Optional[np.ndarray] = self._factors[0].matrix if self._dense_given else None

        if check:
            problems = _stochastic_problems(self)
            if problems:
                raise ValueError("invalid chain: " + "; ".join(problems))

        cum = np.cumsum(pi)
        pos = np.flatnonzero(pi > 0)
        if pos.size:
            cum[pos[-1]:] = 1.0
        self._cum_initial = cum

    @property
    def factors(self) -> tuple[np.ndarray, ...]:
        return tuple(f.matrix for f in self._factors)

    @property
    def is_factored(self) -> bool:
        return len(self._factors) > 1

    @property
    def transitions(self) -> np.ndarray:
        """Dense transition matrix (materialized on first access for factored chains)."""
        if self._dense is None:
            out = np.ones((1, 1))
            for f in self._factors:
                out = np.kron(out, f.matrix)
            out.setflags(write=False)
            self._dense = out
        return self._dense

    def propagate(self, f: np.ndarray) -> np.ndarray:
        """Row-vector product ``f @ A`` over the last axis of ``f``."""
        lead = f.shape[:-1]
        g = f.reshape(lead + self.shape)
        nd = len(self.shape)
        for i, fac in enumerate(self._factors):
            g = fac.propagate(g, axis=g.ndim - nd + i)
        return g.reshape(lead + (self.num_states,))

    def max_propagate(self, logv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Max-product counterpart of :meth:`propagate` in the log domain.

        Returns ``(best, pred)`` with ``best[..., y] = max_x logv[..., x] + log A[x, y]``
        and ``pred`` the smallest maximizing ``x`` under row-major encoding.
        """
        lead = logv.shape[:-1]
        nd = len(self.shape)
        if nd == 1:
            best, arg = self._factors[0].max_propagate(logv, axis=-1)
            return best, arg
        w = logv.reshape(lead + self.shape)
        args = []
        # Innermost digit first so that the outermost digit is decided last;
        # this yields the smallest row-major index among exact ties.
        for i in reversed(range(nd)):
            w, a = self._factors[i].max_propagate(w, axis=w.ndim - nd + i)
            args.append(a)
        args.reverse()
        # args[i] has layout (..., x_0..x_{i-1}, y_i..y_{d-1}): the leading
        # digits are predecessor digits fixed by the outer axes.
        m = self.num_states
        y = np.arange(m)
        key = np.zeros(lead + (m,), dtype=np.intp)
        for i in range(nd):
            tail = int(np.prod(self.shape[i:]))
            if self._factors[i].kind == "identity":
                # The predecessor keeps the successor's own digit.
                digit = (y // (tail // self.shape[i])) % self.shape[i]
            else:
                flat = np.broadcast_to(args[i], lead + self.shape).reshape(lead + (m,))
                digit = np.take_along_axis(flat, key * tail + y % tail, axis=-1)
            key = key * self.shape[i] + digit
        return w.reshape(lead + (m,)), key

    def log_transition(self, x, y) -> np.ndarray:
        """``log A[x, y]`` elementwise for integer arrays of states."""
        x = np.asarray(x)
        y = np.asarray(y)
        if len(self._factors) == 1:
            return self._factors[0].log[x, y]
        xd = np.unravel_index(x, self.shape)
        yd = np.unravel_index(y, self.shape)
        total = np.zeros(np.broadcast(x, y).shape)
        for fac, a, b in zip(self._factors, xd, yd):
            total = total + fac.log[a, b]
        return total

    def sample_initial(self, rng: np.random.Generator, size=None) -> np.ndarray:
        u = rng.random(size)
        return np.minimum(np.searchsorted(self._cum_initial, u, side="right"), self.num_states - 1)

    def sample_next(self, states, rng: np.random.Generator) -> np.ndarray:
        """Draw one transition for each entry of ``states``."""
        states = np.asarray(states)
        if len(self._factors) == 1:
            return self._factors[0].sample_next(states, rng)
        digits = np.unravel_index(states, self.shape)
        new = [fac.sample_next(np.asarray(d), rng) for fac, d in zip(self._factors, digits)]
        return np.ravel_multi_index(tuple(new), self.shape)

    def sample_path(self, length: int, rng: np.random.Generator, previous: Optional[int] = None) -> np.ndarray:
        """``length`` consecutive states.

        With ``previous=None`` the first state is drawn from ``initial``;
        otherwise every state is a transition, starting from ``previous``.
        Factored chains evolve each digit independently, which is exactly
        the Kronecker-product dynamics.
        """
        if length < 1:
            return np.empty(0, dtype=np.intp)
        if previous is None:
            first = int(self.sample_initial(rng))
            if length == 1:
                return np.array([first], dtype=np.intp)
            return np.concatenate(([first], self.sample_path(length - 1, rng, first)))
        if len(self._factors) == 1:
            return self._factors[0].sample_path(previous, length, rng)
        digits = np.unravel_index(int(previous), self.shape)
        paths = [fac.sample_path(int(d), length, rng) for fac, d in zip(self._factors, digits)]
        return np.ravel_multi_index(tuple(paths), self.shape)

    def support(self) -> sp.csr_matrix:
        """Sparse boolean support graph of the transition matrix."""
        out = sp.csr_matrix(np.ones((1, 1), dtype=bool))
        for f in self._factors:
            out = sp.kron(out, sp.csr_matrix(f.matrix > 0), format="csr")
        return out

    def __repr__(self) -> str:
        return f"MarkovChain(num_states={self.num_states}, shape={self.shape})"


def _stochastic_problems(chain: MarkovChain) -> list[str]:
    problems = []
    pi = chain.initial
    if np.any(~np.isfinite(pi)) or np.any(pi < 0) or np.any(pi > 1):
        problems.append("initial entries must lie in [0, 1]")
    elif abs(pi.sum() - 1.0) > _SUM_TOL:
        problems.append(f"initial distribution sums to {pi.sum():.15g}")
    for f in chain.factors:
        if np.any(~np.isfinite(f)) or np.any(f < 0) or np.any(f > 1):
            problems.append("transition entries must lie in [0, 1]")
            break
        dev = np.max(np.abs(f.sum(axis=1) - 1.0))
        if dev > _SUM_TOL:
            problems.append(f"transition rows deviate from unit sum by {dev:.3g}")
            break
    return problems


@dataclass(frozen=True)
class ChainReport:
    """Regularity flags of a chain (see :func:`validate_chain`)."""

    stochastic: bool
    irreducible: bool
    aperiodic: bool
    invertible: bool
    stationary: bool

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


def _period(support: sp.csr_matrix) -> int:
    order, pred = breadth_first_order(support, 0, directed=True, return_predecessors=True)
    level = np.full(support.shape[0], -1, dtype=np.int64)
    level[order[0]] = 0
    for node in order[1:]:
        level[node] = level[pred[node]] + 1
    coo = support.tocoo()
    diffs = np.abs(level[coo.row] + 1 - level[coo.col])
    return int(np.gcd.reduce(diffs)) if diffs.size else 0


def _scaled_log_abs_det(m: np.ndarray) -> float:
    rowmax = m.max(axis=1)
    if np.any(rowmax <= 0):
        return -math.inf
    sign, logdet = np.linalg.slogdet(m / rowmax[:, None])
    return -math.inf if sign == 0 else float(logdet)


def validate_chain(chain: MarkovChain) -> ChainReport:
    """Check stochasticity, irreducibility, aperiodicity, invertibility and stationarity.

    Irreducibility means a single strongly connected class on the support
    graph. Aperiodicity is reported for irreducible chains only (a reducible
    chain reports ``False``). Invertibility compares ``|det|`` of the
    row-max-scaled matrix against ``1e-12``; for factored chains the
    determinant is assembled from the factors. Stationarity asks whether
    ``initial`` is a fixed point of the chain within ``1e-10``.
    """
    stochastic = not _stochastic_problems(chain)
    support = chain.support()
    n_comp, _ = connected_components(support, directed=True, connection="strong")
    irreducible = n_comp == 1
    aperiodic = irreducible and _period(support) == 1

    logdet = 0.0
    for f in chain.factors:
        logdet += (chain.num_states // f.shape[0]) * _scaled_log_abs_det(f)
    invertible = logdet > math.log(1e-12)

    moved = chain.propagate(chain.initial)
    stationary = bool(np.max(np.abs(moved - chain.initial)) <= 1e-10)
    return ChainReport(stochastic, bool(irreducible), bool(aperiodic), bool(invertible), stationary)


def stationary_distribution(chain: MarkovChain, tol: float = 1e-13, max_iter: int = 1_000_000) -> np.ndarray:
    """Stationary distribution by power iteration.

    Iterates ``v <- v A`` from the uniform vector until successive iterates
    differ by less than ``tol`` in max norm.

    Raises
    ------
    NonErgodicError
        If the chain is not irreducible and aperiodic.
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    report = validate_chain(chain)
    if not report.ergodic:
        raise NonErgodicError("no unique stationary distribution: chain is not irreducible and aperiodic")
    v = np.full(chain.num_states, 1.0 / chain.num_states)
    for _ in range(max_iter):
        nxt = chain.propagate(v)
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - v)) < tol:
            return nxt
        v = nxt
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def sample_trajectory(chain: MarkovChain, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X_1 ~ initial`` and ``X_{i+1} ~ A[X_i, :]``; returns an int array."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return chain.sample_path(length, rng)


def trajectory_log_prior(chain: MarkovChain, traj) -> float:
    """``ln pi(x_1) + sum_i ln A(x_{i-1}, x_i)``; ``-inf`` for impossible paths."""
    traj = np.asarray(traj, dtype=np.intp)
    if traj.ndim != 1 or traj.size == 0:
        raise ValueError("trajectory must be a non-empty 1-D sequence of states")
    if traj.min() < 0 or traj.max() >= chain.num_states:
        raise ValueError("trajectory contains states outside [0, M)")
    total = float(chain.log_initial[traj[0]])
    if traj.size > 1:
        total += float(np.sum(chain.log_transition(traj[:-1], traj[1:])))
    return total


def gaussian_walk_matrix(n: int, sigma: float, max_step: Optional[int] = None) -> np.ndarray:
    """Row-normalized quantized Gaussian random-walk matrix on ``n`` bins.

    Unnormalized weight for a step ``d = y - x`` is
    ``Q((|d| - 1/2) / sigma) - Q((|d| + 1/2) / sigma)`` with ``Q`` the standard
    normal upper tail, restricted to ``|d| <= max_step`` when given.
    ``sigma <= SIGMA_FLOOR`` gives the identity and ``sigma = inf`` a uniform
    distribution over the admissible steps.
    """
    if n < 1:
        raise StructureError("number of states must be >= 1")
    if sigma < 0 or math.isnan(sigma):
        raise ValueError("sigma must be nonnegative")
    if max_step is not None and max_step < 0:
        raise ValueError("max_step must be nonnegative")
    if sigma <= SIGMA_FLOOR:
        return np.eye(n)
    d = np.abs(np.arange(n)[None, :] - np.arange(n)[:, None]).astype(float)
    if math.isinf(sigma):
        w = np.ones((n, n))
    else:
        # Evaluate both tails on the positive side to avoid cancellation.
        w = ndtr(-(d - 0.5) / sigma) - ndtr(-(d + 0.5) / sigma)
    if max_step is not None:
        w[d > max_step] = 0.0
    a = w / w.sum(axis=1, keepdims=True)
    # Row n-1-i is row i reversed; copy it so mirrored moves tie exactly
    # instead of differing by summation-order rounding.
    h = n // 2
    a[n - h:] = a[:h][::-1, ::-1]
    return a


def build_gaussian_walk(M: int, sigma: float, max_step: Optional[int] = None) -> MarkovChain:
    """Gaussian random-walk chain on ``M`` states with a uniform initial distribution."""
    if M < 1:
        raise StructureError("M must be >= 1")
    return MarkovChain(np.full(M, 1.0 / M), gaussian_walk_matrix(M, sigma, max_step))


def kronecker_chain(factors: Sequence[np.ndarray], initial=None) -> MarkovChain:
    """Product chain whose transition matrix is ``kron(factors[0], factors[1], ...)``."""
    size = int(np.prod([np.shape(f)[0] for f in factors]))
    if initial is None:
        initial = np.full(size, 1.0 / size)
    return MarkovChain(initial, factors=factors)
