"""Seeded Monte Carlo experiments with confidence intervals and flat-file output.

Trials are grouped into fixed-size chunks (the size depends only on the
state count), each chunk is simulated by :func:`~seqtrack.batch.run_batch`
from per-trial generators, and chunk results are merged in trial order. The
report is therefore a pure function of the configuration, whatever the
number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import multiprocessing
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .batch import run_batch
from .errors import ConfigError
from .markov import MarkovChain, gaussian_walk_matrix, kronecker_chain, validate_chain
from .observation import GridExponentialModel
from .radar import RadarGrid, build_radar_chain, calibrate_fss_threshold, componentwise_distance
from .sequential import SprtConfig, thresholds_from_strength
from .streams import TrialStream, trial_rng

CSV_SCHEMA = "# seqtrack-csv v1"
Z95 = 1.959963984540054
_U64 = 1 << 64


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's output.

    ``scenario="grid"`` is a one-dimensional Gaussian walk on ``num_states``
    cells; ``scenario="radar"`` is the 4-D resolution grid described by the
    ``n_*``/``sigma_*`` fields. SNRs are linear. Explicit ``log_gamma0`` /
    ``log_gamma1`` override the thresholds derived from ``(alpha, beta)``.
    ``initial_state`` replaces the uniform prior by a point mass.
    Setting ``fss_samples`` adds the fixed-sample baseline, calibrated to
    ``fss_target_pfa`` (default ``alpha``) unless ``fss_log_threshold`` is given.
    """

    scenario: str = "grid"
    num_states: int = 11
    sigma: float = 1.0
    max_step: Optional[int] = None
    initial_state: Optional[int] = None
    n_azimuth: int = 4
    n_elevation: int = 1
    n_range: int = 100
    n_doppler: int = 16
    sigma_azimuth: float = 0.0
    sigma_elevation: float = 0.0
    sigma_range: float = 1.0
    sigma_doppler: float = math.inf
    max_range_step: Optional[int] = 3
    snr_true: float = 1.0
    snr_design: Optional[float] = None
    alpha: float = 1e-3
    beta: float = 1e-3
    log_gamma0: Optional[float] = None
    log_gamma1: Optional[float] = None
    truncation_k: Optional[int] = None
    log_gamma_k: Optional[float] = None
    hypotheses: str = "both"
    num_trials: int = 1000
    master_seed: int = 0
    max_steps: int = 10_000
    track: bool = True
    fss_samples: Optional[int] = None
    fss_target_pfa: Optional[float] = None
    fss_log_threshold: Optional[float] = None
    fss_calibration_trials: int = 100_000

    def __post_init__(self):
        if self.scenario not in ("grid", "radar"):
            raise ConfigError(f"scenario must be 'grid' or 'radar', got {self.scenario!r}")
        if self.hypotheses not in ("H0", "H1", "both"):
            raise ConfigError(f"hypotheses must be 'H0', 'H1' or 'both', got {self.hypotheses!r}")
        if self.num_trials < 1:
            raise ConfigError("num_trials must be >= 1")
        if not 0 <= self.master_seed < _U64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if (self.log_gamma0 is None) != (self.log_gamma1 is None):
            raise ConfigError("log_gamma0 and log_gamma1 must be given together")
        if self.truncation_k is not None and self.truncation_k < 1:
            raise ConfigError("truncation_k must be >= 1")
        if self.snr_true < 0 or (self.snr_design is not None and not self.snr_design > 0):
            raise ConfigError("snr_true must be >= 0 and snr_design > 0")
        if self.fss_samples is not None and self.fss_samples < 1:
            raise ConfigError("fss_samples must be >= 1")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {f.name: _encode_value(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        hints = typing.get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        values = {}
        for key, raw in data.items():
            values[key] = _coerce(key, raw, hints[key])
        return cls(**values)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def design_snr(self) -> float:
        return self.snr_true if self.snr_design is None else self.snr_design

    @property
    def grid(self) -> RadarGrid:
        return RadarGrid(self.n_azimuth, self.n_elevation, self.n_range, self.n_doppler,
                         self.sigma_azimuth, self.sigma_elevation, self.sigma_range,
                         self.sigma_doppler, self.max_range_step)


def _encode_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def _coerce(key: str, raw, hint):
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    if raw is None:
        if optional:
            return None
        raise ConfigError(f"{key} may not be null")
    if base is bool:
        if isinstance(raw, bool):
            return raw
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    if base is int:
        if isinstance(raw, bool) or not (isinstance(raw, int) or (isinstance(raw, float) and raw.is_integer())):
            raise ConfigError(f"{key} must be an integer, got {raw!r}")
        return int(raw)
    if base is float:
        if isinstance(raw, str):
            try:
                return float(raw)
            except ValueError:
                raise ConfigError(f"{key} must be a number, got {raw!r}") from None
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{key} must be a number, got {raw!r}")
        return float(raw)
    if base is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{key} must be a string, got {raw!r}")
        return raw
    raise ConfigError(f"unsupported type for {key}")  # pragma: no cover


def load_config(path) -> ExperimentConfig:
    """Read a flat JSON object of ExperimentConfig fields."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"{path}: configuration must be flat, nested values at {', '.join(nested)}")
    return ExperimentConfig.from_dict(data)


# --- scenario construction --------------------------------------------------


def build_chain(config: ExperimentConfig) -> MarkovChain:
    if config.scenario == "radar":
        grid = config.grid
        initial = None
        if config.initial_state is not None:
            initial = _point_mass(grid.num_states, config.initial_state)
        chain = build_radar_chain(grid, initial=initial)
    else:
        if config.num_states < 1:
            raise ConfigError("num_states must be >= 1")
        walk = gaussian_walk_matrix(config.num_states, config.sigma, config.max_step)
        initial = None
        if config.initial_state is not None:
            initial = _point_mass(config.num_states, config.initial_state)
        chain = kronecker_chain([walk], initial)
    return chain


def _point_mass(M: int, x: int) -> np.ndarray:
    if not 0 <= x < M:
        raise ConfigError(f"initial_state {x} outside 0..{M - 1}")
    p = np.zeros(M)
    p[x] = 1.0
    return p


def build_model(config: ExperimentConfig, num_states: int) -> GridExponentialModel:
    return GridExponentialModel(num_states, config.snr_true, config.design_snr)


def build_sprt(config: ExperimentConfig) -> SprtConfig:
    if config.log_gamma0 is not None:
        sprt = SprtConfig(config.log_gamma0, config.log_gamma1)
    else:
        try:
            sprt = thresholds_from_strength(config.alpha, config.beta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if config.truncation_k is not None:
        sprt = sprt.truncated(config.truncation_k, config.log_gamma_k)
    return sprt


@lru_cache(maxsize=8)
def _setup(config: ExperimentConfig):
    chain = build_chain(config)
    return chain, build_model(config, chain.num_states), build_sprt(config)


def check_chain(chain: MarkovChain, require_ergodic: bool = False) -> None:
    """Raise ConfigError naming the first chain property the scenario needs but lacks."""
    report = validate_chain(chain)
    if not report.stochastic:
        raise ConfigError("chain is not row-stochastic")
    if require_ergodic:
        for name in ("irreducible", "aperiodic"):
            if not getattr(report, name):
                raise ConfigError(f"chain is not {name}")


def chunk_size_for(num_states: int) -> int:
    """Trials per work unit; depends on the state count only."""
    return max(8, min(4096, (1 << 20) // num_states))


# --- trial execution --------------------------------------------------------


def _track_flags(config: ExperimentConfig, estimates, truths):
    n = len(estimates)
    exact = np.zeros(n, dtype=bool)
    near = np.zeros(n, dtype=bool)
    grid = config.grid if config.scenario == "radar" else None
    for i, (est, truth) in enumerate(zip(estimates, truths)):
        if est is None:
            continue
        truth = truth[: len(est)]
        exact[i] = np.array_equal(est, truth)
        if grid is not None:
            near[i] = bool(np.all(componentwise_distance(grid, est, truth) <= 1))
        else:
            near[i] = bool(np.all(np.abs(est - truth) <= 1))
    return exact, near


def _run_chunk(task):
    config, hyp, start, stop, fss_threshold = task
    chain, model, sprt = _setup(config)
    signal = hyp == "H1"

    def streams():
        return [TrialStream(chain, model, signal, trial_rng(config.master_seed, i, hyp)) for i in range(start, stop)]

    track = config.track and signal
    r = run_batch(chain, model, sprt, streams(), track=track, max_steps=config.max_steps)
    out = {"codes": r.codes, "tau": r.tau}
    if track:
        out["exact"], out["near"] = _track_flags(config, r.estimates, r.truths)
    if fss_threshold is not None:
        # Same seeds as the sequential pass: both tests see identical data.
        f = run_batch(chain, model, None, streams(), track=track, fixed_steps=config.fss_samples)
        det = f.log_lambda >= fss_threshold
        out["fss_det"] = det
        if track:
            est = [e if d else None for e, d in zip(f.estimates, det)]
            truths = [s[: config.fss_samples] if s is not None else None for s in f.truths]
            out["fss_exact"], out["fss_near"] = _track_flags(config, est, truths)
    return out


# --- metrics ----------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a 95% normal-approximation interval."""

    value: float
    std_error: float
    ci_low: float
    ci_high: float

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def proportion(successes: int, n: int) -> Estimate:
    p = successes / n
    se = math.sqrt(p * (1.0 - p) / n)
    return Estimate(p, se, max(0.0, p - Z95 * se), min(1.0, p + Z95 * se))


def mean_estimate(x: np.ndarray) -> Estimate:
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return Estimate(m, se, m - Z95 * se, m + Z95 * se)


def cv_estimate(x: np.ndarray) -> Estimate:
    """Coefficient of variation; the standard error uses the normal-theory approximation."""
    m = float(np.mean(x))
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    cv = sd / m if m > 0 else math.nan
    se = cv * math.sqrt(1.0 / (2 * x.size) + cv * cv / x.size) if math.isfinite(cv) else math.nan
    return Estimate(cv, se, max(0.0, cv - Z95 * se), cv + Z95 * se)


@dataclass(frozen=True)
class HypothesisMetrics:
    """Metrics of the trials run under one hypothesis.

    Probabilities of H1 acceptance are ``p_fa`` under H0 and ``p_d`` under
    H1; ``p_track`` counts exact MAP matches among all H1 trials (joint with
    detection) and ``p_track_given_detect`` conditions on detection.
    ``fss_*`` fields are filled when the fixed-sample baseline runs.
    """

    hypothesis: str
    num_trials: int
    num_stopped: int
    num_accept_h1: int
    num_accept_h0: int
    asn: Estimate
    asn_cv: Estimate
    truncation_rate: Estimate
    stop_rate: Estimate
    p_fa: Optional[Estimate] = None
    p_miss: Optional[Estimate] = None
    p_d: Optional[Estimate] = None
    p_track: Optional[Estimate] = None
    p_track_pm1: Optional[Estimate] = None
    p_track_given_detect: Optional[Estimate] = None
    fss_p_fa: Optional[Estimate] = None
    fss_p_d: Optional[Estimate] = None
    fss_p_track: Optional[Estimate] = None
    fss_p_track_pm1: Optional[Estimate] = None


METRIC_NAMES = [f.name for f in dataclasses.fields(HypothesisMetrics) if f.name not in
                ("hypothesis", "num_trials", "num_stopped", "num_accept_h1", "num_accept_h0")]


@dataclass(frozen=True)
class MetricsReport:
    config: dict
    config_hash: str
    master_seed: int
    num_trials: int
    h0: Optional[HypothesisMetrics] = None
    h1: Optional[HypothesisMetrics] = None
    fss_log_threshold: Optional[float] = None
    fss_threshold_std_error: Optional[float] = None
    schema: str = field(default="seqtrack-report v1")

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        header = ["hypothesis", "num_trials", "num_stopped", "num_accept_h1", "num_accept_h0"]
        for name in METRIC_NAMES:
            header += [name, f"{name}_ci_low", f"{name}_ci_high"]
        rows = []
        for hm in (self.h0, self.h1):
            if hm is None:
                continue
            row = [hm.hypothesis, hm.num_trials, hm.num_stopped, hm.num_accept_h1, hm.num_accept_h0]
            for name in METRIC_NAMES:
                e = getattr(hm, name)
                row += ["", "", ""] if e is None else [e.value, e.ci_low, e.ci_high]
            rows.append(row)
        return format_csv(header, rows, self.config_hash, self.master_seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return _encode_value(obj)
    return obj


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return _encode_value(float(v)) if not math.isfinite(v) else repr(float(v))
    return str(v)


def format_csv(header, rows, config_hash: str, master_seed: int) -> str:
    buf = io.StringIO()
    buf.write(f"{CSV_SCHEMA}\n# config_hash={config_hash} master_seed={master_seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _metrics(hyp: str, parts: list[dict], fss: bool) -> HypothesisMetrics:
    codes = np.concatenate([p["codes"] for p in parts])
    tau = np.concatenate([p["tau"] for p in parts])
    n = codes.size
    acc1 = int(np.isin(codes, (2, 4)).sum())
    acc0 = int(np.isin(codes, (1, 3)).sum())
    kw = dict(
        hypothesis=hyp, num_trials=n, num_stopped=acc0 + acc1, num_accept_h1=acc1, num_accept_h0=acc0,
        asn=mean_estimate(tau.astype(float)), asn_cv=cv_estimate(tau.astype(float)),
        truncation_rate=proportion(int(np.isin(codes, (3, 4)).sum()), n),
        stop_rate=proportion(acc0 + acc1, n),
    )
    if hyp == "H0":
        kw["p_fa"] = proportion(acc1, n)
        if fss:
            kw["fss_p_fa"] = proportion(int(np.concatenate([p["fss_det"] for p in parts]).sum()), n)
    else:
        kw["p_d"] = proportion(acc1, n)
        kw["p_miss"] = proportion(acc0, n)
        if "exact" in parts[0]:
            exact = int(sum(p["exact"].sum() for p in parts))
            kw["p_track"] = proportion(exact, n)
            kw["p_track_pm1"] = proportion(int(sum(p["near"].sum() for p in parts)), n)
            kw["p_track_given_detect"] = proportion(exact, acc1) if acc1 else None
        if fss:
            kw["fss_p_d"] = proportion(int(np.concatenate([p["fss_det"] for p in parts]).sum()), n)
            if "fss_exact" in parts[0]:
                kw["fss_p_track"] = proportion(int(sum(p["fss_exact"].sum() for p in parts)), n)
                kw["fss_p_track_pm1"] = proportion(int(sum(p["fss_near"].sum() for p in parts)), n)
    return HypothesisMetrics(**kw)


def fss_threshold_for(config: ExperimentConfig, workers: int = 1):
    """``(log_threshold, std_error)`` of the FSS baseline, calibrating if needed."""
    if config.fss_log_threshold is not None:
        return config.fss_log_threshold, 0.0
    chain, model, _ = _setup(config)
    target = config.alpha if config.fss_target_pfa is None else config.fss_target_pfa
    cal = calibrate_fss_threshold(chain, model, config.fss_samples, target,
                                  config.fss_calibration_trials,
                                  trial_rng(config.master_seed, 0, "FSS-CAL"), workers=workers)
    return cal.log_threshold, cal.std_error


def run_experiment(config: ExperimentConfig, workers: int = 1) -> MetricsReport:
    """Simulate ``config.num_trials`` trials under each requested hypothesis.

    ``workers`` only changes wall-clock time: work units and their merge
    order are fixed by the configuration.
    """
    chain, _, _ = _setup(config)
    check_chain(chain)
    fss = config.fss_samples is not None
    thr, thr_se = fss_threshold_for(config, workers) if fss else (None, None)

    hyps = ["H0", "H1"] if config.hypotheses == "both" else [config.hypotheses]
    size = chunk_size_for(chain.num_states)
    tasks = [(config, h, s, min(s + size, config.num_trials), thr)
             for h in hyps for s in range(0, config.num_trials, size)]
    if workers > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    by_hyp = {h: [r for t, r in zip(tasks, results) if t[1] == h] for h in hyps}
    metrics = {h: _metrics(h, parts, fss) for h, parts in by_hyp.items()}
    return MetricsReport(config=config.to_dict(), config_hash=config.config_hash(),
                         master_seed=config.master_seed, num_trials=config.num_trials,
                         h0=metrics.get("H0"), h1=metrics.get("H1"),
                         fss_log_threshold=thr, fss_threshold_std_error=thr_se)
