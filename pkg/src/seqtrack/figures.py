"""Sweep definitions that regenerate the data behind the reference figures.

Each figure is a grid of :class:`~seqtrack.harness.ExperimentConfig` runs
whose metrics are flattened into one CSV row per grid point. Every sweep
parameter can be overridden by name; trial seeds are shared across grid
points (common random numbers), which keeps adjacent points comparable.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

from .asymptotics import estimate_lambda, predicted_stopping_moments
from .errors import ConfigError
from .harness import ExperimentConfig, _setup, format_csv, fss_threshold_for, run_experiment
from .observation import db_to_linear
from .streams import trial_rng

DEFAULTS = {
    "fig1": {"num_states_list": [3, 11], "sigmas": [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 1e4], "snr_db": 0.0,
             "trials": 2000, "seed": 1, "lambda_horizon": 5000, "lambda_trials": 20, "alpha": 1e-3, "beta": 1e-3},
    "fig2": {"num_states": 11, "sigmas": [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 1e4], "snr_db_list": [0.0, 3.0, 6.0],
             "trials": 2000, "seed": 2, "alpha": 1e-3, "beta": 1e-3},
    "fig3": {"snr_db_list": [11.0, 12.0, 13.0, 14.0, 15.0, 16.0], "snr_design": 16.0, "sigma3": 1.0,
             "truncation_k": 20, "fss_samples": 4, "trials": 1000, "seed": 3, "alpha": 1e-3, "beta": 1e-3},
    "fig4": {"snr_db_list": [11.0, 12.0, 13.0, 14.0, 15.0, 16.0], "snr_design": 16.0, "sigma3": 1.0,
             "truncation_k": 20, "fss_samples": 4, "fss_calibration_trials": 100_000,
             "trials": 1000, "seed": 4, "alpha": 1e-3, "beta": 1e-3},
    "fig5": {"sigma3_list": [0.1, 0.5, 1.0, 2.0, 3.0], "snr_db": 10.0 * math.log10(16.0), "snr_design": 16.0,
             "truncation_k": 20, "fss_samples": 4, "fss_calibration_trials": 100_000,
             "trials": 1000, "seed": 5, "alpha": 1e-3, "beta": 1e-3},
}

COLUMNS = {
    "fig1": ["num_states", "sigma", "asn_h0", "asn_h0_ci", "asn_h1", "asn_h1_ci", "predicted_h0", "predicted_h1"],
    "fig2": ["snr_db", "sigma", "p_track", "p_track_ci", "p_track_pm1", "p_track_pm1_ci",
             "p_track_given_detect", "p_d", "asn_h1"],
    "fig3": ["snr_db", "asn", "asn_ci", "cv", "fss_sample_size"],
    "fig4": ["snr_db", "p_d_seq", "p_d_seq_ci", "p_d_fss", "p_d_fss_ci", "p_track_seq", "p_track_seq_ci",
             "p_track_fss", "p_track_fss_ci", "p_track_pm1_seq", "p_track_pm1_fss", "asn"],
    "fig5": ["sigma3", "p_d_seq", "p_d_fss", "p_track_seq", "p_track_fss", "p_track_pm1_seq",
             "p_track_pm1_fss", "asn", "p_d_seq_ci", "p_d_fss_ci"],
}


@dataclass
class FigureData:
    """Rows of one figure; ``*_ci`` columns hold 95% half-widths."""

    figure_id: str
    columns: list
    rows: list
    params: dict
    config_hash: str

    def to_csv(self) -> str:
        return format_csv(self.columns, self.rows, self.config_hash, self.params["seed"])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def figure_params(figure_id: str, overrides: Optional[dict] = None) -> dict:
    if figure_id not in DEFAULTS:
        raise ConfigError(f"unknown figure {figure_id!r}; expected one of {', '.join(DEFAULTS)}")
    params = dict(DEFAULTS[figure_id])
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ConfigError(f"{figure_id} has no parameter {key!r}; known: {', '.join(params)}")
        params[key] = value
    return params


def _radar_base(p: dict, sigma3: float) -> ExperimentConfig:
    return ExperimentConfig(scenario="radar", sigma_range=sigma3, snr_design=p["snr_design"],
                            truncation_k=p["truncation_k"], alpha=p["alpha"], beta=p["beta"],
                            hypotheses="H1", num_trials=p["trials"], master_seed=p["seed"])


def _fig1(p, workers):
    rows, hashes = [], []
    for M in p["num_states_list"]:
        for i, s in enumerate(p["sigmas"]):
            cfg = ExperimentConfig(num_states=M, sigma=s, snr_true=db_to_linear(p["snr_db"]), alpha=p["alpha"],
                                   beta=p["beta"], num_trials=p["trials"], master_seed=p["seed"], track=False)
            r = run_experiment(cfg, workers)
            chain, model, _ = _setup(cfg)
            lam = [estimate_lambda(chain, model, h, p["lambda_horizon"], p["lambda_trials"],
                                   trial_rng(p["seed"], 1000 * M + i, f"LAMBDA-{h}")).value for h in ("H0", "H1")]
            pred = predicted_stopping_moments(lam[0], lam[1], p["alpha"], p["beta"]) \
                if lam[0] < 0 < lam[1] else (math.nan, math.nan)
            rows.append([M, s, r.h0.asn.value, r.h0.asn.half_width, r.h1.asn.value, r.h1.asn.half_width,
                         pred[0], pred[1]])
            hashes.append(r.config_hash)
    return rows, hashes


def _fig2(p, workers):
    rows, hashes = [], []
    for db in p["snr_db_list"]:
        for s in p["sigmas"]:
            cfg = ExperimentConfig(num_states=p["num_states"], sigma=s, snr_true=db_to_linear(db), alpha=p["alpha"],
                                   beta=p["beta"], hypotheses="H1", num_trials=p["trials"], master_seed=p["seed"])
            h = run_experiment(cfg, workers).h1
            cond = h.p_track_given_detect.value if h.p_track_given_detect else math.nan
            rows.append([db, s, h.p_track.value, h.p_track.half_width, h.p_track_pm1.value,
                         h.p_track_pm1.half_width, cond, h.p_d.value, h.asn.value])
            hashes.append(cfg.config_hash())
    return rows, hashes


def _fig3(p, workers):
    rows, hashes = [], []
    base = _radar_base(p, p["sigma3"]).replace(track=False)
    for db in p["snr_db_list"]:
        cfg = base.replace(snr_true=db_to_linear(db))
        h = run_experiment(cfg, workers).h1
        rows.append([db, h.asn.value, h.asn.half_width, h.asn_cv.value, p["fss_samples"]])
        hashes.append(cfg.config_hash())
    return rows, hashes


def _with_fss(p, cfg: ExperimentConfig, workers: int) -> ExperimentConfig:
    cfg = cfg.replace(fss_samples=p["fss_samples"], fss_calibration_trials=p["fss_calibration_trials"])
    # The threshold depends on the noise statistics and design SNR only,
    # so one calibration serves every true SNR of a sweep.
    thr, _ = fss_threshold_for(cfg, workers)
    return cfg.replace(fss_log_threshold=thr)


def _fig4(p, workers):
    rows, hashes = [], []
    base = _with_fss(p, _radar_base(p, p["sigma3"]), workers)
    for db in p["snr_db_list"]:
        cfg = base.replace(snr_true=db_to_linear(db))
        h = run_experiment(cfg, workers).h1
        rows.append([db, h.p_d.value, h.p_d.half_width, h.fss_p_d.value, h.fss_p_d.half_width,
                     h.p_track.value, h.p_track.half_width, h.fss_p_track.value, h.fss_p_track.half_width,
                     h.p_track_pm1.value, h.fss_p_track_pm1.value, h.asn.value])
        hashes.append(cfg.config_hash())
    return rows, hashes


def _fig5(p, workers):
    rows, hashes = [], []
    for s3 in p["sigma3_list"]:
        cfg = _with_fss(p, _radar_base(p, s3), workers).replace(snr_true=db_to_linear(p["snr_db"]))
        h = run_experiment(cfg, workers).h1
        rows.append([s3, h.p_d.value, h.fss_p_d.value, h.p_track.value, h.fss_p_track.value,
                     h.p_track_pm1.value, h.fss_p_track_pm1.value, h.asn.value,
                     h.p_d.half_width, h.fss_p_d.half_width])
        hashes.append(cfg.config_hash())
    return rows, hashes


_RUNNERS = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5}


def reproduce_figure(figure_id: str, overrides: Optional[dict] = None, workers: int = 1) -> FigureData:
    """Run the sweep of ``figure_id`` (``fig1`` .. ``fig5``) and collect its columns."""
    params = figure_params(figure_id, overrides)
    rows, hashes = _RUNNERS[figure_id](params, workers)
    digest = hashlib.sha256("".join(hashes).encode()).hexdigest()[:16]
    return FigureData(figure_id, list(COLUMNS[figure_id]), rows, params, digest)
