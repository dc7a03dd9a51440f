"""Discrimination/calibration metrics and seeded bootstrap inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cox import SurvivalData
from .errors import (DegenerateGroups, NoEvents, NoUsablePairs, OneClass,
                     TooManyDegenerate, ZeroCensoringWeight)
from .survival import censoring_km

log = logging.getLogger(__name__)

_DEGENERATE = (OneClass, NoUsablePairs, DegenerateGroups, NoEvents)
_MAX_ATTEMPTS = 100


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for tied scores."""
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0 or n_pos == len(labels):
        raise OneClass("both classes required for AUC")
    return float(kernels.auc_stat(np.asarray(scores, dtype=np.float64),
                                  labels.astype(np.int64)))


def brier(probs, labels) -> float:
    """Mean squared error of predicted probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.mean((probs - labels) ** 2))


def harrell_c(linear_predictors, surv: SurvivalData) -> float:
    """Harrell's concordance: over pairs whose earlier time is an event,
    the fraction ranked correctly, ties counting half."""
    conc, tied, usable = kernels.concordance_counts(
        np.asarray(linear_predictors, dtype=np.float64),
        surv.time, surv.event)
    if usable == 0:
        raise NoUsablePairs("no usable pairs")
    return (conc + 0.5 * tied) / usable


def ipcw_brier_curve(surv_probs, grid, surv: SurvivalData):
    """IPCW Brier score BS(t) at each grid time.

    ``surv_probs[i, k]`` is the model's S(grid[k] | x_i).  Censoring
    weights come from a Kaplan-Meier fit to the censoring distribution.
    Grid points where the censoring survival hits zero are truncated
    (logged), per the stated policy.
    """
    surv_probs = np.asarray(surv_probs, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    n = surv.n
    if surv.n_events == 0:
        raise NoEvents("IPCW Brier needs at least one event")
    g = censoring_km(SurvivalData(surv.time, surv.event))
    # G(t) at grid points and G(T_i^-) just before each subject's time
    g_grid = g.at(grid)
    idx_left = np.searchsorted(g.times, surv.time, side="left")
    padded = np.concatenate([[1.0], g.survival])
    g_before = padded[idx_left]
    died = surv.event == 1
    bad_death = died & (g_before == 0)
    if bad_death.any():
        raise ZeroCensoringWeight(
            "censoring survival is zero before an observed event time")
    valid = g_grid > 0
    # survivors at t require G(t) > 0; t may exceed every follow-up time
    still_alive_possible = grid[None, :] < surv.time[:, None]
    needs_g = still_alive_possible.any(axis=0)
    usable = valid | ~needs_g
    if not usable.all():
        first_bad = int(np.argmin(usable))
        log.warning("IPCW grid truncated at %d/%d points: censoring "
                    "survival reached zero", first_bad, len(grid))
        grid = grid[:first_bad]
        surv_probs = surv_probs[:, :first_bad]
        g_grid = g_grid[:first_bad]
        if len(grid) == 0:
            raise ZeroCensoringWeight("no usable grid points")
    bs = np.zeros(len(grid))
    for k, t in enumerate(grid):
        s = surv_probs[:, k]
        dead_by_t = (surv.time <= t) & died
        alive_at_t = surv.time > t
        contrib = np.zeros(n)
        contrib[dead_by_t] = s[dead_by_t] ** 2 / g_before[dead_by_t]
        if alive_at_t.any():
            contrib[alive_at_t] = (1.0 - s[alive_at_t]) ** 2 / g_grid[k]
        bs[k] = contrib.sum() / n
    return grid, bs


def integrated_brier_from_probs(surv_probs, grid, surv, horizon) -> float:
    """Trapezoidal integral of BS(t) over [0, horizon], divided by the
    horizon."""
    grid, bs = ipcw_brier_curve(surv_probs, grid, surv)
    return float(np.trapezoid(bs, grid) / horizon)


def ibs_grid(surv: SurvivalData, horizon):
    """Evaluation grid: 0, the distinct event times up to the horizon,
    and the horizon itself."""
    et = np.unique(surv.time[surv.event == 1])
    et = et[et <= horizon]
    return np.unique(np.concatenate([[0.0], et, [float(horizon)]]))


def integrated_brier(fit, X, surv: SurvivalData, horizon) -> float:
    """IBS of a fitted Cox model on covariate rows X."""
    if horizon > surv.time.max():
        raise ValueError("horizon exceeds the largest observed time")
    grid = ibs_grid(surv, horizon)
    probs = fit.predict_survival(X, grid)
    return integrated_brier_from_probs(probs, grid, surv, horizon)


@dataclass
class MetricResult:
    point: float
    lo: float
    hi: float
    replicates: int
    seed: int
    n_degenerate: int = 0


@dataclass
class PairedComparison:
    metric: str
    estimate_a: float
    estimate_b: float
    difference: float
    p_value: float            # two-sided
    p_one_sided: float
    replicates: int
    seed: int
    n_degenerate: int = 0


def _replicate_rng(seed, replicate, attempt):
    # splittable-seed rule: each (replicate, attempt) derives its own
    # independent stream, so parallel and serial runs agree bit-for-bit
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(replicate, attempt)))


def _resample(metric_fn, n, seed, B):
    values = np.empty(B)
    degenerate = 0
    for b in range(B):
        for attempt in range(_MAX_ATTEMPTS):
            rng = _replicate_rng(seed, b, attempt)
            idx = rng.integers(0, n, size=n)
            try:
                values[b] = metric_fn(idx)
                break
            except _DEGENERATE:
                degenerate += 1
        else:
            raise TooManyDegenerate(
                f"replicate {b}: {_MAX_ATTEMPTS} degenerate draws")
    if degenerate > 0.2 * (B + degenerate):
        raise TooManyDegenerate(
            f"{degenerate} degenerate draws out of {B + degenerate}")
    return values, degenerate


def bootstrap_ci(metric_fn, n, B=1000, seed=0) -> MetricResult:
    """Percentile bootstrap CI for a subject-resampling metric.

    ``metric_fn(indices)`` evaluates the metric on the resample given by
    an index array; degenerate resamples (single class, no usable pairs)
    are redrawn and counted.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    point = float(metric_fn(np.arange(n)))
    values, degenerate = _resample(metric_fn, n, seed, B)
    lo, hi = np.percentile(values, [2.5, 97.5])
    return MetricResult(point=point, lo=float(lo), hi=float(hi),
                        replicates=B, seed=seed, n_degenerate=degenerate)


def paired_bootstrap_test(metric_name, metric_fn_a, metric_fn_b, n,
                          B=1000, seed=0) -> PairedComparison:
    """Two-sided bootstrap comparison of two models on one subject set.

    Each replicate resamples the subjects once and evaluates both
    models on the identical resample; the p-value is
    2 * min(frac(diff <= 0), frac(diff >= 0)) floored at 1/B.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    est_a = float(metric_fn_a(np.arange(n)))
    est_b = float(metric_fn_b(np.arange(n)))

    def both(idx):
        return metric_fn_a(idx) - metric_fn_b(idx)

    diffs, degenerate = _resample(both, n, seed, B)
    frac_le = float(np.mean(diffs <= 0))
    frac_ge = float(np.mean(diffs >= 0))
    p_one = min(frac_le, frac_ge)
    p_two = min(max(2.0 * p_one, 1.0 / B), 1.0)
    p_one = min(max(p_one, 1.0 / B), 1.0)
    return PairedComparison(metric=metric_name, estimate_a=est_a,
                            estimate_b=est_b, difference=est_a - est_b,
                            p_value=p_two, p_one_sided=p_one,
                            replicates=B, seed=seed,
                            n_degenerate=degenerate)
