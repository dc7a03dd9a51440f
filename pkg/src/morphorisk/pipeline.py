"""End-to-end feature selection and model building.

Stages: per-(metric, level) univariate screening, optimal-level choice,
collinearity pruning, confounder adjustment, backward stepwise
elimination, the model suite, and NSQIP-anchored subgroup and
stratification analyses.  Everything here is fitted on a development
frame only; evaluation consumes the frozen results.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import metrics
from .cox import CoxFit, SurvivalData, fit_cox
from .cox import likelihood_ratio_p as cox_lr_p
from .design import PredictorSpec, build_design
from .errors import (AllRowsFailed, ColumnMismatch, DegenerateGroups,
                     MorphoriskError, NoUsablePairs, OneClass)
from .logistic import LogisticFit, fit_logistic
from .logistic import likelihood_ratio_p as logit_lr_p
from .logistic import odds_ratio_ci
from .scores import column_name, parse_column
from .survival import KMCurve, anova_oneway, kaplan_meier, log_rank_test
from .volume import LevelId

# Exact-tie preference for the optimal level, centered on L3
LEVEL_PREFERENCE = (
    LevelId.L3, LevelId.L2_L3, LevelId.L3_L4, LevelId.L2, LevelId.L4,
    LevelId.L1_L2, LevelId.L1, LevelId.T12_L1, LevelId.T12, LevelId.VOL3D,
)
_LEVEL_RANK = {lv: i for i, lv in enumerate(LEVEL_PREFERENCE)}

CONFOUNDERS = (
    PredictorSpec("age_cat", categorical=True),
    PredictorSpec("bmi_cat", categorical=True),
    PredictorSpec("smoker"),
    PredictorSpec("functional_status", categorical=True),
    PredictorSpec("asa_class", categorical=True),
)

CORR_THRESHOLD = 0.8      # drop when |r| strictly exceeds this
ADJUST_P = 0.1            # retained iff adjusted p strictly below
ELIMINATE_P = 0.1         # backward elimination removes p strictly above
MIN_SCREEN_N = 50


@dataclass
class ScreenRow:
    metric: str
    level: LevelId
    n_used: int = 0
    odds_ratio: Optional[float] = None
    or_lo: Optional[float] = None
    or_hi: Optional[float] = None
    auc: Optional[float] = None
    p_value: Optional[float] = None
    adjusted_p: Optional[float] = None
    retained: bool = False
    drop_reason: str = "none"     # none|correlated|adjusted_ns|unstable
    blocking_metric: str = ""
    confounder_assoc: dict = field(default_factory=dict)

    @property
    def column(self):
        return column_name(self.metric, self.level)


class EliminationError(MorphoriskError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class FittedModel:
    family: str                   # logistic | cox
    fit: object                   # LogisticFit | CoxFit
    predictors: list              # final PredictorSpecs
    trace: list                   # (dropped predictor, p) per step
    n_excluded: int = 0
    warning: str = ""


def univariate_screen(scores: pd.DataFrame, outcome: pd.Series,
                      min_n=MIN_SCREEN_N):
    """One logistic fit per (metric, level) column of the score table.

    Fit failures become per-row "unstable" drop reasons; the screen
    never aborts on a single bad column.  A one-class outcome raises
    OneClass (the whole screen is skipped upstream).
    """
    y_all = pd.to_numeric(outcome)
    present_y = y_all.notna()
    if y_all[present_y].nunique() < 2:
        raise OneClass("outcome is constant on the screening cohort")
    rows = []
    for col in scores.columns:
        metric, level = parse_column(col)
        row = ScreenRow(metric=metric, level=level)
        rows.append(row)
        x = pd.to_numeric(scores[col])
        keep = present_y & x.notna()
        row.n_used = int(keep.sum())
        if row.n_used < min_n:
            row.drop_reason = "unstable"
            row.blocking_metric = f"n={row.n_used}<{min_n}"
            continue
        xk = x[keep].to_numpy(dtype=np.float64)
        yk = y_all[keep].to_numpy(dtype=np.float64)
        if yk.min() == yk.max() or np.ptp(xk) == 0:
            row.drop_reason = "unstable"
            row.blocking_metric = "degenerate column or outcome"
            continue
        frame = pd.DataFrame({"score": xk})
        try:
            fit = fit_logistic(build_design(frame, [PredictorSpec("score")]),
                               yk)
        except MorphoriskError as exc:
            row.drop_reason = "unstable"
            row.blocking_metric = str(exc)
            continue
        if not fit.converged:
            row.drop_reason = "unstable"
            row.blocking_metric = fit.diagnostic
            continue
        odds, lo, hi, p = odds_ratio_ci(fit, "score")
        row.odds_ratio, row.or_lo, row.or_hi, row.p_value = odds, lo, hi, p
        row.auc = metrics.auc(xk if odds >= 1 else -xk, yk.astype(int))
        row.retained = True
    return rows


def best_level(rows, override: Optional[LevelId] = None) -> LevelId:
    """Highest-AUC level for one metric; exact ties break by the L3-
    centered preference order.  An override pins the level outright."""
    ok = [r for r in rows if r.drop_reason != "unstable" and r.auc is not None]
    if override is not None:
        if not any(r.level == override for r in ok):
            raise AllRowsFailed(
                f"override level {override} has no usable screen row")
        return override
    if not ok:
        raise AllRowsFailed("every level failed to screen")
    return max(ok, key=lambda r: (r.auc, -_LEVEL_RANK[r.level])).level


def collinearity_prune(candidates, scores: pd.DataFrame):
    """Greedy AUC-descending keep; a candidate survives iff its absolute
    Pearson correlation with every kept metric is <= 0.8 on
    pairwise-complete rows."""
    ranked = sorted(
        candidates,
        key=lambda r: (-r.auc, _LEVEL_RANK[r.level], r.metric))
    kept = []
    for row in ranked:
        x = pd.to_numeric(scores[row.column])
        blocker = None
        for other in kept:
            y = pd.to_numeric(scores[other.column])
            both = x.notna() & y.notna()
            if both.sum() < 3:
                continue
            r = float(np.corrcoef(x[both], y[both])[0, 1])
            if np.isfinite(r) and abs(r) > CORR_THRESHOLD:
                blocker = other
                break
        if blocker is None:
            kept.append(row)
        else:
            row.retained = False
            row.drop_reason = "correlated"
            row.blocking_metric = blocker.column
    return kept


def confounder_adjust(row: ScreenRow, scores: pd.DataFrame,
                      frame: pd.DataFrame, outcome: pd.Series,
                      confounders=CONFOUNDERS):
    """Multivariable logistic of the outcome on the candidate plus the
    confounders; the candidate is retained iff its Wald p < 0.1.

    Also records each confounder's ANOVA association with the candidate
    ("strong" p<0.01 / "weak" p<0.1)."""
    data = frame.copy()
    data["_score"] = pd.to_numeric(scores[row.column])
    data["_y"] = pd.to_numeric(outcome)
    specs = [PredictorSpec("_score")] + list(confounders)
    used = data[[s.name for s in specs] + ["_y"]].dropna()
    try:
        design = build_design(used, specs)
        fit = fit_logistic(design, used["_y"].to_numpy(dtype=np.float64))
        if not fit.converged:
            raise MorphoriskError(fit.diagnostic)
        _, _, adj_p = fit.coef("_score")
    except MorphoriskError as exc:
        row.retained = False
        row.drop_reason = "unstable"
        row.blocking_metric = f"adjustment fit: {exc}"
        return row
    row.adjusted_p = adj_p
    if not adj_p < ADJUST_P:
        row.retained = False
        row.drop_reason = "adjusted_ns"
    for spec in confounders:
        both = data["_score"].notna() & data[spec.name].notna()
        try:
            _, p = anova_oneway(data.loc[both, "_score"].to_numpy(float),
                                data.loc[both, spec.name].astype(str)
                                .to_numpy())
        except DegenerateGroups:
            continue
        if p < 0.01:
            row.confounder_assoc[spec.name] = "strong"
        elif p < 0.1:
            row.confounder_assoc[spec.name] = "weak"
    return row


def select_features(screen_rows, scores, frame, outcome,
                    overrides=None, confounders=CONFOUNDERS):
    """Level choice, pruning, and confounder adjustment in sequence.

    Returns the final per-metric ScreenRows (one per metric, updated in
    place) ordered by descending AUC.
    """
    overrides = overrides or {}
    by_metric = {}
    for row in screen_rows:
        by_metric.setdefault(row.metric, []).append(row)
    candidates = []
    for metric in sorted(by_metric):
        rows = by_metric[metric]
        try:
            level = best_level(rows, overrides.get(metric))
        except AllRowsFailed:
            continue
        chosen = next(r for r in rows if r.level == level)
        for r in rows:
            if r is not chosen:
                r.retained = False
                if r.drop_reason == "none":
                    r.drop_reason = "not_best_level"
        candidates.append(chosen)
    kept = collinearity_prune(candidates, scores)
    for row in kept:
        confounder_adjust(row, scores, frame, outcome, confounders)
    final = [r for r in candidates]
    final.sort(key=lambda r: (-(r.auc if r.auc is not None else -1),
                              r.metric))
    return final


def _fit_family(family, frame, predictors, outcome_col):
    design = build_design(frame, predictors)
    if family == "cox":
        rows = frame.iloc[design.row_index]
        surv = SurvivalData(rows["surv_time"].to_numpy(float),
                            rows["surv_event"].to_numpy(int))
        return fit_cox(design, surv), design
    y = frame[outcome_col].to_numpy(dtype=np.float64)[design.row_index]
    return fit_logistic(design, y), design


def _null_loglik(family, fit, frame, design, outcome_col):
    """Log-likelihood of the no-covariate model on the same rows."""
    if family == "cox":
        from .cox import cox_partial_loglik
        rows = frame.iloc[design.row_index]
        return cox_partial_loglik(
            np.zeros((len(rows), 1)), rows["surv_time"].to_numpy(float),
            rows["surv_event"].to_numpy(int), np.zeros(1))
    y = frame[outcome_col].to_numpy(dtype=np.float64)[design.row_index]
    pbar = y.mean()
    return float(np.sum(y * np.log(pbar) + (1 - y) * np.log(1 - pbar)))


def _predictor_p(family, fit, design, frame, predictors, name, outcome_col):
    """Wald p for scalar predictors, whole-block LR p for categoricals."""
    from scipy import special

    spec = next(s for s in predictors if s.name == name)
    if not spec.categorical:
        col = design.columns[design.groups[name][0]]
        return fit.coef(col)[2]
    df = len(design.groups[name])
    reduced_specs = [s for s in predictors if s.name != name]
    if reduced_specs:
        # same rows as the full fit, so the LR statistic is well defined
        sub = frame.iloc[design.row_index].reset_index(drop=True)
        reduced_fit, _ = _fit_family(family, sub, reduced_specs,
                                     outcome_col)
        if family == "cox":
            return cox_lr_p(fit, reduced_fit, df)
        return logit_lr_p(fit, reduced_fit, df)
    null_ll = _null_loglik(family, fit, frame, design, outcome_col)
    stat = max(2.0 * (fit.loglik - null_ll), 0.0)
    return float(special.chdtrc(df, stat))


def backward_eliminate(family, frame, predictors, outcome_col=None,
                       p_remove=ELIMINATE_P) -> FittedModel:
    """Drop the single worst predictor with p > 0.1 per refit; stop when
    all survive or one predictor remains."""
    predictors = list(predictors)
    if not predictors:
        raise ValueError("need at least one candidate predictor")
    subset = ["surv_time", "surv_event"] if family == "cox" \
        else [outcome_col]
    frame = frame.dropna(subset=subset).reset_index(drop=True)
    trace = []
    warning = ""
    while True:
        try:
            fit, design = _fit_family(family, frame, predictors, outcome_col)
        except MorphoriskError as exc:
            raise EliminationError(str(exc), trace) from exc
        n_events = (fit.n_events if family == "cox"
                    else int(np.nansum(frame[outcome_col])))
        if n_events < 5 * len(predictors) and not warning:
            warning = (f"{n_events} events for {len(predictors)} "
                       "predictors (< 5 per predictor)")
        if len(predictors) == 1:
            break
        pvals = {}
        for spec in predictors:
            try:
                pvals[spec.name] = _predictor_p(
                    family, fit, design, frame, predictors, spec.name,
                    outcome_col)
            except MorphoriskError as exc:
                raise EliminationError(str(exc), trace) from exc
        worst = max(pvals, key=lambda k: pvals[k])
        if pvals[worst] > p_remove:
            trace.append((worst, pvals[worst]))
            predictors = [s for s in predictors if s.name != worst]
        else:
            break
    return FittedModel(family=family, fit=fit, predictors=predictors,
                       trace=trace, n_excluded=design.n_excluded,
                       warning=warning)


VARIANTS_MORTALITY = ("IMG-only", "CLIN-only", "IMG+CLIN", "NSQIP-only",
                      "IMG+NSQIP")
VARIANTS_BINARY = ("IMG-only", "CLIN-only", "IMG+CLIN")


def nsqip_log_odds(risk):
    """NSQIP risk enters models on the log-odds scale; probabilities are
    clipped away from {0, 1}."""
    r = np.clip(np.asarray(risk, dtype=np.float64), 1e-6, 1 - 1e-6)
    return np.log(r / (1 - r))


def build_model_suite(frame: pd.DataFrame, outcome: str,
                      image_columns, confounders=CONFOUNDERS,
                      nsqip_col=None):
    """Backward-eliminated model per variant.

    Mortality uses Cox on the 1-year censored pair, binary outcomes use
    logistic regression.  Returns {variant: FittedModel | str-note}.
    """
    is_mortality = outcome == "mortality_1y"
    family = "cox" if is_mortality else "logistic"
    data = frame.copy()
    img_specs = [PredictorSpec(c) for c in image_columns]
    variants = VARIANTS_MORTALITY if (is_mortality and nsqip_col) \
        else VARIANTS_BINARY
    if nsqip_col and is_mortality:
        data["nsqip_logodds"] = nsqip_log_odds(
            pd.to_numeric(data[nsqip_col]).to_numpy())
        data.loc[pd.to_numeric(frame[nsqip_col]).isna(),
                 "nsqip_logodds"] = np.nan
    candidate_sets = {
        "IMG-only": img_specs,
        "CLIN-only": list(confounders),
        "IMG+CLIN": img_specs + list(confounders),
        "NSQIP-only": [PredictorSpec("nsqip_logodds")],
        "IMG+NSQIP": img_specs + [PredictorSpec("nsqip_logodds")],
    }
    out = {}
    for variant in variants:
        cands = candidate_sets[variant]
        if not cands or (variant.startswith("IMG") and not img_specs):
            out[variant] = "not buildable: no candidate predictors"
            continue
        try:
            out[variant] = backward_eliminate(
                family, data, cands,
                outcome_col=None if is_mortality else outcome)
        except (EliminationError, MorphoriskError) as exc:
            out[variant] = f"fit failed: {exc}"
    return out


@dataclass
class RiskStrata:
    score_median: float
    risk_median: float
    strata: dict                 # (score_high, risk_high) -> index array
    km: dict                     # same keys -> KMCurve
    overall: tuple               # (chi2, df, p)
    pairwise: dict               # (key_a, key_b) -> p
    degenerate: list = field(default_factory=list)


def stratify_km(score, nsqip_risk, surv: SurvivalData) -> RiskStrata:
    """Median splits of image score and NSQIP risk into four strata with
    KM curves plus overall and pairwise log-rank tests."""
    score = np.asarray(score, dtype=np.float64)
    risk = np.asarray(nsqip_risk, dtype=np.float64)
    score_med = float(np.median(score))
    risk_med = float(np.median(risk))
    strata = {}
    km = {}
    degenerate = []
    for s_high in (False, True):
        for r_high in (False, True):
            s_mask = score > score_med if s_high else score <= score_med
            r_mask = risk > risk_med if r_high else risk <= risk_med
            idx = np.flatnonzero(s_mask & r_mask)
            key = (s_high, r_high)
            strata[key] = idx
            if len(idx) == 0:
                degenerate.append(key)
                continue
            km[key] = kaplan_meier(surv.subset(idx))
    keys = [k for k in strata if len(strata[k]) > 0]
    groups = [surv.subset(strata[k]) for k in keys]
    try:
        overall = log_rank_test(groups) if len(groups) >= 2 else (0.0, 0, 1.0)
    except DegenerateGroups:
        overall = (0.0, len(groups) - 1, 1.0)
    pairwise = {}
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            try:
                _, _, p = log_rank_test(
                    [surv.subset(strata[a]), surv.subset(strata[b])])
            except DegenerateGroups:
                p = float("nan")
            pairwise[(a, b)] = p
    return RiskStrata(score_median=score_med, risk_median=risk_med,
                      strata=strata, km=km, overall=overall,
                      pairwise=pairwise, degenerate=degenerate)


@dataclass
class SubgroupCell:
    name: str
    n: int
    c_index_a: Optional[float] = None     # IMG+NSQIP
    c_index_b: Optional[float] = None     # NSQIP-only
    delta: Optional[float] = None
    p_value: Optional[float] = None
    ibs_a: Optional[float] = None
    ibs_b: Optional[float] = None
    note: str = ""


def _subgroup_c(pred, surv, idx):
    return metrics.harrell_c(pred[idx], surv.subset(idx))


def nsqip_subgroup_eval(pred_img_nsqip, pred_nsqip, surv: SurvivalData,
                        nsqip_risk, threshold=0.05, B=1000, seed=0,
                        sweep=None):
    """Split at an absolute NSQIP risk threshold and compare C-index of
    the combined vs NSQIP-only predictors in each subgroup, with a
    paired bootstrap; optionally sweep thresholds for the C-vs-threshold
    curve."""
    pred_a = np.asarray(pred_img_nsqip, dtype=np.float64)
    pred_b = np.asarray(pred_nsqip, dtype=np.float64)
    risk = np.asarray(nsqip_risk, dtype=np.float64)
    cells = []
    for name, mask in (("low", risk < threshold),
                       ("high", risk >= threshold)):
        idx = np.flatnonzero(mask)
        cell = SubgroupCell(name=name, n=len(idx))
        cells.append(cell)
        if len(idx) == 0:
            cell.note = "empty subgroup"
            continue
        sub = surv.subset(idx)
        pa, pb = pred_a[idx], pred_b[idx]
        try:
            cmp = metrics.paired_bootstrap_test(
                "c_index",
                lambda i: metrics.harrell_c(pa[i], sub.subset(i)),
                lambda i: metrics.harrell_c(pb[i], sub.subset(i)),
                len(idx), B=B, seed=seed)
        except (NoUsablePairs, MorphoriskError) as exc:
            cell.note = f"no usable pairs: {exc}"
            continue
        cell.c_index_a = cmp.estimate_a
        cell.c_index_b = cmp.estimate_b
        cell.delta = cmp.difference
        cell.p_value = cmp.p_value
    curve = []
    if sweep is not None:
        for thr in sweep:
            point = {"threshold": float(thr)}
            for tag, pred in (("img_nsqip", pred_a), ("nsqip", pred_b)):
                idx = np.flatnonzero(risk < thr)
                try:
                    point[tag] = (None if len(idx) == 0 else
                                  _subgroup_c(pred, surv, idx))
                except NoUsablePairs:
                    point[tag] = None
            curve.append(point)
    return cells, curve
