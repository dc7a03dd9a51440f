"""Batch pipeline driver.

Stages hand off through files under the configured output directory so
any stage can be rerun (or its inputs replaced) independently:

    extract  -> scores.csv, norm_stats.csv, extract_errors.csv
    screen   -> screen_<outcome>.csv, screen_<outcome>_auc.svg
    select   -> select_<outcome>.csv
    fit      -> models_<outcome>.csv, model_specs.csv, fit_trace.csv
    evaluate -> evaluation.csv, contributions.csv, evaluate_*.svg
    km       -> km_strata.csv, km_pairwise.csv, nsqip_subgroups.csv,
                km.svg, nsqip_sweep.svg
    report   -> report.txt (provenance header + stage checksums)

Every command is deterministic given (inputs, config, seed); merges of
parallel work are order-fixed so the worker count never changes bytes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from . import __version__, kernels, metrics, reports, svgfig
from .cohort import cohort_frame, read_cohort
from .config import RunConfig, load_config
from .cox import SurvivalData, fit_cox
from .design import PredictorSpec, build_design
from .errors import (ConfigInvalid, MissingUpstream, MorphoriskError,
                     OneClass)
from .logistic import fit_logistic
from .mvol import read_mvol, read_vertebral_map
from .pipeline import (ScreenRow, build_model_suite, nsqip_log_odds,
                       nsqip_subgroup_eval, select_features, stratify_km,
                       univariate_screen)
from .scores import (CATALOG_KEYS, CohortNormStats, column_name,
                     compute_catalog, sex_normalize)
from .volume import ALL_LEVELS, Demographics, LevelId, VertebralMap

SCORE_COLUMNS = [column_name(m, lv) for m, lv in CATALOG_KEYS]


def _require(path, stage):
    if not path.exists():
        raise MissingUpstream(f"{stage} requires {path}; run the "
                              "upstream command first")
    return path


def _read_csv(path):
    return pd.read_csv(path, dtype={"patient_id": str})


def _write_raw_csv(path, columns, rows):
    """Lossless (repr-float) CSV for stage handoff data."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if v is None else
                             (repr(float(v)) if isinstance(v, float)
                              else str(v))
                             for v in row])


# --------------------------------------------------------------- extract

def _extract_one(task):
    """Worker: one patient's raw catalog (no normalization yet)."""
    pid, mask_path, map_path, sex, height, bmi = task
    try:
        vol, z_up = read_mvol(mask_path)
        centroids = read_vertebral_map(map_path)
        vmap = VertebralMap(centroids=centroids,
                            z_increases_toward_head=z_up)
        demo = Demographics(sex=sex, height_m=height, bmi=bmi)
        sv = compute_catalog(vol, vmap, demo, CohortNormStats())
        return pid, [sv.values[k] for k in CATALOG_KEYS], None
    except Exception as exc:  # per-patient isolation
        return pid, None, f"{type(exc).__name__}: {exc}"


def cmd_extract(cfg: RunConfig) -> int:
    records, outcomes = read_cohort(cfg.cohort_path)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    errors = []
    for rec in records:
        if rec.mask_path is None:
            errors.append((rec.patient_id, "no mask_path"))
            continue
        mask = cfg.cohort_path.parent / rec.mask_path
        vmap_path = cfg.maps_dir / f"{rec.patient_id}.vmap"
        if not mask.exists():
            errors.append((rec.patient_id, f"mask missing: {mask}"))
            continue
        if not vmap_path.exists():
            errors.append((rec.patient_id,
                           f"vertebral map missing: {vmap_path}"))
            continue
        if rec.height_m is None or rec.bmi is None:
            errors.append((rec.patient_id, "missing height or bmi"))
            continue
        tasks.append((rec.patient_id, str(mask), str(vmap_path),
                      rec.sex, rec.height_m, rec.bmi))
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_extract_one, tasks))
    else:
        results = [_extract_one(t) for t in tasks]
    raw = {}
    for pid, values, err in results:  # order-fixed: task submission order
        if err is not None:
            errors.append((pid, err))
        else:
            raw[pid] = values
    # normalization stats from development rows only
    from .scores import ScoreVector
    dev_svs, dev_sexes = [], []
    by_pid = {r.patient_id: r for r in records}
    for pid, values in raw.items():
        if by_pid[pid].cohort != "development":
            continue
        sv = ScoreVector(dict(zip(CATALOG_KEYS, values)))
        dev_svs.append(sv)
        dev_sexes.append(by_pid[pid].sex)
    stats = CohortNormStats.fit(dev_svs, dev_sexes,
                                provenance="development")
    key_index = {k: i for i, k in enumerate(CATALOG_KEYS)}
    rows = []
    for rec in records:
        if rec.patient_id not in raw:
            continue
        values = list(raw[rec.patient_id])
        demo = Demographics(rec.sex, rec.height_m, rec.bmi)
        sv = ScoreVector(dict(zip(CATALOG_KEYS, values)))
        for (metric, lv), v in sex_normalize(sv, demo, stats,
                                             strict=False).items():
            values[key_index[(metric, lv)]] = v
        rows.append([rec.patient_id] + values)
    _write_raw_csv(out / "scores.csv", ["patient_id"] + SCORE_COLUMNS,
                   rows)
    _write_raw_csv(out / "norm_stats.csv",
                   ["metric", "level", "sex", "mean", "sd"],
                   [[m, lv.value, sex, mean, sd]
                    for (m, lv, sex), (mean, sd)
                    in sorted(stats.entries.items(),
                              key=lambda kv: (kv[0][0], kv[0][1].value,
                                              kv[0][2]))])
    _write_raw_csv(out / "extract_errors.csv", ["patient_id", "error"],
                   [list(e) for e in sorted(errors)])
    return len(errors)


# ---------------------------------------------------------------- frames

def _load_frames(cfg):
    records, outcomes = read_cohort(cfg.cohort_path)
    frame = cohort_frame(records, outcomes)
    scores = _read_csv(_require(cfg.output_dir / "scores.csv",
                                "this stage"))
    merged = frame.merge(scores, on="patient_id", how="inner",
                         validate="one_to_one")
    return merged


def _outcome_series(frame, outcome):
    if outcome == "mortality_1y":
        return frame["mortality_1y"]
    return pd.to_numeric(frame[outcome])


# ---------------------------------------------------------------- screen

def _screen_table_rows(screen_rows):
    for r in screen_rows:
        yield {
            "metric": r.metric, "level": r.level.value,
            "n_used": r.n_used, "odds_ratio": r.odds_ratio,
            "or_lo": r.or_lo, "or_hi": r.or_hi, "auc": r.auc,
            "p_value": r.p_value, "drop_reason": r.drop_reason,
            "note": r.blocking_metric,
        }


def cmd_screen(cfg: RunConfig) -> int:
    merged = _load_frames(cfg)
    dev = merged[merged["cohort"] == "development"].reset_index(drop=True)
    notes = []
    for outcome in cfg.outcomes:
        y = _outcome_series(dev, outcome)
        try:
            rows = univariate_screen(dev[SCORE_COLUMNS], y,
                                     min_n=cfg.min_screen_n)
        except OneClass as exc:
            notes.append({"outcome": outcome,
                          "status": f"skipped: {exc}"})
            continue
        notes.append({"outcome": outcome, "status": "screened"})
        reports.write_table(
            cfg.output_dir / f"screen_{outcome}.csv",
            ["metric", "level", "n_used", "odds_ratio", "or_lo",
             "or_hi", "auc", "p_value", "drop_reason", "note"],
            _screen_table_rows(rows))
        # AUC heatmap: metrics x levels
        mets = sorted({r.metric for r in rows})
        seen = {r.level for r in rows}
        lvls = [lv.value for lv in ALL_LEVELS if lv in seen]
        grid = np.full((len(mets), len(lvls)), np.nan)
        for r in rows:
            if r.auc is not None:
                grid[mets.index(r.metric),
                     lvls.index(r.level.value)] = r.auc
        (cfg.output_dir / f"screen_{outcome}_auc.svg").write_text(
            svgfig.heatmap_figure(grid, mets, lvls,
                                  title=f"screening AUC: {outcome}"),
            encoding="utf-8", newline="\n")
    reports.write_table(cfg.output_dir / "screen_manifest.csv",
                        ["outcome", "status"], notes)
    return 0


# ---------------------------------------------------------------- select

def _load_screen_rows(path):
    rows = []
    for _, rec in _read_csv(path).iterrows():
        row = ScreenRow(metric=str(rec["metric"]),
                        level=LevelId(str(rec["level"])))
        row.n_used = int(rec["n_used"])
        for src, dst in (("odds_ratio", "odds_ratio"), ("or_lo", "or_lo"),
                         ("or_hi", "or_hi"), ("auc", "auc"),
                         ("p_value", "p_value")):
            v = rec[src]
            setattr(row, dst, None if pd.isna(v) else float(v))
        row.drop_reason = str(rec["drop_reason"])
        row.blocking_metric = ("" if pd.isna(rec["note"])
                               else str(rec["note"]))
        row.retained = row.drop_reason == "none"
        rows.append(row)
    return rows


def cmd_select(cfg: RunConfig) -> int:
    merged = _load_frames(cfg)
    dev = merged[merged["cohort"] == "development"].reset_index(drop=True)
    overrides = {m: LevelId(lv) for m, lv in cfg.level_overrides.items()}
    for outcome in cfg.outcomes:
        screen_path = cfg.output_dir / f"screen_{outcome}.csv"
        if not screen_path.exists():
            continue  # outcome was skipped at screen time
        rows = _load_screen_rows(screen_path)
        y = _outcome_series(dev, outcome)
        final = select_features(rows, dev[SCORE_COLUMNS], dev, y,
                                overrides=overrides)
        reports.write_table(
            cfg.output_dir / f"select_{outcome}.csv",
            ["metric", "level", "column", "n_used", "auc", "odds_ratio",
             "p_value", "adjusted_p", "retained", "drop_reason",
             "blocking_metric", "confounder_assoc"],
            ({"metric": r.metric, "level": r.level.value,
              "column": r.column, "n_used": r.n_used, "auc": r.auc,
              "odds_ratio": r.odds_ratio, "p_value": r.p_value,
              "adjusted_p": r.adjusted_p, "retained": int(r.retained),
              "drop_reason": r.drop_reason,
              "blocking_metric": r.blocking_metric,
              "confounder_assoc": "|".join(
                  f"{k}:{v}" for k, v in sorted(
                      r.confounder_assoc.items()))}
             for r in final))
    return 0


def _selected_columns(cfg, outcome):
    path = _require(cfg.output_dir / f"select_{outcome}.csv", "fit")
    table = _read_csv(path)
    return [str(r["column"]) for _, r in table.iterrows()
            if int(r["retained"]) == 1]


# ------------------------------------------------------------------- fit

def _spec_token(spec: PredictorSpec) -> str:
    return f"{spec.name}:cat" if spec.categorical else spec.name


def _parse_spec_token(token) -> PredictorSpec:
    if token.endswith(":cat"):
        return PredictorSpec(token[:-4], categorical=True)
    return PredictorSpec(token)


def cmd_fit(cfg: RunConfig) -> int:
    merged = _load_frames(cfg)
    dev = merged[merged["cohort"] == "development"].reset_index(drop=True)
    card_rows, spec_rows, trace_rows = [], [], []
    have_nsqip = merged["nsqip_mortality_risk"].notna().any()
    for outcome in cfg.outcomes:
        sel_path = cfg.output_dir / f"select_{outcome}.csv"
        if not sel_path.exists():
            continue
        image_cols = _selected_columns(cfg, outcome)
        suite = build_model_suite(
            dev, outcome, image_cols,
            nsqip_col="nsqip_mortality_risk" if have_nsqip else None)
        for variant, model in suite.items():
            if isinstance(model, str):
                spec_rows.append({"outcome": outcome, "variant": variant,
                                  "family": "", "predictors": "",
                                  "note": model})
                continue
            spec_rows.append({
                "outcome": outcome, "variant": variant,
                "family": model.family,
                "predictors": "|".join(_spec_token(s)
                                       for s in model.predictors),
                "note": model.warning})
            fit = model.fit
            is_cox = model.family == "cox"
            ratios = (fit.hazard_ratios() if is_cox else
                      {c: (float(np.exp(fit.beta[i])),
                           float(np.exp(fit.beta[i] - 1.96 * fit.se[i])),
                           float(np.exp(fit.beta[i] + 1.96 * fit.se[i])),
                           float(fit.pvalues[i]))
                       for i, c in enumerate(fit.columns)})
            for i, col in enumerate(fit.columns):
                ratio, lo, hi, p = ratios[col]
                card_rows.append({
                    "outcome": outcome, "variant": variant,
                    "family": model.family, "term": col,
                    "estimate": float(fit.beta[i]),
                    "se": float(fit.se[i]),
                    "ratio": ratio, "ratio_lo": lo, "ratio_hi": hi,
                    "p_value": p, "n": fit.n,
                    "n_events": getattr(fit, "n_events", None),
                })
            for step, (dropped, p) in enumerate(model.trace, 1):
                trace_rows.append({"outcome": outcome, "variant": variant,
                                   "step": step, "dropped": dropped,
                                   "p_value": p})
    reports.write_table(cfg.output_dir / "models.csv",
                        ["outcome", "variant", "family", "term",
                         "estimate", "se", "ratio", "ratio_lo",
                         "ratio_hi", "p_value", "n", "n_events"],
                        card_rows)
    reports.write_table(cfg.output_dir / "model_specs.csv",
                        ["outcome", "variant", "family", "predictors",
                         "note"], spec_rows)
    reports.write_table(cfg.output_dir / "fit_trace.csv",
                        ["outcome", "variant", "step", "dropped",
                         "p_value"], trace_rows)
    return 0


# -------------------------------------------------------------- evaluate

def _prediction_matrix(frame, columns):
    """Design rows for a fitted model's expanded columns.

    Indicator columns "name[level]" are rebuilt against the level label;
    returns (mask of usable rows, X over those rows).
    """
    base = set()
    for col in columns:
        base.add(col.split("[", 1)[0] if "[" in col else col)
    mask = np.ones(len(frame), dtype=bool)
    for name in sorted(base):
        mask &= frame[name].notna().to_numpy()
    sub = frame[mask]
    cols = []
    for col in columns:
        if "[" in col:
            name, lv = col[:-1].split("[", 1)
            cols.append((sub[name].astype(str) == lv)
                        .to_numpy(dtype=np.float64))
        else:
            cols.append(pd.to_numeric(sub[col]).to_numpy(np.float64))
    X = (np.column_stack(cols) if cols
         else np.empty((int(mask.sum()), 0)))
    return mask, X


def _refit(model_family, dev, specs, outcome):
    data = dev.copy()
    if model_family == "cox":
        data = data.dropna(subset=["surv_time", "surv_event"]) \
                   .reset_index(drop=True)
        design = build_design(data, specs)
        rows = data.iloc[design.row_index]
        surv = SurvivalData(rows["surv_time"].to_numpy(float),
                            rows["surv_event"].to_numpy(int))
        return fit_cox(design, surv)
    data = data.dropna(subset=[outcome]).reset_index(drop=True)
    design = build_design(data, specs)
    y = pd.to_numeric(data[outcome]).to_numpy(np.float64)[design.row_index]
    return fit_logistic(design, y)


def _variant_predictions(spec_row, dev, val, outcome):
    """Fit on development, predict on validation.

    Returns (fit, full-length prediction array with NaN on incomplete
    validation rows)."""
    specs = [_parse_spec_token(t)
             for t in str(spec_row["predictors"]).split("|") if t]
    family = str(spec_row["family"])
    fit = _refit(family, dev, specs, outcome)
    columns = fit.columns[1:] if family == "logistic" else fit.columns
    mask, X = _prediction_matrix(val, columns)
    pred = np.full(len(val), np.nan)
    if mask.any():
        if family == "logistic":
            pred[mask] = fit.predict(X)
        else:
            pred[mask] = fit.linear_predictor(X)
    return fit, pred


def _bootstrap_rows(outcome, variant, family, pred, val, cfg):
    rows = []
    mask = np.isfinite(pred)
    if family == "cox":
        ok = mask & val["surv_time"].notna().to_numpy()
        idx = np.flatnonzero(ok)
        surv = SurvivalData(val["surv_time"].to_numpy(float)[idx],
                            val["surv_event"].to_numpy(int)[idx])
        p = pred[idx]
        try:
            res = metrics.bootstrap_ci(
                lambda i: metrics.harrell_c(p[i], surv.subset(i)),
                len(idx), B=cfg.bootstrap_b, seed=cfg.seed)
            rows.append(("c_index", res))
        except MorphoriskError as exc:
            rows.append(("c_index", f"failed: {exc}"))
    else:
        ok = mask & _outcome_series(val, outcome).notna().to_numpy()
        idx = np.flatnonzero(ok)
        y = _outcome_series(val, outcome).to_numpy(np.float64)[idx] \
            .astype(int)
        p = pred[idx]
        for name, fn in (
                ("auc", lambda i: metrics.auc(p[i], y[i])),
                ("brier", lambda i: metrics.brier(p[i], y[i]))):
            try:
                res = metrics.bootstrap_ci(fn, len(idx),
                                           B=cfg.bootstrap_b,
                                           seed=cfg.seed)
                rows.append((name, res))
            except MorphoriskError as exc:
                rows.append((name, f"failed: {exc}"))
    return rows, np.flatnonzero(mask)


def _paired_p(family, outcome, pred_a, pred_b, val, cfg):
    """Paired bootstrap p on the subjects usable by both variants."""
    mask = np.isfinite(pred_a) & np.isfinite(pred_b)
    if family == "cox":
        mask &= val["surv_time"].notna().to_numpy()
    else:
        mask &= _outcome_series(val, outcome).notna().to_numpy()
    idx = np.flatnonzero(mask)
    if len(idx) < 2:
        return None
    pa, pb = pred_a[idx], pred_b[idx]
    try:
        if family == "cox":
            surv = SurvivalData(val["surv_time"].to_numpy(float)[idx],
                                val["surv_event"].to_numpy(int)[idx])
            cmp = metrics.paired_bootstrap_test(
                "c_index",
                lambda i: metrics.harrell_c(pa[i], surv.subset(i)),
                lambda i: metrics.harrell_c(pb[i], surv.subset(i)),
                len(idx), B=cfg.bootstrap_b, seed=cfg.seed)
        else:
            y = _outcome_series(val, outcome) \
                .to_numpy(np.float64)[idx].astype(int)
            cmp = metrics.paired_bootstrap_test(
                "auc",
                lambda i: metrics.auc(pa[i], y[i]),
                lambda i: metrics.auc(pb[i], y[i]),
                len(idx), B=cfg.bootstrap_b, seed=cfg.seed)
    except MorphoriskError:
        return None
    return cmp.p_value


def cmd_evaluate(cfg: RunConfig) -> int:
    merged = _load_frames(cfg)
    specs_path = _require(cfg.output_dir / "model_specs.csv", "evaluate")
    spec_table = _read_csv(specs_path)
    dev = merged[merged["cohort"] == "development"].reset_index(drop=True)
    val = merged[merged["cohort"] == "validation"].reset_index(drop=True)
    for frame in (dev, val):
        frame["nsqip_logodds"] = np.where(
            pd.to_numeric(frame["nsqip_mortality_risk"]).notna(),
            nsqip_log_odds(pd.to_numeric(frame["nsqip_mortality_risk"])
                           .fillna(0.5)), np.nan)
    eval_rows, contrib_rows = [], []
    for outcome in cfg.outcomes:
        block = spec_table[(spec_table["outcome"] == outcome)
                           & (spec_table["predictors"].notna())]
        preds, fits, fams = {}, {}, {}
        for _, spec_row in block.iterrows():
            variant = str(spec_row["variant"])
            try:
                fit, pred = _variant_predictions(spec_row, dev, val,
                                                 outcome)
            except MorphoriskError as exc:
                eval_rows.append({"outcome": outcome, "variant": variant,
                                  "metric": "", "note": f"refit: {exc}"})
                continue
            preds[variant] = pred
            fits[variant] = fit
            fams[variant] = str(spec_row["family"])
        for variant in preds:
            family = fams[variant]
            rows, used = _bootstrap_rows(outcome, variant, family,
                                         preds[variant], val, cfg)
            p_vs_clin = None
            if variant != "CLIN-only" and "CLIN-only" in preds:
                p_vs_clin = _paired_p(family, outcome, preds[variant],
                                      preds["CLIN-only"], val, cfg)
            for name, res in rows:
                row = {"outcome": outcome, "variant": variant,
                       "metric": name, "n_eval": len(used)}
                if isinstance(res, str):
                    row["note"] = res
                else:
                    row.update(point=res.point, lo=res.lo, hi=res.hi,
                               n_degenerate=res.n_degenerate)
                    if name in ("auc", "c_index"):
                        row["p_vs_clin"] = p_vs_clin
                eval_rows.append(row)
            if family == "cox":
                eval_rows.append(_ibs_row(outcome, variant, fits[variant],
                                          preds[variant], val, cfg))
            contrib_rows.extend(
                _contributions(outcome, variant, family, fits[variant],
                               val))
    reports.write_table(cfg.output_dir / "evaluation.csv",
                        ["outcome", "variant", "metric", "n_eval",
                         "point", "lo", "hi", "p_vs_clin",
                         "n_degenerate", "note"], eval_rows)
    reports.write_table(cfg.output_dir / "contributions.csv",
                        ["outcome", "variant", "term",
                         "mean_abs_contribution"], contrib_rows)
    _evaluation_figures(cfg, eval_rows)
    return 0


def _ibs_row(outcome, variant, fit, pred, val, cfg):
    row = {"outcome": outcome, "variant": variant, "metric": "ibs"}
    mask = np.isfinite(pred)
    idx = np.flatnonzero(mask)
    try:
        surv = SurvivalData(val["surv_time"].to_numpy(float)[idx],
                            val["surv_event"].to_numpy(int)[idx])
        columns = fit.columns
        _, X = _prediction_matrix(val.iloc[idx], columns)
        row["n_eval"] = len(idx)
        row["point"] = metrics.integrated_brier(
            fit, X, surv, min(cfg.horizon_days, surv.time.max()))
    except (MorphoriskError, ValueError) as exc:
        row["note"] = f"failed: {exc}"
    return row


def _contributions(outcome, variant, family, fit, val):
    """Mean absolute per-term linear contribution on validation rows:
    |beta_j * (x_j - mean_j)| averaged (exact Shapley values of the
    linear predictor under feature independence)."""
    columns = fit.columns[1:] if family == "logistic" else fit.columns
    beta = fit.beta[1:] if family == "logistic" else fit.beta
    mask, X = _prediction_matrix(val, columns)
    if not mask.any() or X.shape[1] == 0:
        return []
    centered = X - X.mean(axis=0)
    mean_abs = np.mean(np.abs(centered * beta[None, :]), axis=0)
    return [{"outcome": outcome, "variant": variant, "term": c,
             "mean_abs_contribution": float(v)}
            for c, v in zip(columns, mean_abs)]


def _evaluation_figures(cfg, eval_rows):
    by_outcome = {}
    for row in eval_rows:
        if row.get("point") is None:
            continue
        by_outcome.setdefault(row["outcome"], []).append(row)
    for outcome, rows in by_outcome.items():
        main = [r for r in rows if r["metric"] in ("auc", "c_index")]
        if not main:
            continue
        (cfg.output_dir / f"evaluate_{outcome}.svg").write_text(
            svgfig.bar_figure(
                [r["variant"] for r in main],
                [r["point"] for r in main],
                [(r["lo"], r["hi"]) for r in main],
                title=f"{outcome}: {main[0]['metric']}",
                ylabel=main[0]["metric"]),
            encoding="utf-8", newline="\n")


# -------------------------------------------------------------------- km

_STRATUM_NAMES = {
    (False, False): "score<=med,risk<=med",
    (False, True): "score<=med,risk>med",
    (True, False): "score>med,risk<=med",
    (True, True): "score>med,risk>med",
}


def cmd_km(cfg: RunConfig) -> int:
    merged = _load_frames(cfg)
    spec_table = _read_csv(_require(cfg.output_dir / "model_specs.csv",
                                    "km"))
    dev = merged[merged["cohort"] == "development"].reset_index(drop=True)
    val = merged[merged["cohort"] == "validation"].reset_index(drop=True)
    for frame in (dev, val):
        frame["nsqip_logodds"] = np.where(
            pd.to_numeric(frame["nsqip_mortality_risk"]).notna(),
            nsqip_log_odds(pd.to_numeric(frame["nsqip_mortality_risk"])
                           .fillna(0.5)), np.nan)
    block = spec_table[(spec_table["outcome"] == "mortality_1y")
                       & (spec_table["predictors"].notna())]
    rows_by_variant = {str(r["variant"]): r for _, r in block.iterrows()}
    if "IMG-only" not in rows_by_variant:
        raise MissingUpstream("km requires a fitted IMG-only mortality "
                              "model in model_specs.csv")
    _, score = _variant_predictions(rows_by_variant["IMG-only"], dev, val,
                                    "mortality_1y")
    risk = pd.to_numeric(val["nsqip_mortality_risk"]).to_numpy()
    usable = (np.isfinite(score) & np.isfinite(risk)
              & val["surv_time"].notna().to_numpy())
    idx = np.flatnonzero(usable)
    surv = SurvivalData(val["surv_time"].to_numpy(float)[idx],
                        val["surv_event"].to_numpy(int)[idx])
    strata = stratify_km(score[idx], risk[idx], surv)
    chi2, df, p = strata.overall
    reports.write_kv(cfg.output_dir / "km_logrank.txt",
                     {"score_median": strata.score_median,
                      "risk_median": strata.risk_median,
                      "chi2": chi2, "df": df, "p": p,
                      "n": len(idx),
                      "degenerate_strata": len(strata.degenerate)})
    reports.write_table(
        cfg.output_dir / "km_strata.csv",
        ["stratum", "n", "n_events"],
        ({"stratum": _STRATUM_NAMES[k], "n": len(v),
          "n_events": int(surv.subset(v).n_events)}
         for k, v in strata.strata.items()))
    reports.write_table(
        cfg.output_dir / "km_pairwise.csv",
        ["stratum_a", "stratum_b", "p_value"],
        ({"stratum_a": _STRATUM_NAMES[a], "stratum_b": _STRATUM_NAMES[b],
          "p_value": pv} for (a, b), pv in strata.pairwise.items()))
    curves = [(_STRATUM_NAMES[k], km.times, km.survival)
              for k, km in strata.km.items()]
    (cfg.output_dir / "km.svg").write_text(
        svgfig.km_figure(curves, title="survival by image-score / "
                         "NSQIP-risk median strata"),
        encoding="utf-8", newline="\n")
    # NSQIP subgroup comparison (IMG+NSQIP vs NSQIP-only)
    if ("IMG+NSQIP" in rows_by_variant
            and "NSQIP-only" in rows_by_variant):
        _, pred_a = _variant_predictions(rows_by_variant["IMG+NSQIP"],
                                         dev, val, "mortality_1y")
        _, pred_b = _variant_predictions(rows_by_variant["NSQIP-only"],
                                         dev, val, "mortality_1y")
        ok = (usable & np.isfinite(pred_a) & np.isfinite(pred_b))
        sub_idx = np.flatnonzero(ok)
        sweep = np.round(np.arange(0.01, 0.201, 0.01), 2)
        cells, curve = nsqip_subgroup_eval(
            pred_a[sub_idx], pred_b[sub_idx],
            SurvivalData(val["surv_time"].to_numpy(float)[sub_idx],
                         val["surv_event"].to_numpy(int)[sub_idx]),
            risk[sub_idx], threshold=cfg.nsqip_threshold,
            B=cfg.bootstrap_b, seed=cfg.seed, sweep=sweep)
        reports.write_table(
            cfg.output_dir / "nsqip_subgroups.csv",
            ["subgroup", "n", "c_img_nsqip", "c_nsqip", "delta",
             "p_value", "note"],
            ({"subgroup": c.name, "n": c.n, "c_img_nsqip": c.c_index_a,
              "c_nsqip": c.c_index_b, "delta": c.delta,
              "p_value": c.p_value, "note": c.note} for c in cells))
        xs = [pt["threshold"] for pt in curve]
        series = [
            ("IMG+NSQIP", [pt["img_nsqip"] if pt["img_nsqip"] is not None
                           else np.nan for pt in curve]),
            ("NSQIP-only", [pt["nsqip"] if pt["nsqip"] is not None
                            else np.nan for pt in curve]),
        ]
        (cfg.output_dir / "nsqip_sweep.svg").write_text(
            svgfig.sweep_figure(
                xs, series, xlabel="NSQIP risk threshold",
                ylabel="C-index below threshold",
                title="low-risk subgroup C-index vs threshold",
                vline=cfg.nsqip_threshold),
            encoding="utf-8", newline="\n")
    return 0


# ---------------------------------------------------------------- report

_STAGE_FILES = (
    "scores.csv", "norm_stats.csv", "extract_errors.csv",
    "screen_manifest.csv", "model_specs.csv", "models.csv",
    "fit_trace.csv", "evaluation.csv", "contributions.csv",
    "km_logrank.txt", "km_strata.csv", "km_pairwise.csv",
)


def cmd_report(cfg: RunConfig) -> int:
    lines = [
        "morphorisk pipeline report",
        f"version={__version__}",
        f"kernel_backend={kernels.BACKEND}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"seed={cfg.seed}",
        f"bootstrap_b={cfg.bootstrap_b}",
        f"horizon_days={reports.fmt(cfg.horizon_days)}",
        "ibs_definition=IPCW Brier integrated by trapezoid over the "
        "event-time grid, divided by the horizon",
        "",
        "stage outputs (sha256):",
    ]
    for name in _STAGE_FILES:
        path = _require(cfg.output_dir / name, "report")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{name}  {digest}")
    for extra in sorted(p.name for p in cfg.output_dir.iterdir()
                        if p.suffix == ".svg" or
                        (p.name.startswith(("screen_", "select_"))
                         and p.suffix == ".csv")):
        path = cfg.output_dir / extra
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{extra}  {digest}")
    reports.write_lines(cfg.output_dir / "report.txt", lines)
    return 0


# ------------------------------------------------------------------ main

_COMMANDS = {
    "extract": cmd_extract,
    "screen": cmd_screen,
    "select": cmd_select,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "km": cmd_km,
    "report": cmd_report,
}


def run_all(cfg: RunConfig) -> int:
    errors = 0
    for name in ("extract", "screen", "select", "fit", "evaluate", "km"):
        errors += _COMMANDS[name](cfg)
    errors += cmd_report(cfg)
    return errors


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="morphorisk",
        description="body-composition scoring and risk-model pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_COMMANDS, "all"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigInvalid("--seed must be nonnegative")
            cfg.seed = args.seed
        if args.command == "all":
            errors = run_all(cfg)
        else:
            errors = _COMMANDS[args.command](cfg)
    except MissingUpstream as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigInvalid, MorphoriskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
