import numpy as np
import pandas as pd
import pytest

from morphorisk import pipeline
from morphorisk.cox import SurvivalData
from morphorisk.design import PredictorSpec
from morphorisk.errors import AllRowsFailed, OneClass
from morphorisk.pipeline import (ScreenRow, backward_eliminate, best_level,
                                 build_model_suite, collinearity_prune,
                                 confounder_adjust, nsqip_log_odds,
                                 nsqip_subgroup_eval, select_features,
                                 stratify_km, univariate_screen)
from morphorisk.volume import LevelId


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _confounder_frame(rng, n):
    return pd.DataFrame({
        "age_cat": rng.choice(["<65", "65-75", "75-85"], size=n),
        "bmi_cat": rng.choice(["18.5-24.99", "25-29.99", ">=30"], size=n),
        "smoker": rng.integers(0, 2, size=n).astype(float),
        "functional_status": rng.choice(
            ["independent", "non-independent"], size=n, p=[0.8, 0.2]),
        "asa_class": rng.choice([2, 3, 4], size=n),
    })


def test_screen_flips_auc_for_protective_scores():
    """A score whose high values are protective (OR < 1) reports the
    model AUC, i.e. the AUC of the flipped score."""
    rng = np.random.default_rng(0)
    n = 300
    x = rng.normal(size=n)
    y = pd.Series((rng.uniform(size=n) < _sigmoid(-1.2 * x)).astype(float))
    scores = pd.DataFrame({"SMD@L3": x})
    rows = univariate_screen(scores, y, min_n=50)
    row = rows[0]
    assert row.odds_ratio < 1
    assert row.auc > 0.5
    from morphorisk import metrics

    assert row.auc == pytest.approx(
        metrics.auc(-x, y.to_numpy().astype(int)), abs=1e-12)


def test_screen_min_n_and_constant_column():
    y = pd.Series([0.0, 1.0] * 30)
    scores = pd.DataFrame({
        "SMA@L3": np.r_[np.random.default_rng(1).normal(size=40),
                        [np.nan] * 20],
        "SFA@L3": np.ones(60),
    })
    rows = univariate_screen(scores, y, min_n=50)
    assert rows[0].drop_reason == "unstable"       # n=40 < 50
    assert "n=40" in rows[0].blocking_metric
    assert rows[1].drop_reason == "unstable"       # constant score
    with pytest.raises(OneClass):
        univariate_screen(scores, pd.Series(np.zeros(60)), min_n=10)


def _row(metric, level, auc):
    r = ScreenRow(metric=metric, level=level)
    r.auc = auc
    r.n_used = 100
    r.retained = True
    return r


def test_best_level_tie_preference_centers_on_l3():
    rows = [_row("SMD", lv, 0.7) for lv in
            (LevelId.T12, LevelId.L3, LevelId.L2, LevelId.VOL3D)]
    assert best_level(rows) == LevelId.L3
    rows = [_row("SMD", lv, 0.7) for lv in (LevelId.L2, LevelId.L4)]
    assert best_level(rows) == LevelId.L2
    # strictly larger AUC wins regardless of preference
    rows = [_row("SMD", LevelId.L3, 0.7), _row("SMD", LevelId.T12, 0.71)]
    assert best_level(rows) == LevelId.T12


def test_best_level_override_and_failure():
    rows = [_row("SMD", LevelId.L2, 0.7)]
    assert best_level(rows, override=LevelId.L2) == LevelId.L2
    with pytest.raises(AllRowsFailed):
        best_level(rows, override=LevelId.L4)
    bad = ScreenRow(metric="SMD", level=LevelId.L2)
    bad.drop_reason = "unstable"
    with pytest.raises(AllRowsFailed):
        best_level([bad])


def test_collinearity_boundary_is_strict():
    """|r| exactly at the threshold survives; above it drops."""
    # integer construction: corrcoef([3,1,-1,-3], [15,-5,5,-15]) is
    # exactly 0.8 in float64 (all intermediate sums are exact)
    a = np.tile([3.0, 1.0, -1.0, -3.0], 25)
    at_threshold = np.tile([15.0, -5.0, 5.0, -15.0], 25)
    assert np.corrcoef(a, at_threshold)[0, 1] == pipeline.CORR_THRESHOLD
    dup = a.copy()                 # |r| = 1 with a
    scores = pd.DataFrame({"SMA@L3": a, "SMD@L3": at_threshold,
                           "SFA@L3": dup})
    rows = [_row("SMA", LevelId.L3, 0.80),
            _row("SMD", LevelId.L3, 0.75),
            _row("SFA", LevelId.L3, 0.70)]
    kept = collinearity_prune(rows, scores)
    kept_metrics = {r.metric for r in kept}
    assert "SMA" in kept_metrics           # best AUC always kept
    assert "SMD" in kept_metrics           # |r| == 0.8 not > 0.8
    assert "SFA" not in kept_metrics       # duplicate dropped
    dropped = next(r for r in rows if r.metric == "SFA")
    assert dropped.drop_reason == "correlated"
    assert dropped.blocking_metric == "SMA@L3"


def test_confounder_adjust_keeps_independent_signal():
    rng = np.random.default_rng(3)
    n = 400
    frame = _confounder_frame(rng, n)
    x = rng.normal(size=n)
    y = pd.Series((rng.uniform(size=n)
                   < _sigmoid(-0.5 + 1.5 * x)).astype(float))
    scores = pd.DataFrame({"SMD@L3": x})
    row = _row("SMD", LevelId.L3, 0.8)
    confounder_adjust(row, scores, frame, y)
    assert row.retained
    assert row.adjusted_p < 0.1


def test_confounder_adjust_drops_confounded_score():
    """A score that is pure noise plus a smoker effect loses its signal
    once smoker enters the model."""
    rng = np.random.default_rng(4)
    n = 500
    frame = _confounder_frame(rng, n)
    smoker = frame["smoker"].to_numpy()
    x = 2.0 * smoker + 0.3 * rng.normal(size=n)
    y = pd.Series((rng.uniform(size=n)
                   < _sigmoid(-1 + 1.5 * smoker)).astype(float))
    scores = pd.DataFrame({"MFA@L3": x})
    row = _row("MFA", LevelId.L3, 0.65)
    confounder_adjust(row, scores, frame, y)
    assert not row.retained
    assert row.drop_reason == "adjusted_ns"
    assert row.confounder_assoc.get("smoker") == "strong"


def test_select_features_end_to_end_plants_level():
    """Signal planted at (SMD, L2): the level choice lands on L2 and the
    pure-noise decoy metric is dropped."""
    rng = np.random.default_rng(5)
    n = 400
    frame = _confounder_frame(rng, n)
    signal = rng.normal(size=n)
    y = pd.Series((rng.uniform(size=n)
                   < _sigmoid(-0.5 + 1.6 * signal)).astype(float))
    scores = pd.DataFrame({
        "SMD@L2": signal + 0.1 * rng.normal(size=n),
        "SMD@L3": rng.normal(size=n),
        "SMD@T12": 0.3 * signal + rng.normal(size=n),
        # decoy: redundant near-copy of the winner, pruned as correlated
        "MFA@L3": signal + 0.11 * rng.normal(size=n),
    })
    rows = univariate_screen(scores, y, min_n=50)
    final = select_features(rows, scores, frame, y)
    by_metric = {r.metric: r for r in final}
    assert by_metric["SMD"].level == LevelId.L2
    assert by_metric["SMD"].retained
    assert not by_metric["MFA"].retained
    assert by_metric["MFA"].drop_reason == "correlated"


def test_backward_elimination_reaches_fixed_point():
    rng = np.random.default_rng(6)
    n = 500
    frame = pd.DataFrame({
        "signal": rng.normal(size=n),
        "noise1": rng.normal(size=n),
        "noise2": rng.normal(size=n),
    })
    frame["y"] = (rng.uniform(size=n)
                  < _sigmoid(-0.3 + 1.4 * frame["signal"])).astype(float)
    model = backward_eliminate(
        "logistic", frame,
        [PredictorSpec("signal"), PredictorSpec("noise1"),
         PredictorSpec("noise2")], outcome_col="y")
    names = [s.name for s in model.predictors]
    assert "signal" in names
    assert model.trace  # something was dropped
    for dropped, p in model.trace:
        assert p > pipeline.ELIMINATE_P
    # survivors all significant (or a single last predictor)
    if len(names) > 1:
        for s in model.predictors:
            b, se, p = model.fit.coef(s.name)
            assert p <= pipeline.ELIMINATE_P
    # rerunning on the survivors is a fixed point
    again = backward_eliminate("logistic", frame, model.predictors,
                               outcome_col="y")
    assert [s.name for s in again.predictors] == names
    assert again.trace == []


def test_backward_elimination_categorical_block():
    rng = np.random.default_rng(7)
    n = 600
    frame = _confounder_frame(rng, n)
    frame["x"] = rng.normal(size=n)
    eta = 1.2 * frame["x"] + 0.8 * (frame["asa_class"] == 4)
    frame["y"] = (rng.uniform(size=n) < _sigmoid(-1 + eta)).astype(float)
    model = backward_eliminate(
        "logistic", frame,
        [PredictorSpec("x"), PredictorSpec("asa_class", True),
         PredictorSpec("bmi_cat", True)], outcome_col="y")
    names = [s.name for s in model.predictors]
    assert "x" in names
    assert "asa_class" in names
    assert "bmi_cat" not in names


def test_cox_elimination_and_events_warning():
    rng = np.random.default_rng(8)
    n = 80
    frame = pd.DataFrame({
        "x": rng.normal(size=n),
        "n1": rng.normal(size=n),
        "n2": rng.normal(size=n),
        "n3": rng.normal(size=n),
    })
    t = rng.exponential(scale=np.exp(-frame["x"].to_numpy())) * 100 + 1
    frame["surv_time"] = np.minimum(t, 365.0)
    frame["surv_event"] = (t <= 365.0).astype(int)
    # keep events sparse relative to predictors to trigger the warning
    frame.loc[frame["surv_event"].cumsum() > 12, "surv_event"] = 0
    model = backward_eliminate(
        "cox", frame, [PredictorSpec(c) for c in ("x", "n1", "n2", "n3")])
    assert model.family == "cox"
    assert "x" in [s.name for s in model.predictors]
    assert "5 per predictor" in model.warning


def test_nsqip_log_odds_clipping():
    lo = nsqip_log_odds(np.array([0.0, 0.5, 1.0]))
    assert lo[1] == pytest.approx(0.0)
    assert lo[0] == pytest.approx(np.log(1e-6 / (1 - 1e-6)))
    assert lo[2] == pytest.approx(-lo[0], rel=1e-9)


def _suite_frame(rng, n=400):
    frame = _confounder_frame(rng, n)
    signal = rng.normal(size=n)
    frame["SMD@L3"] = signal
    lam = 0.002 * np.exp(0.9 * signal)
    t = rng.exponential(1.0 / lam) + 1
    frame["surv_time"] = np.minimum(t, 365.0)
    frame["surv_event"] = (t <= 365.0).astype(int)
    frame["mortality_1y"] = frame["surv_event"].astype(float)
    frame["nsqip_mortality_risk"] = _sigmoid(
        -3 + 1.2 * signal + 0.4 * rng.normal(size=n))
    frame["any_complication"] = (rng.uniform(size=n)
                                 < _sigmoid(-1 + signal)).astype(float)
    return frame


def test_model_suite_variants():
    rng = np.random.default_rng(9)
    frame = _suite_frame(rng)
    suite = build_model_suite(frame, "mortality_1y", ["SMD@L3"],
                              nsqip_col="nsqip_mortality_risk")
    assert set(suite) == {"IMG-only", "CLIN-only", "IMG+CLIN",
                          "NSQIP-only", "IMG+NSQIP"}
    img = suite["IMG-only"]
    assert img.family == "cox"
    assert [s.name for s in img.predictors] == ["SMD@L3"]
    # CLIN-only never contains image scores, by construction
    if not isinstance(suite["CLIN-only"], str):
        assert all(s.name != "SMD@L3"
                   for s in suite["CLIN-only"].predictors)
    binary = build_model_suite(frame, "any_complication", ["SMD@L3"],
                               nsqip_col="nsqip_mortality_risk")
    assert set(binary) == {"IMG-only", "CLIN-only", "IMG+CLIN"}
    assert binary["IMG-only"].family == "logistic"
    empty = build_model_suite(frame, "any_complication", [])
    assert isinstance(empty["IMG-only"], str)


def test_stratify_km_median_split():
    rng = np.random.default_rng(10)
    n = 200
    score = rng.normal(size=n)
    risk = rng.uniform(size=n)
    lam = 0.005 * np.exp(0.8 * score)
    t = rng.exponential(1.0 / lam) + 1
    surv = SurvivalData(np.minimum(t, 365.0), (t <= 365.0).astype(int))
    strata = stratify_km(score, risk, surv)
    sizes = sorted(len(v) for v in strata.strata.values())
    assert sum(sizes) == n
    assert min(sizes) > 0
    chi2, df, p = strata.overall
    assert df == 3
    assert 0 <= p <= 1
    assert len(strata.pairwise) == 6


def test_nsqip_subgroup_eval_cells_and_sweep():
    rng = np.random.default_rng(11)
    n = 300
    signal = rng.normal(size=n)
    lam = 0.004 * np.exp(0.9 * signal)
    t = rng.exponential(1.0 / lam) + 1
    surv = SurvivalData(np.minimum(t, 365.0), (t <= 365.0).astype(int))
    risk = np.clip(_sigmoid(-3 + signal), 1e-4, 0.9)
    pred_combined = signal + 0.2 * rng.normal(size=n)
    pred_nsqip = nsqip_log_odds(risk)
    cells, curve = nsqip_subgroup_eval(
        pred_combined, pred_nsqip, surv, risk, threshold=0.05, B=50,
        seed=0, sweep=[0.02, 0.05, 0.1])
    assert [c.name for c in cells] == ["low", "high"]
    assert cells[0].n + cells[1].n == n
    assert len(curve) == 3
    assert curve[0]["threshold"] == 0.02
