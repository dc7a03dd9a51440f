"""Kaplan-Meier estimation, the log-rank test, and one-way ANOVA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats as scipy_stats

from .cox import SurvivalData
from .errors import DegenerateGroups


@dataclass
class KMCurve:
    times: np.ndarray       # ordered distinct event times
    survival: np.ndarray    # S just after each event time
    at_risk: np.ndarray
    n_events: np.ndarray

    def at(self, t):
        """S(t): step function, 1 before the first event."""
        idx = np.searchsorted(self.times, np.asarray(t), side="right")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]


def kaplan_meier(surv: SurvivalData) -> KMCurve:
    """Product-limit estimator.  Subjects censored at an event time stay
    at risk for that time (censoring ordered after events at ties)."""
    if surv.n < 1:
        raise ValueError("need at least one subject")
    order = np.argsort(surv.time, kind="mergesort")
    t = surv.time[order]
    e = surv.event[order]
    times = []
    at_risk = []
    d_counts = []
    n = len(t)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and t[j + 1] == t[i]:
            j += 1
        d = int(e[i:j + 1].sum())
        if d > 0:
            times.append(t[i])
            at_risk.append(n - i)
            d_counts.append(d)
        i = j + 1
    times = np.asarray(times, dtype=np.float64)
    at_risk = np.asarray(at_risk, dtype=np.int64)
    d_counts = np.asarray(d_counts, dtype=np.int64)
    factors = 1.0 - d_counts / at_risk
    return KMCurve(times=times, survival=np.cumprod(factors),
                   at_risk=at_risk, n_events=d_counts)


def censoring_km(surv: SurvivalData) -> KMCurve:
    """KM of the censoring distribution (events and censorings swapped),
    used for IPCW weights."""
    return kaplan_meier(SurvivalData(surv.time, 1 - surv.event))


def log_rank_test(groups):
    """Observed-minus-expected log-rank across >= 2 groups.

    Returns (chi2, df, p) with the hypergeometric variance and
    df = #groups - 1.
    """
    if len(groups) < 2:
        raise DegenerateGroups("need at least two groups")
    for g in groups:
        if g.n == 0:
            raise DegenerateGroups("empty group")
    k = len(groups)
    all_time = np.concatenate([g.time for g in groups])
    all_event = np.concatenate([g.event for g in groups])
    if all_event.sum() == 0:
        raise DegenerateGroups("no events overall")
    membership = np.concatenate(
        [np.full(g.n, i) for i, g in enumerate(groups)])
    event_times = np.unique(all_time[all_event == 1])
    observed = np.zeros(k)
    expected = np.zeros(k)
    # covariance of the first k-1 group O-E sums
    cov = np.zeros((k - 1, k - 1))
    for t in event_times:
        at_risk = all_time >= t
        n_t = int(at_risk.sum())
        d_t = int(((all_time == t) & (all_event == 1)).sum())
        n_g = np.array([(at_risk & (membership == i)).sum()
                        for i in range(k)], dtype=np.float64)
        d_g = np.array(
            [((all_time == t) & (all_event == 1) & (membership == i)).sum()
             for i in range(k)], dtype=np.float64)
        observed += d_g
        expected += d_t * n_g / n_t
        if n_t > 1:
            frac = n_g / n_t
            mult = d_t * (n_t - d_t) / (n_t - 1)
            for a in range(k - 1):
                for b in range(k - 1):
                    if a == b:
                        cov[a, b] += mult * frac[a] * (1 - frac[a])
                    else:
                        cov[a, b] -= mult * frac[a] * frac[b]
    u = (observed - expected)[:k - 1]
    if np.allclose(u, 0.0):
        chi2 = 0.0
    else:
        try:
            chi2 = float(u @ np.linalg.solve(cov, u))
        except np.linalg.LinAlgError:
            chi2 = float(u @ np.linalg.pinv(cov) @ u)
    df = k - 1
    p = float(special.chdtrc(df, chi2))
    return chi2, df, p


def anova_oneway(values, categories):
    """Classical between/within F decomposition; (F, p)."""
    values = np.asarray(values, dtype=np.float64)
    categories = np.asarray(categories)
    cats = [c for c in np.unique(categories)]
    groups = [values[categories == c] for c in cats]
    groups = [g for g in groups if len(g) > 0]
    if len(groups) < 2:
        raise DegenerateGroups("need at least two nonempty categories")
    n = len(values)
    k = len(groups)
    grand = values.mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df1 = k - 1
    df2 = n - k
    if df2 <= 0:
        raise DegenerateGroups("no within-group degrees of freedom")
    if ss_within == 0:
        f = 0.0 if ss_between == 0 else np.inf
    else:
        f = (ss_between / df1) / (ss_within / df2)
    p = float(scipy_stats.f.sf(f, df1, df2))
    return float(f), p
