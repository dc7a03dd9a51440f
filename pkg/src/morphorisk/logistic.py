"""Logistic regression fit by Newton's method (IRLS) with step-halving."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .design import DesignMatrix
from .errors import ColumnMismatch, OneClass, SingularInformation

MAX_ITER = 100
SCORE_TOL = 1e-8
SEPARATION_BETA = 15.0


def _sigmoid(eta):
    return special.expit(eta)


def _loglik(y, eta):
    # sum y*eta - log(1 + exp(eta)), numerically stable
    return float(np.sum(y * eta) - np.sum(np.logaddexp(0.0, eta)))


@dataclass
class LogisticFit:
    columns: list                 # "(intercept)" first
    beta: np.ndarray
    se: np.ndarray
    zvalues: np.ndarray
    pvalues: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    diagnostic: str = ""
    n: int = 0
    groups: dict = field(default_factory=dict)  # predictor -> coef indices

    def coef(self, column):
        try:
            i = self.columns.index(column)
        except ValueError:
            raise ColumnMismatch(column) from None
        return float(self.beta[i]), float(self.se[i]), float(self.pvalues[i])

    def predict(self, X):
        """Event probability for covariate rows matching the fit columns
        (no intercept column in X)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.columns) - 1:
            raise ColumnMismatch(
                f"expected {len(self.columns) - 1} columns, got {X.shape[1]}")
        eta = self.beta[0] + X @ self.beta[1:]
        return _sigmoid(eta)


def fit_logistic(design: DesignMatrix, y) -> LogisticFit:
    """Maximize the Bernoulli log-likelihood by Newton/IRLS.

    Converges when max|score| < 1e-8 (or 100 iterations); halves the
    step while the log-likelihood decreases.  Separation (|beta|
    escaping past 15 with a non-vanishing score) is reported as
    non-convergence, not an exception.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.min() == y.max():
        raise OneClass("outcome has a single class")
    X = np.column_stack([np.ones(design.n), design.X])
    columns = ["(intercept)"] + list(design.columns)
    p = X.shape[1]
    beta = np.zeros(p)
    eta = X @ beta
    ll = _loglik(y, eta)
    converged = False
    diagnostic = ""
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu = _sigmoid(eta)
        score = X.T @ (y - mu)
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            it -= 1
            break
        w = mu * (1.0 - mu)
        info = X.T @ (X * w[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformation(
                "information matrix is rank-deficient") from None
        # step-halving on likelihood decrease
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            cand_ll = _loglik(y, X @ cand)
            # slack scales with |ll|: near the optimum the true change is
            # below the float64 resolution of the log-likelihood itself
            if cand_ll >= ll - 1e-10 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        beta = cand
        eta = X @ beta
        ll = cand_ll
        if np.max(np.abs(beta)) > SEPARATION_BETA:
            diagnostic = ("separation suspected: |beta| > "
                          f"{SEPARATION_BETA} with non-vanishing score")
            break
    else:
        diagnostic = diagnostic or "max iterations reached"
    if not converged and not diagnostic:
        diagnostic = "max iterations reached"
    mu = _sigmoid(eta)
    w = mu * (1.0 - mu)
    info = X.T @ (X * w[:, None])
    try:
        cov = np.linalg.inv(info)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        if not converged:
            se = np.full(p, np.inf)  # diverging fit, SEs meaningless
        else:
            raise SingularInformation(
                "information matrix is rank-deficient") from None
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, beta / se, np.inf * np.sign(beta))
    pvals = special.erfc(np.abs(z) / np.sqrt(2.0))
    groups = {name: [i + 1 for i in idx]
              for name, idx in design.groups.items()}
    return LogisticFit(columns=columns, beta=beta, se=se, zvalues=z,
                       pvalues=pvals, loglik=ll, iterations=it,
                       converged=converged, diagnostic=diagnostic,
                       n=design.n, groups=groups)


def odds_ratio_ci(fit: LogisticFit, column):
    """(OR, lo, hi, p): exponentiated coefficient with two-sided 95%
    Wald interval."""
    b, se, p = fit.coef(column)
    return (float(np.exp(b)), float(np.exp(b - 1.96 * se)),
            float(np.exp(b + 1.96 * se)), p)


def likelihood_ratio_p(full: LogisticFit, reduced: LogisticFit, df):
    """LR test p-value for dropping a block of df coefficients."""
    stat = max(2.0 * (full.loglik - reduced.loglik), 0.0)
    return float(special.chdtrc(df, stat))


def linear_contributions(fit: LogisticFit, x, background):
    """Per-feature contribution beta_i * (x_i - mean_i): the exact
    Shapley value of a linear model under feature independence."""
    x = np.asarray(x, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if x.shape[0] != len(fit.columns) - 1 or background.shape != x.shape:
        raise ColumnMismatch("row/background width must match fit columns")
    return fit.beta[1:] * (x - background)
