"""L1-penalized logistic regression with a post-selection refit.

The penalized path minimizes mean binary cross-entropy plus lambda * sum|b_j|
by cyclic coordinate descent with soft-thresholding on a local quadratic
approximation (the intercept is never penalized). Thresholded coefficients
are exactly zero. Inference on the surviving columns comes from an
unpenalized Newton refit: Wald standard errors from the inverse observed
information and two-sided normal-tail p-values. Those p-values are
post-selection, not selection-adjusted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .dataset import SplitAssignment
from .errors import (
    ConvergenceError,
    DimensionError,
    InactiveColumnError,
    SeparationError,
)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_SWEEPS = 10_000
_WEIGHT_FLOOR = 1e-10
_COEF_BOUND = 50.0  # scaled inputs; beyond this the refit is diverging


@dataclass(frozen=True)
class LogitFit:
    intercept: float
    coefficients: np.ndarray
    active_set: tuple[int, ...]
    pvalues: dict[int, float]  # column index -> two-sided Wald p (refit only)
    standard_errors: dict[int, float]
    lam: float
    intercept_pvalue: float | None = None
    oos_accuracy: float | None = None


def _check_xy(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.ndim != 2:
        raise DimensionError(f"x must be 2-D, got shape {x.shape}")
    if y.size != x.shape[0]:
        raise DimensionError(f"{y.size} labels for {x.shape[0]} rows")
    return x, y


def _soft(u: float, t: float) -> float:
    if u > t:
        return u - t
    if u < -t:
        return u + t
    return 0.0


def fit_lasso(
    x,
    y,
    lam: float,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    warm_start: tuple[float, np.ndarray] | None = None,
) -> LogitFit:
    """Penalized fit; converged when the largest coefficient change in a full
    sweep (including the intercept) drops below tol. ``warm_start`` takes an
    (intercept, coefficients) pair, e.g. the previous solution on a lambda
    path."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    x, y = _check_xy(x, y)
    n, p = x.shape
    if warm_start is not None:
        b0 = float(warm_start[0])
        b = np.array(warm_start[1], dtype=float).copy()
        if b.shape != (p,):
            raise DimensionError(f"warm start of length {b.size} for p={p}")
    else:
        pbar = min(max(float(y.mean()), 1e-12), 1.0 - 1e-12)
        b0 = math.log(pbar / (1.0 - pbar))
        b = np.zeros(p)

    max_delta = np.inf
    for _ in range(max_sweeps):
        eta = b0 + x @ b
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), _WEIGHT_FLOOR)
        r = (y - mu) / w  # working residual at the current iterate
        max_delta = 0.0

        d0 = float(np.dot(w, r) / w.sum())
        b0 += d0
        r -= d0
        max_delta = abs(d0)

        for j in range(p):
            xj = x[:, j]
            vj = float(np.dot(w * xj, xj)) / n
            if vj <= 0.0:
                continue
            u = float(np.dot(w * xj, r)) / n + vj * b[j]
            bj = _soft(u, lam) / vj
            dj = bj - b[j]
            if dj != 0.0:
                b[j] = bj
                r -= dj * xj
                max_delta = max(max_delta, abs(dj))
        if max_delta < tol:
            break
    else:
        raise ConvergenceError(
            f"coordinate descent did not converge within {max_sweeps} sweeps "
            f"(last max coefficient change {max_delta:.3e})"
        )
    active = tuple(int(j) for j in np.flatnonzero(b != 0.0))
    return LogitFit(
        intercept=b0,
        coefficients=b,
        active_set=active,
        pvalues={},
        standard_errors={},
        lam=lam,
    )


def _log_likelihood(y, eta):
    mu = np.clip(expit(eta), 1e-300, 1.0 - 1e-16)
    return float(np.dot(y, np.log(mu)) + np.dot(1.0 - y, np.log(1.0 - mu)))


def refit_active(x, y, active_set, max_iter: int = 100) -> LogitFit:
    """Unpenalized Newton-Raphson MLE on the active columns (plus intercept).

    Raises SeparationError if the estimates diverge or the information matrix
    is singular; an empty active set fits the intercept alone.
    """
    x, y = _check_xy(x, y)
    active = tuple(int(j) for j in active_set)
    n = x.shape[0]
    design = np.column_stack([np.ones(n)] + [x[:, j] for j in active])
    k = design.shape[1]
    beta = np.zeros(k)
    ll = _log_likelihood(y, design @ beta)

    converged = False
    for _ in range(max_iter):
        eta = design @ beta
        mu = expit(eta)
        w = mu * (1.0 - mu)
        grad = design.T @ (y - mu)
        info = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SeparationError(
                "singular observed information; separation or exact collinearity"
            ) from None
        # Damped update: halve the step while the likelihood worsens.
        for _ in range(30):
            candidate = beta + step
            ll_new = _log_likelihood(y, design @ candidate)
            if ll_new >= ll - 1e-12:
                break
            step = step / 2.0
        beta = beta + step
        ll = _log_likelihood(y, design @ beta)
        if float(np.max(np.abs(beta))) > _COEF_BOUND:
            raise SeparationError(
                "coefficients diverging during refit; classes appear perfectly separated"
            )
        if float(np.max(np.abs(step))) < 1e-10:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Newton refit did not converge in {max_iter} iterations")

    mu = expit(design @ beta)
    w = mu * (1.0 - mu)
    info = design.T @ (design * w[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SeparationError("singular observed information at the optimum") from None
    se = np.sqrt(np.diag(cov))
    zvals = beta / se
    pvals = 2.0 * norm.sf(np.abs(zvals))

    coefficients = np.zeros(x.shape[1])
    pvalues = {}
    standard_errors = {}
    for pos, j in enumerate(active, start=1):
        coefficients[j] = beta[pos]
        pvalues[j] = float(pvals[pos])
        standard_errors[j] = float(se[pos])
    return LogitFit(
        intercept=float(beta[0]),
        coefficients=coefficients,
        active_set=active,
        pvalues=pvalues,
        standard_errors=standard_errors,
        lam=0.0,
        intercept_pvalue=float(pvals[0]),
    )


def predict_proba(fit: LogitFit, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return expit(fit.intercept + x @ fit.coefficients)


def classify(fit: LogitFit, x, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(fit, x) >= threshold).astype(int)


def accuracy(fit: LogitFit, x, y) -> float:
    y = np.asarray(y, dtype=int).reshape(-1)
    return float(np.mean(classify(fit, x) == y))


def odds_interpretation(fit: LogitFit, column: int) -> float:
    """e^{b_j}: the multiplicative change in the odds per unit of column j."""
    if column not in fit.active_set:
        raise InactiveColumnError(f"column {column} is not in the active set")
    return float(np.exp(fit.coefficients[column]))


def lambda_max(x, y) -> float:
    """Smallest penalty that zeroes every slope (intercept-only stationarity).

    Padded by one part in 1e10 so the boundary fit really does threshold to
    zero despite last-ulp differences against the coordinate-descent score.
    """
    x, y = _check_xy(x, y)
    pbar = float(y.mean())
    score = x.T @ (y - pbar) / x.shape[0]
    return float(np.max(np.abs(score))) * (1.0 + 1e-10) if score.size else 0.0


def _deviance_ratio(fit: LogitFit, x, y) -> float:
    """Fraction of the null deviance explained by the fit."""
    eta = fit.intercept + x @ fit.coefficients
    pbar = min(max(float(y.mean()), 1e-12), 1.0 - 1e-12)
    null_eta = np.full(y.shape, math.log(pbar / (1.0 - pbar)))
    dev = -2.0 * _log_likelihood(y, eta)
    null_dev = -2.0 * _log_likelihood(y, null_eta)
    return 1.0 - dev / null_dev if null_dev > 0 else 1.0


def select_lambda(
    x,
    y,
    splits: SplitAssignment,
    n_points: int = 50,
    span: float = 1e-4,
) -> float:
    """Pick the penalty maximizing validation accuracy over a log grid.

    The grid spans [span * lambda_max, lambda_max], walked downward with warm
    starts; ties go to the larger penalty (the sparser model). The path stops
    early once the training fit is essentially saturated (deviance ratio
    above 0.999) or a point fails to converge: beyond that the data is
    quasi-separated and smaller penalties only push coefficients out further.
    """
    x, y = _check_xy(x, y)
    xt, yt = x[splits.train], y[splits.train]
    xv, yv = x[splits.validation], y[splits.validation]
    lmax = lambda_max(xt, yt)
    if lmax <= 0.0:
        return 0.0
    grid = np.geomspace(lmax, span * lmax, n_points)  # descending

    best_lam = float(grid[0])
    best_acc = -1.0
    sizes = []
    warm = None
    for lam in grid:
        try:
            fit = fit_lasso(xt, yt, float(lam), warm_start=warm)
        except ConvergenceError:
            warnings.warn(
                f"lambda path stopped at {lam:.3e}: coordinate descent stalled "
                "(quasi-separated training data)"
            )
            break
        warm = (fit.intercept, fit.coefficients)
        sizes.append(len(fit.active_set))
        acc = accuracy(fit, xv, yv)
        if acc > best_acc:
            best_acc = acc
            best_lam = float(lam)
        if _deviance_ratio(fit, xt, yt) >= 0.999:
            break
    # Active sets should grow as the penalty shrinks; the local quadratic
    # approximation can wobble by one column, anything more is worth flagging.
    drops = [sizes[i] - sizes[i + 1] for i in range(len(sizes) - 1)]
    if drops and max(drops) > 1:
        warnings.warn(
            f"active-set size decreased by {max(drops)} along the descending "
            "lambda grid; check conditioning"
        )
    return best_lam
