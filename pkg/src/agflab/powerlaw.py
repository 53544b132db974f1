"""Power-law and exponential curve fitting.

Every fit here is a profile fit: one nonlinear parameter is searched in one
dimension (coarse log/linear scan, then golden-section refinement), and the
rest come from an ordinary least-squares line in transformed coordinates.
The functional API returns small result records; the ``*Regressor`` classes
wrap the same routines in the scikit-learn estimator interface.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DomainError, FitError

__all__ = [
    "DuaneFit",
    "AsymptoticFit",
    "ExponentialFit",
    "PowerDecayFit",
    "DecayComparison",
    "fit_duane",
    "fit_asymptotic_power",
    "fit_exponential",
    "fit_power_decay",
    "compare_power_exp",
    "deep_smoothing_ratio",
    "golden_section",
    "DuaneRegressor",
    "AsymptoticPowerRegressor",
    "ExponentialDecayRegressor",
    "PowerDecayRegressor",
]

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
CEILING_SPAN = 10.0
CEILING_XTOL = 1e-11


@dataclass(frozen=True)
class DuaneFit:
    """``ln(mtbf) = -ln(a) + m*ln(t)``."""

    a: float
    m: float
    rmse_loglog: float

    def predict(self, t):
        return np.exp(-math.log(self.a) + self.m * np.log(t))


@dataclass(frozen=True)
class AsymptoticFit:
    """``score(t) = L - a * t**(-m)``; ``probes`` holds every ``(L, rmse)`` evaluated during the search."""

    L: float
    a: float
    m: float
    rmse: float
    probes: tuple = field(default=(), repr=False, compare=False)

    def predict(self, t):
        return self.L - self.a * np.asarray(t, dtype=float) ** (-self.m)


class ExponentialFit(NamedTuple):
    """``y = A * exp(-lam * x)``; rmse is measured on ``ln y``."""

    A: float
    lam: float
    rmse: float

    def predict(self, x):
        return self.A * np.exp(-self.lam * np.asarray(x, dtype=float))


class PowerDecayFit(NamedTuple):
    """``y = A * (1 + x/r)**(-k)``; rmse is measured on ``ln y``."""

    A: float
    r: float
    k: float
    rmse: float

    def predict(self, x):
        return self.A * (1.0 + np.asarray(x, dtype=float) / self.r) ** (-self.k)


@dataclass(frozen=True)
class DecayComparison:
    power: PowerDecayFit
    exp: ExponentialFit
    preferred: str

    @property
    def rmse_gap(self):
        """Exponential minus power log-space rmse (positive when the power law fits better)."""
        return self.exp.rmse - self.power.rmse

    def to_dict(self):
        return {
            "power": self.power._asdict(),
            "exp": self.exp._asdict(),
            "preferred": self.preferred,
            "rmse_gap": self.rmse_gap,
        }


def _vector(x, name):
    arr = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise FitError(f"{name} contains non-finite values")
    return arr


def _ols(X, y):
    """Intercept and slope of the least-squares line through ``(X, y)``."""
    xm = X.mean()
    ym = y.mean()
    dx = X - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise FitError("regressor has zero variance")
    slope = float(dx @ (y - ym)) / sxx
    return ym - slope * xm, slope


def golden_section(f, lo, hi, xtol, probes=None):
    """Minimise a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    if probes is not None:
        probes.extend(((c, fc), (d, fd)))
    while b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
            if probes is not None:
                probes.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
            if probes is not None:
                probes.append((d, fd))
    return (c, fc) if fc <= fd else (d, fd)


def _scan_then_refine(f, grid, xtol, probes):
    values = [f(x) for x in grid]
    probes.extend(zip(grid, values))
    i = int(np.nanargmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    x, fx = golden_section(f, lo, hi, xtol, probes)
    if values[i] < fx:
        return grid[i], values[i]
    return x, fx


def fit_duane(t, mtbf):
    """Least-squares Duane line on log-log axes.

    Raises
    ------
    DomainError
        If any ``t`` or ``mtbf`` is not positive.
    FitError
        If fewer than two distinct ``t`` are given.
    """
    t = _vector(t, "t")
    y = _vector(mtbf, "mtbf")
    if t.shape != y.shape:
        raise FitError("t and mtbf must have the same length")
    if np.any(t <= 0) or np.any(y <= 0):
        raise DomainError("Duane fit needs positive t and mtbf")
    if np.unique(t).size < 2:
        raise FitError("need at least two distinct t values")
    X = np.log(t)
    Y = np.log(y)
    intercept, m = _ols(X, Y)
    resid = Y - (intercept + m * X)
    return DuaneFit(math.exp(-intercept), m, float(np.sqrt(np.mean(resid**2))))


def _ceiling_profile(t, s):
    X = np.log(t)

    def inner(L):
        intercept, slope = _ols(X, np.log(L - s))
        a, m = math.exp(intercept), -slope
        pred = L - a * t ** (-m)
        return float(np.sqrt(np.mean((pred - s) ** 2))), a, m

    return inner


def fit_asymptotic_power(scores, t=None, span=CEILING_SPAN, xtol=CEILING_XTOL):
    """Fit a learning curve ``L - a * t**(-m)`` with a performance ceiling ``L``.

    ``L`` is profiled over ``(max(scores), max(scores) + span]``; for each
    candidate, ``ln(L - score)`` is regressed on ``ln t`` to get ``a`` and
    ``m``, and the candidate with the smallest score-space rmse wins.

    Parameters
    ----------
    scores : array_like
        At least four per-epoch scores with an overall rising trend.
    t : array_like, optional
        Epoch indices, default ``1..n``.
    """
    s = _vector(scores, "scores")
    if s.size < 4:
        raise FitError("need at least 4 scores")
    t = np.arange(1, s.size + 1, dtype=float) if t is None else _vector(t, "t")
    if t.shape != s.shape or np.any(t <= 0):
        raise FitError("t must be positive and match scores in length")
    if np.ptp(s) == 0.0:
        raise FitError("scores are constant; the ceiling is undetermined")
    if not s[-1] > s[0]:
        raise FitError("scores do not rise overall")
    top = float(s.max())
    lo = top + max(1e-9, 1e-12 * abs(top))
    hi = top + span
    inner = _ceiling_profile(t, s)
    probes = []
    # coarse scan dense near the lower bound, where the profile changes fastest
    grid = lo + (hi - lo) * np.linspace(0.0, 1.0, 201) ** 2
    L, rmse = _scan_then_refine(lambda L: inner(L)[0], list(grid), xtol, probes)
    rmse, a, m = inner(L)
    if not (a > 0 and m > 0):
        raise FitError(f"no rising power-law fit (a={a:.4g}, m={m:.4g})")
    return AsymptoticFit(float(L), a, m, rmse, tuple(probes))


def fit_exponential(x, y):
    """Log-linear fit ``ln y = ln A - lam * x``."""
    x = _vector(x, "x")
    y = _vector(y, "y")
    if x.shape != y.shape:
        raise FitError("x and y must have the same length")
    if np.any(y <= 0):
        raise DomainError("exponential fit needs positive y")
    Y = np.log(y)
    intercept, slope = _ols(x, Y)
    resid = Y - (intercept + slope * x)
    return ExponentialFit(math.exp(intercept), -slope, float(np.sqrt(np.mean(resid**2))))


def fit_power_decay(x, y, log_r_bounds=None, xtol=1e-12):
    """Fit ``A * (1 + x/r)**(-k)`` by profiling ``log r`` with an inner log-linear fit for ``A`` and ``k``."""
    x = _vector(x, "x")
    y = _vector(y, "y")
    if x.shape != y.shape:
        raise FitError("x and y must have the same length")
    if np.any(y <= 0):
        raise DomainError("power-law fit needs positive y")
    if np.any(x < 0):
        raise DomainError("power-law fit needs non-negative x")
    Y = np.log(y)
    xmax = float(x.max())
    if xmax <= 0:
        raise FitError("x has no spread")
    if log_r_bounds is None:
        log_r_bounds = (math.log(1e-3 * xmax), math.log(1e4 * xmax))

    def inner(log_r):
        X = np.log1p(x / math.exp(log_r))
        intercept, slope = _ols(X, Y)
        resid = Y - (intercept + slope * X)
        return float(np.sqrt(np.mean(resid**2))), intercept, slope

    probes = []
    grid = list(np.linspace(*log_r_bounds, 241))
    log_r, _ = _scan_then_refine(lambda v: inner(v)[0], grid, xtol, probes)
    rmse, intercept, slope = inner(log_r)
    return PowerDecayFit(math.exp(intercept), math.exp(log_r), -slope, rmse)


def compare_power_exp(x, y):
    """Fit both decay families and prefer the one with the smaller log-space rmse."""
    x = _vector(x, "x")
    if x.size < 5:
        raise FitError("need at least 5 points to compare decay families")
    p = fit_power_decay(x, y)
    e = fit_exponential(x, y)
    return DecayComparison(p, e, "power" if p.rmse <= e.rmse else "exp")


def deep_smoothing_ratio(d, k, i):
    """Successive-increment ratio ``((d+i)/(d+i+1))**k`` of the power law ``S(i) = (d+i)**(-k)``."""
    if not (d > 0 and k > 0 and i > 0):
        raise DomainError("deep smoothing ratio needs d > 0, k > 0, i > 0")
    return ((d + i) / (d + i + 1.0)) ** k


# -- scikit-learn estimators ---------------------------------------------------


def _column(X, name="X"):
    arr = check_array(X, ensure_2d=False, dtype=float)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"{name} must have a single feature column")
        arr = arr[:, 0]
    return arr


class DuaneRegressor(RegressorMixin, BaseEstimator):
    """Duane reliability-growth line fitted on log-log axes.

    Attributes
    ----------
    a_, m_ : float
    rmse_loglog_ : float
    """

    def fit(self, X, y):
        fit = fit_duane(_column(X), _column(y, "y"))
        self.a_, self.m_, self.rmse_loglog_ = fit.a, fit.m, fit.rmse_loglog
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "a_")
        return DuaneFit(self.a_, self.m_, 0.0).predict(_column(X))


class AsymptoticPowerRegressor(RegressorMixin, BaseEstimator):
    """Learning curve with a ceiling, ``L - a * t**(-m)``.

    Parameters
    ----------
    span : float
        Width of the search interval for ``L`` above the best observed score.
    xtol : float
        Golden-section tolerance on ``L``.
    """

    def __init__(self, span=CEILING_SPAN, xtol=CEILING_XTOL):
        self.span = span
        self.xtol = xtol

    def fit(self, X, y):
        fit = fit_asymptotic_power(_column(y, "y"), _column(X), span=self.span, xtol=self.xtol)
        self.L_, self.a_, self.m_, self.rmse_ = fit.L, fit.a, fit.m, fit.rmse
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "L_")
        return self.L_ - self.a_ * _column(X) ** (-self.m_)


class ExponentialDecayRegressor(RegressorMixin, BaseEstimator):
    def fit(self, X, y):
        fit = fit_exponential(_column(X), _column(y, "y"))
        self.A_, self.lam_, self.rmse_ = fit.A, fit.lam, fit.rmse
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "A_")
        return self.A_ * np.exp(-self.lam_ * _column(X))


class PowerDecayRegressor(RegressorMixin, BaseEstimator):
    """Shifted power law ``A * (1 + x/r)**(-k)``, the same family as the gravitational-field coefficient."""

    def fit(self, X, y):
        fit = fit_power_decay(_column(X), _column(y, "y"))
        self.A_, self.r_, self.k_, self.rmse_ = fit.A, fit.r, fit.k, fit.rmse
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "A_")
        return self.A_ * (1.0 + _column(X) / self.r_) ** (-self.k_)
