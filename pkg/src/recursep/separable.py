"""Separable direct-effect machinery and the PR-MSMaT score test.

The treatment is split into a component acting on recurrence (``a_y``) and one
acting on survival (``a_d``). Counterfactual mean frequencies
``mu^{a_y, a_d}`` are estimated by reweighting arm ``a_y`` so that its death
process looks like arm ``a_d``'s; a proportional-rate model
``mu^{1, a_d}(t) = exp(beta) mu^{0, a_d}(t)`` then yields a closed-form
``beta`` and a score statistic ``U`` for ``H0: beta = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_dataset, check_horizon, check_multiplicity, check_truncation,
)
from .data import Dataset, TimeGrid
from .estimators import DeathHazardModel, _km_from_tables, _safe_ratio
from .exceptions import (
    DegenerateVarianceError, InputError, NumericalError, UndefinedEstimandError,
)
from .results import TestResult
from .rng import replicate_rng

DEFAULT_TRUNCATION = (0.05, 20.0)


@dataclass(frozen=True, eq=False)
class WeightProcess:
    """Per-subject, per-interval weights for subjects in arm ``a_y``.

    ``values`` has one row per subject listed in ``subject_index`` (the
    dataset rows with ``A = a_y``); entries where the subject is not at risk
    are NaN.
    """

    a_y: int
    a_d: int
    bounds: tuple
    subject_index: np.ndarray
    values: np.ndarray
    truncated_fraction: float = 0.0
    raw_min: float = 1.0
    raw_max: float = 1.0

    def filled(self):
        """Weights with NaN replaced by 0, convenient for masked sums."""
        return np.nan_to_num(self.values, nan=0.0)


def compute_weights(dataset: Dataset, hazard_models, a_y: int, a_d: int,
                    truncation=DEFAULT_TRUNCATION) -> WeightProcess:
    """Running products of death/survival probability ratios under ``a_d`` vs ``a_y``.

    In each at-risk interval ``q`` a subject contributes
    ``(1 - h_q(a_d)) / (1 - h_q(a_y))`` if it survives ``q`` and
    ``h_q(a_d) / h_q(a_y)`` if it dies there, with hazards evaluated at the
    subject's own ``Y_{q-1}``. Weights are clipped to ``truncation``.
    """
    check_dataset(dataset)
    if a_y not in (0, 1) or a_d not in (0, 1):
        raise InputError("a_y and a_d must be 0 or 1")
    lo, hi = check_truncation(truncation)
    idx = np.flatnonzero(dataset.arm == a_y)
    Z = dataset.at_risk_matrix[idx]

    if a_y == a_d:
        values = np.where(Z, 1.0, np.nan)
        return WeightProcess(a_y, a_d, (lo, hi), idx, values)

    for a in (a_y, a_d):
        model = hazard_models[a] if hazard_models is not None else None
        if model is None or not hasattr(model, "alpha_"):
            raise InputError(f"hazard model for arm {a} is missing or not fitted")
        if model.n_intervals_ != dataset.K:
            raise InputError("hazard models must be fitted on the dataset's grid")

    Y = dataset.prior_events[idx]
    died = dataset.death_matrix[idx]
    ymax = int(Y.max()) if Y.size else 0
    hd = hazard_models[a_d].hazard_table(ymax)
    hy = hazard_models[a_y].hazard_table(ymax)
    kk = np.arange(dataset.K)[None, :]
    hd, hy = hd[kk, Y], hy[kk, Y]
    if not (np.all((hd > 0) & (hd < 1)) and np.all((hy > 0) & (hy < 1))):
        raise NumericalError("predicted death hazard outside (0, 1)")
    log_factor = np.where(died, np.log(hd) - np.log(hy), np.log1p(-hd) - np.log1p(-hy))
    log_factor = np.where(Z, log_factor, 0.0)
    raw = np.exp(np.cumsum(log_factor, axis=1))
    at = raw[Z]
    truncated = float(np.mean((at < lo) | (at > hi))) if at.size else 0.0
    values = np.where(Z, np.clip(raw, lo, hi), np.nan)
    return WeightProcess(
        a_y, a_d, (lo, hi), idx, values, truncated,
        float(at.min()) if at.size else 1.0, float(at.max()) if at.size else 1.0,
    )


@dataclass(frozen=True, eq=False)
class CounterfactualMeanCurve:
    """Estimated ``mu^{a_y, a_d}`` on the grid with its components.

    ``increments[t-1] = survival[t-1] * rate[t-1]`` where ``survival`` is the
    arm-``a_y`` Kaplan-Meier level at the start of interval ``t`` and ``rate``
    the weighted event rate among subjects at risk.
    """

    grid: TimeGrid
    a_y: int
    a_d: int
    increments: np.ndarray
    survival: np.ndarray
    rate: np.ndarray
    at_risk: np.ndarray

    @property
    def cumulative(self):
        return np.cumsum(self.increments)


def counterfactual_mean_curve(dataset: Dataset, a_y: int, a_d: int,
                              weights: WeightProcess,
                              sample_weight=None) -> CounterfactualMeanCurve:
    """Increment estimator ``S^{a_y}(t-) * weighted events / at risk`` for ``(a_y, a_d)``."""
    check_dataset(dataset)
    if weights.a_y != a_y or weights.a_d != a_d:
        raise InputError(
            f"weights were computed for (a_y={weights.a_y}, a_d={weights.a_d}), "
            f"not ({a_y}, {a_d})"
        )
    c = check_multiplicity(dataset, sample_weight)
    idx = weights.subject_index
    Z = dataset.at_risk_matrix[idx]
    D = dataset.death_matrix[idx]
    WE = weights.filled() * dataset.events[idx]
    if c is None:
        risk, deaths, num = Z.sum(0).astype(float), D.sum(0).astype(float), WE.sum(0)
    else:
        ci = c[idx]
        risk, deaths, num = ci @ Z, ci @ D, ci @ WE
    _, S_start = _km_from_tables(risk, deaths)
    rate = _safe_ratio(num, risk)
    return CounterfactualMeanCurve(
        dataset.grid, a_y, a_d, S_start * rate, S_start, rate, risk,
    )


def _check_pair(curve1, curve0, dataset):
    if curve1.a_y != 1 or curve0.a_y != 0:
        raise InputError("curve1 must have a_y=1 and curve0 a_y=0")
    if curve1.a_d != curve0.a_d:
        raise InputError("both curves must share a_d")
    if curve1.grid != curve0.grid or curve1.grid != dataset.grid:
        raise InputError("curves and dataset must share a grid")


def treated_at_risk(dataset, sample_weight=None):
    """``Q(t) = sum_i Z_i(t) A_i`` per interval."""
    Z = dataset.at_risk_matrix[dataset.arm == 1]
    if sample_weight is None:
        return Z.sum(0).astype(float)
    return sample_weight[dataset.arm == 1] @ Z


def estimating_equation(beta, curve1, curve0, dataset, horizon_index=None, sample_weight=None):
    """Left-hand side of the proportional-rate estimating equation at ``beta``."""
    _check_pair(curve1, curve0, dataset)
    k = check_horizon(dataset, horizon_index)
    Q = treated_at_risk(dataset, sample_weight)[:k]
    return float(Q @ curve1.increments[:k] - math.exp(beta) * (Q @ curve0.increments[:k]))


def fit_pr_msm(curve1, curve0, dataset, horizon_index=None, sample_weight=None):
    """Closed-form ``beta`` solving the estimating equation.

    Returns ``-inf`` when the treated-side sum is zero (a boundary estimate).
    """
    _check_pair(curve1, curve0, dataset)
    k = check_horizon(dataset, horizon_index)
    Q = treated_at_risk(dataset, sample_weight)[:k]
    num = float(Q @ curve1.increments[:k])
    den = float(Q @ curve0.increments[:k])
    if not den > 0:
        raise UndefinedEstimandError("no weighted events in the control-side curve")
    if num <= 0:
        return -math.inf
    return math.log(num / den)


def score_statistic(curve1, curve0, dataset, horizon_index=None, sample_weight=None):
    """``U = sum_{t <= tau} Q(t) (dmu^{1,a_d}_t - dmu^{0,a_d}_t)``."""
    _check_pair(curve1, curve0, dataset)
    k = check_horizon(dataset, horizon_index)
    Q = treated_at_risk(dataset, sample_weight)[:k]
    return float(Q @ (curve1.increments[:k] - curve0.increments[:k]))


def _plugin_terms(dataset, curves, weights, sample_weight=None):
    """Per-interval contributions to the plug-in variance.

    With ``phi`` carrying its factor ``n``, ``psi_i(t)^2 / n^2`` reduces to
    ``(Q(t) S^{a}(t) W_i(t) / D_a(t))^2``.
    """
    c = sample_weight
    Q = treated_at_risk(dataset, c)
    total = np.zeros(dataset.K)
    for a in (0, 1):
        curve, w = curves[a], weights[a]
        W2N = w.filled() ** 2 * dataset.events[w.subject_index]
        v = W2N.sum(0) if c is None else c[w.subject_index] @ W2N
        total += (Q * _safe_ratio(curve.survival, curve.at_risk)) ** 2 * v
    return total


def plugin_variance(dataset, curves, weights, horizon_index=None, sample_weight=None):
    """Plug-in variance of ``U`` from the influence-type expansion.

    ``Var(U) = n * sigma^2`` with
    ``sigma^2 = sum_i sum_t psi_i(t)^2 dN_i(t) / n^3`` and
    ``psi_i(t) = Q(t) n S^{a}(t) W_i(t) / D_a(t)`` (sign dropped, it is squared)
    for subject ``i`` in arm ``a``. ``curves`` and ``weights`` are indexed by arm.
    """
    check_dataset(dataset)
    k = check_horizon(dataset, horizon_index)
    c = check_multiplicity(dataset, sample_weight)
    return float(_plugin_terms(dataset, curves, weights, c)[:k].sum())


@dataclass
class SeparableFit:
    """Everything computed for one ``a_d``; horizons are applied afterwards."""

    a_d: int
    hazard_models: dict
    weights: dict
    curves: dict
    Q: np.ndarray
    n: float
    sample_weight: np.ndarray | None = None

    def score_path(self):
        return np.cumsum(self.Q * (self.curves[1].increments - self.curves[0].increments))

    def plugin_variance_path(self, dataset):
        return np.cumsum(_plugin_terms(dataset, self.curves, self.weights, self.sample_weight))

    def beta_path(self):
        num = np.cumsum(self.Q * self.curves[1].increments)
        den = np.cumsum(self.Q * self.curves[0].increments)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > 0, np.log(num / den), np.nan)

    @property
    def truncated_fraction(self):
        return max(w.truncated_fraction for w in self.weights.values())


def fit_separable(dataset, a_d=0, *, link="logit", time_bins=10, fit_slope=True,
                  truncation=DEFAULT_TRUNCATION, sample_weight=None):
    """Fit both hazard models, both weight processes and both curves for one ``a_d``."""
    check_dataset(dataset)
    if a_d not in (0, 1):
        raise InputError("a_d must be 0 or 1")
    c = check_multiplicity(dataset, sample_weight)
    models = {
        a: DeathHazardModel(link=link, time_bins=time_bins, fit_slope=fit_slope).fit(
            dataset, a, sample_weight=c
        )
        for a in (0, 1)
    }
    weights = {a: compute_weights(dataset, models, a, a_d, truncation) for a in (0, 1)}
    curves = {a: counterfactual_mean_curve(dataset, a, a_d, weights[a], c) for a in (0, 1)}
    n = float(dataset.n if c is None else c.sum())
    return SeparableFit(a_d, models, weights, curves, treated_at_risk(dataset, c), n, c)


def _entry_weights(dataset, models, a_y, a_d, truncation):
    """Weights at each event entry of arm ``a_y`` (rows of ``dataset.event_entries``).

    Only intervals with an event are needed for the score, so the running
    product is accumulated between consecutive events of a subject using
    per-``y`` cumulative sums of the survivor log-factor. Entries of the other
    arm get weight 0.
    """
    rows, ks, counts, prior = dataset.event_entries
    mask = dataset.arm[rows] == a_y
    if a_y == a_d:
        return mask.astype(float)
    lo, hi = check_truncation(truncation)
    ymax = dataset.max_prior_events
    hd = models[a_d].hazard_table(ymax)
    hy = models[a_y].hazard_table(ymax)
    Lc = np.vstack([np.zeros((1, ymax + 1)), np.cumsum(np.log1p(-hd) - np.log1p(-hy), axis=0)])
    prev_k = np.zeros_like(ks)
    same = np.r_[False, rows[1:] == rows[:-1]]
    prev_k[same] = ks[:-1][same[1:]]
    delta = Lc[ks, prior] - Lc[prev_k, prior]
    total = np.cumsum(delta)
    # restart the running sum at each subject's first entry
    starts = np.flatnonzero(~same)
    offset = np.repeat(total[starts] - delta[starts], np.diff(np.r_[starts, total.size]))
    w = np.clip(np.exp(total - offset), lo, hi)
    return np.where(mask, w, 0.0)


def _fast_score_path(dataset, a_d, models, entry_weights, sample_weight):
    """Score path ``U(t)`` without materialising the dense weight matrices."""
    from .estimators import arm_tables

    rows, ks, counts, _ = dataset.event_entries
    c = np.ones(dataset.n) if sample_weight is None else sample_weight
    K = dataset.K
    inc, Q = {}, None
    for a in (0, 1):
        risk, deaths, _ = arm_tables(dataset, a, c)
        _, S_start = _km_from_tables(risk, deaths)
        num = np.bincount(ks, weights=c[rows] * entry_weights[a] * counts, minlength=K + 1)[1:]
        inc[a] = S_start * _safe_ratio(num, risk)
        if a == 1:
            Q = risk
    return np.cumsum(Q * (inc[1] - inc[0]))


def _bootstrap_score_path(dataset, c, a_d, link, time_bins, fit_slope, truncation):
    models = {
        a: DeathHazardModel(link=link, time_bins=time_bins, fit_slope=fit_slope).fit(
            dataset, a, sample_weight=c
        )
        for a in (0, 1)
    }
    ew = {a: _entry_weights(dataset, models, a, a_d, truncation) for a in (0, 1)}
    return _fast_score_path(dataset, a_d, models, ew, c)


def bootstrap_multiplicities(dataset, rng):
    """Subject multiplicities for one bootstrap draw, resampling within arm."""
    c = np.zeros(dataset.n)
    for a in (0, 1):
        idx = np.flatnonzero(dataset.arm == a)
        c[idx] = rng.multinomial(idx.size, np.full(idx.size, 1.0 / idx.size))
    return c


def bootstrap_variance_path(dataset, B=500, seed=0, *, a_d=0, link="logit", time_bins=10,
                            fit_slope=True, truncation=DEFAULT_TRUNCATION, max_failure=0.10):
    """Bootstrap variance of ``U`` at every horizon; returns ``(variances, n_failed)``.

    Replicate ``b`` draws from its own stream derived from ``(seed, b)``, so
    results do not depend on execution order.
    """
    if int(B) < 2:
        raise InputError("bootstrap needs B >= 2")
    stats, failed = [], 0
    for b in range(int(B)):
        c = bootstrap_multiplicities(dataset, replicate_rng(seed, b))
        try:
            path = _bootstrap_score_path(dataset, c, a_d, link, time_bins, fit_slope, truncation)
        except (NumericalError, InputError):
            failed += 1
            continue
        stats.append(path)
    if failed > max_failure * B:
        raise NumericalError(f"{failed} of {B} bootstrap replicates failed")
    stats = np.array(stats)
    return stats.var(axis=0, ddof=1), failed


def bootstrap_variance(dataset, config=None, B=500, seed=0, horizon_index=None):
    """Bootstrap variance of ``U`` at one horizon.

    ``config`` holds keyword options of :func:`fit_separable` (``a_d``,
    ``link``, ``time_bins``, ``fit_slope``, ``truncation``).
    """
    check_dataset(dataset)
    k = check_horizon(dataset, horizon_index)
    path, _ = bootstrap_variance_path(dataset, B, seed, **(config or {}))
    return float(path[k - 1])


class PRMSMaTest(BaseEstimator):
    """Score test of no separable direct effect of treatment on recurrent events.

    Parameters
    ----------
    a_d : {0, 1}
        Level at which the survival component is held fixed.
    variance : {"plugin", "bootstrap"}
    n_bootstrap : int
        Replicates when ``variance="bootstrap"``.
    truncation : (float, float)
        Weight truncation bounds.
    link, time_bins, fit_slope
        Death hazard model options, see :class:`DeathHazardModel`.
    random_state : int
        Seed for the bootstrap.

    Attributes
    ----------
    fit_ : SeparableFit
    results_ : list of TestResult, one per horizon passed to :meth:`fit`
    result_ : TestResult for the last horizon
    """

    def __init__(self, a_d=0, variance="plugin", n_bootstrap=500, truncation=DEFAULT_TRUNCATION,
                 link="logit", time_bins=10, fit_slope=True, random_state=0):
        self.a_d = a_d
        self.variance = variance
        self.n_bootstrap = n_bootstrap
        self.truncation = truncation
        self.link = link
        self.time_bins = time_bins
        self.fit_slope = fit_slope
        self.random_state = random_state

    def _options(self):
        return dict(a_d=self.a_d, link=self.link, time_bins=self.time_bins,
                    fit_slope=self.fit_slope, truncation=tuple(self.truncation))

    def fit(self, dataset, horizons=None):
        """Run the test at each horizon index (default: ``K``)."""
        check_dataset(dataset)
        if self.variance not in ("plugin", "bootstrap"):
            raise InputError(f"unknown variance method {self.variance!r}")
        if horizons is None:
            horizons = [dataset.K]
        elif np.ndim(horizons) == 0:
            horizons = [horizons]
        horizons = [check_horizon(dataset, h) for h in horizons]

        fit = fit_separable(dataset, **self._options())
        U = fit.score_path()
        if self.variance == "plugin":
            V = fit.plugin_variance_path(dataset)
        else:
            V, self.n_bootstrap_failed_ = bootstrap_variance_path(
                dataset, self.n_bootstrap, self.random_state, **self._options()
            )
        num = np.cumsum(fit.Q * fit.curves[1].increments)
        den = np.cumsum(fit.Q * fit.curves[0].increments)

        results = []
        for k in horizons:
            u, var = float(U[k - 1]), float(V[k - 1])
            if not (var > 0 and math.isfinite(var)):
                raise DegenerateVarianceError(
                    f"estimated variance of the score is {var!r} at horizon {k}"
                )
            if not den[k - 1] > 0:
                raise UndefinedEstimandError("no weighted events in the control-side curve")
            boundary = num[k - 1] <= 0
            beta = -math.inf if boundary else math.log(num[k - 1] / den[k - 1])
            results.append(TestResult.from_statistic(
                "PR-MSMaT", k, dataset.grid.ends[k - 1], u, var, beta, self.variance,
                a_d=int(self.a_d), truncated_fraction=fit.truncated_fraction,
                boundary=bool(boundary),
            ))
        self.fit_ = fit
        self.results_ = results
        self.result_ = results[-1]
        return self

    @property
    def z_(self):
        check_is_fitted(self, "result_")
        return self.result_.z


def pr_msmat_test(dataset: Dataset, a_d=0, horizon_index=None, variance_method="plugin",
                  **options) -> TestResult:
    """PR-MSMaT at one horizon; ``options`` are :class:`PRMSMaTest` parameters."""
    test = PRMSMaTest(a_d=a_d, variance=variance_method, **options)
    return test.fit(dataset, horizons=[check_horizon(dataset, horizon_index)]).result_
