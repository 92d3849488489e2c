"""Two-arm comparator tests built on the marginal estimators.

* ``WA``: log ratio of while-alive loss rates (treated over control).
* ``GL``: difference in Ghosh-Lin mean frequencies.

The default variance uses discrete-time influence functions of the
Kaplan-Meier and event-rate estimators; ``variance="bootstrap"`` resamples
subjects within arm instead.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_dataset, check_horizon
from .estimators import _km_from_tables, _safe_ratio
from .exceptions import DegenerateVarianceError, InputError, UndefinedEstimandError
from .results import TestResult
from .rng import replicate_rng
from .separable import bootstrap_multiplicities


def arm_influence(dataset, arm):
    """Mean frequency, restricted mean survival and their influence functions.

    Returns ``(mu, rmst, if_mu, if_rmst, n_arm)`` where ``mu`` and ``rmst``
    have one entry per horizon ``1..K`` and the influence arrays have shape
    ``(n_arm, K)``, scaled so that ``Var = sum(if**2) / n_arm**2``.
    """
    mask = dataset.arm == arm
    Z = dataset.at_risk_matrix[mask]
    D = dataset.death_matrix[mask]
    E = dataset.events[mask].astype(float)
    n_a = Z.shape[0]
    risk = Z.sum(0).astype(float)
    h = _safe_ratio(D.sum(0).astype(float), risk)
    rho = _safe_ratio(E.sum(0), risk)
    _, S_start = _km_from_tables(risk, D.sum(0).astype(float))
    widths = dataset.grid.widths

    scale = _safe_ratio(np.full_like(risk, float(n_a)), risk)
    if_h = Z * (D - h) * scale
    if_rho = Z * (E - rho) * scale
    # d log S(t_k) = -sum_{j<=k} if_h_j / (1 - h_j)
    G = if_h * _safe_ratio(np.ones_like(h), 1.0 - h)
    C = np.cumsum(G, axis=1)
    C_prev = np.zeros_like(C)
    C_prev[:, 1:] = C[:, :-1]
    if_S_start = -S_start * C_prev

    mu = np.cumsum(S_start * rho)
    rmst = np.cumsum(S_start * widths)
    if_mu = np.cumsum(if_S_start * rho + S_start * if_rho, axis=1)
    if_rmst = np.cumsum(if_S_start * widths, axis=1)
    return mu, rmst, if_mu, if_rmst, n_a


def _arm_point(dataset, arm, c):
    mask = dataset.arm == arm
    ci = c[mask]
    risk = ci @ dataset.at_risk_matrix[mask]
    deaths = ci @ dataset.death_matrix[mask]
    events = ci @ dataset.events[mask]
    _, S_start = _km_from_tables(risk, deaths)
    mu = np.cumsum(S_start * _safe_ratio(events, risk))
    rmst = np.cumsum(S_start * dataset.grid.widths)
    return mu, rmst


def _statistic_path(method, mu, rmst):
    """Per-horizon statistic from per-arm ``mu``/``rmst`` dicts."""
    if method == "GL":
        return mu[1] - mu[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(mu[1] / rmst[1]) - np.log(mu[0] / rmst[0])


class MarginalTest(BaseEstimator):
    """While-alive (``method="WA"``) or Ghosh-Lin (``method="GL"``) two-arm test.

    Parameters
    ----------
    method : {"WA", "GL"}
    variance : {"plugin", "bootstrap"}
        ``plugin`` uses influence functions.
    n_bootstrap : int
    random_state : int
    """

    def __init__(self, method="WA", variance="plugin", n_bootstrap=500, random_state=0):
        self.method = method
        self.variance = variance
        self.n_bootstrap = n_bootstrap
        self.random_state = random_state

    def fit(self, dataset, horizons=None):
        check_dataset(dataset)
        if self.method not in ("WA", "GL"):
            raise InputError(f"unknown method {self.method!r}")
        if self.variance not in ("plugin", "bootstrap"):
            raise InputError(f"unknown variance method {self.variance!r}")
        if horizons is None:
            horizons = [dataset.K]
        elif np.ndim(horizons) == 0:
            horizons = [horizons]
        horizons = [check_horizon(dataset, h) for h in horizons]

        parts = {a: arm_influence(dataset, a) for a in (0, 1)}
        mu = {a: parts[a][0] for a in (0, 1)}
        rmst = {a: parts[a][1] for a in (0, 1)}
        stat = _statistic_path(self.method, mu, rmst)

        if self.variance == "plugin":
            var = np.zeros(dataset.K)
            for a in (0, 1):
                m, r, if_m, if_r, n_a = parts[a]
                if self.method == "GL":
                    infl = if_m
                else:
                    infl = if_m * _safe_ratio(np.ones_like(m), m) - if_r * _safe_ratio(np.ones_like(r), r)
                var += (infl**2).sum(0) / n_a**2
        else:
            var = self._bootstrap(dataset)

        results = []
        for k in horizons:
            u, v = float(stat[k - 1]), float(var[k - 1])
            if not math.isfinite(u):
                raise UndefinedEstimandError(
                    f"{self.method} statistic undefined at horizon {k} (no events in an arm?)"
                )
            if not (v > 0 and math.isfinite(v)):
                raise DegenerateVarianceError(f"estimated variance is {v!r} at horizon {k}")
            if self.method == "GL":
                with np.errstate(divide="ignore"):
                    beta = float(np.log(mu[1][k - 1] / mu[0][k - 1])) if mu[0][k - 1] > 0 else math.nan
            else:
                beta = u
            results.append(TestResult.from_statistic(
                self.method, k, dataset.grid.ends[k - 1], u, v, beta, self.variance,
            ))
        self.results_ = results
        self.result_ = results[-1]
        return self

    def _bootstrap(self, dataset):
        B = int(self.n_bootstrap)
        if B < 2:
            raise InputError("bootstrap needs B >= 2")
        stats = []
        for b in range(B):
            c = bootstrap_multiplicities(dataset, replicate_rng(self.random_state, b))
            mu, rmst = {}, {}
            for a in (0, 1):
                mu[a], rmst[a] = _arm_point(dataset, a, c)
            stats.append(_statistic_path(self.method, mu, rmst))
        stats = np.array(stats)
        with np.errstate(invalid="ignore"):
            return np.nanvar(np.where(np.isfinite(stats), stats, np.nan), axis=0, ddof=1)


def while_alive_test(dataset, horizon_index=None, variance_method="plugin", **options):
    return MarginalTest("WA", variance_method, **options).fit(
        dataset, [check_horizon(dataset, horizon_index)]
    ).result_


def ghosh_lin_test(dataset, horizon_index=None, variance_method="plugin", **options):
    return MarginalTest("GL", variance_method, **options).fit(
        dataset, [check_horizon(dataset, horizon_index)]
    ).result_
