"""Marginal estimators on the discrete grid.

Nelson-Aalen (death treated as censoring), discrete Kaplan-Meier, Ghosh-Lin
mean frequency, the while-alive loss rate and survival-completed cumulative
loss, and a per-arm discrete-time model for the death hazard.

Within interval ``k`` death precedes recurrence, so a mean-frequency increment
multiplies the survival level at the *start* of the interval by the event rate
among subjects at risk at that start.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_arm, check_dataset, check_horizon, check_multiplicity
from .data import Dataset, TimeGrid
from .exceptions import ConvergenceError, InputError, UndefinedEstimandError

EPS = 1e-6

WhileAliveLoss = namedtuple("WhileAliveLoss", ["walr", "sccl"])


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Per-interval values on a grid.

    ``values[k - 1]`` belongs to interval ``k``: the increment over
    ``(t_{k-1}, t_k]`` when ``kind == "increment"``, the level at ``t_k``
    when ``kind == "cumulative"``.
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "cumulative"
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("increment", "cumulative"):
            raise InputError(f"unknown curve kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.K,):
            raise InputError(f"expected {self.grid.K} values, got shape {v.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def cumulative(self):
        if self.kind == "cumulative":
            return self
        return StepCurve(self.grid, np.cumsum(self.values), "cumulative", self.label)

    def increments(self):
        if self.kind == "increment":
            return self
        return StepCurve(self.grid, np.diff(self.values, prepend=0.0), "increment", self.label)

    def __len__(self):
        return self.values.size

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, k):
        """Value for interval ``k`` (1-based)."""
        if not 1 <= k <= self.grid.K:
            raise IndexError(k)
        return float(self.values[k - 1])

    def to_rows(self):
        """``(time, value)`` pairs at the right endpoints."""
        return list(zip(self.grid.ends.tolist(), self.values.tolist()))


# -- count tables ------------------------------------------------------------

def arm_tables(dataset, arm, sample_weight=None):
    """At-risk counts, deaths and events per interval for one arm.

    ``sample_weight`` holds per-subject multiplicities (bootstrap counts).
    """
    K = dataset.K
    w = (dataset.arm == arm).astype(float)
    if sample_weight is not None:
        w = w * sample_weight
    exits = np.bincount(dataset.last_at_risk, weights=w, minlength=K + 1)
    risk = np.cumsum(exits[::-1])[::-1][1:]
    deaths = np.bincount(dataset.death, weights=w, minlength=K + 1)[1:]
    rows, ks, counts, _ = dataset.event_entries
    events = np.bincount(ks, weights=w[rows] * counts, minlength=K + 1)[1:]
    return risk, deaths, events


def _safe_ratio(num, den):
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _km_from_tables(risk, deaths):
    """Kaplan-Meier levels at ``t_1..t_K`` and at the interval starts ``t_0..t_{K-1}``."""
    S_end = np.cumprod(1.0 - _safe_ratio(deaths, risk))
    S_start = np.concatenate(([1.0], S_end[:-1]))
    return S_end, S_start


# -- curves ------------------------------------------------------------------

def nelson_aalen_events(dataset: Dataset, arm: int, sample_weight=None) -> StepCurve:
    """Cumulative mean number of events treating death as censoring."""
    check_dataset(dataset)
    arm = check_arm(dataset, arm)
    w = check_multiplicity(dataset, sample_weight)
    risk, _, events = arm_tables(dataset, arm, w)
    inc = _safe_ratio(events, risk)
    return StepCurve(dataset.grid, np.cumsum(inc), "cumulative", f"nelson_aalen[{arm}]")


def kaplan_meier(dataset: Dataset, arm: int, sample_weight=None) -> StepCurve:
    """Discrete Kaplan-Meier survival ``S(t_k)``; ``S(t_0) = 1`` is implicit."""
    check_dataset(dataset)
    arm = check_arm(dataset, arm)
    w = check_multiplicity(dataset, sample_weight)
    risk, deaths, _ = arm_tables(dataset, arm, w)
    S_end, _ = _km_from_tables(risk, deaths)
    return StepCurve(dataset.grid, S_end, "cumulative", f"kaplan_meier[{arm}]")


def ghosh_lin_mean(dataset: Dataset, arm: int, sample_weight=None) -> StepCurve:
    """Ghosh-Lin mean frequency ``mu(t_k)``: no events accrue after death."""
    check_dataset(dataset)
    arm = check_arm(dataset, arm)
    w = check_multiplicity(dataset, sample_weight)
    risk, deaths, events = arm_tables(dataset, arm, w)
    _, S_start = _km_from_tables(risk, deaths)
    inc = S_start * _safe_ratio(events, risk)
    return StepCurve(dataset.grid, np.cumsum(inc), "cumulative", f"ghosh_lin[{arm}]")


def restricted_mean_survival(dataset, arm, sample_weight=None):
    """Cumulative restricted mean survival ``sum_{j<=k} S(t_{j-1}) (t_j - t_{j-1})``."""
    risk, deaths, _ = arm_tables(dataset, arm, sample_weight)
    _, S_start = _km_from_tables(risk, deaths)
    return np.cumsum(S_start * dataset.grid.widths)


def while_alive_loss(dataset: Dataset, arm: int, tau_index: int | None = None,
                     sample_weight=None) -> WhileAliveLoss:
    """While-alive loss rate and survival-completed cumulative loss at ``tau_index``.

    The rate is the Ghosh-Lin mean frequency divided by the Kaplan-Meier
    restricted mean survival time; the cumulative loss multiplies it by
    ``t_{tau_index}``.
    """
    check_dataset(dataset)
    arm = check_arm(dataset, arm)
    k = check_horizon(dataset, tau_index)
    w = check_multiplicity(dataset, sample_weight)
    num = ghosh_lin_mean(dataset, arm, w).values[k - 1]
    den = restricted_mean_survival(dataset, arm, w)[k - 1]
    if not den > 0:
        raise UndefinedEstimandError(f"restricted mean survival is zero for arm {arm}")
    walr = num / den
    return WhileAliveLoss(float(walr), float(walr * dataset.grid.ends[k - 1]))


def while_alive_curve(dataset: Dataset, arm: int, sample_weight=None) -> StepCurve:
    """Survival-completed cumulative loss ``L(t_k)`` for every ``k``."""
    check_dataset(dataset)
    arm = check_arm(dataset, arm)
    w = check_multiplicity(dataset, sample_weight)
    num = ghosh_lin_mean(dataset, arm, w).values
    den = restricted_mean_survival(dataset, arm, w)
    L = _safe_ratio(num, den) * dataset.grid.ends
    return StepCurve(dataset.grid, L, "cumulative", f"while_alive[{arm}]")


# -- death hazard model --------------------------------------------------------

def _exposure_bins(exposure, n_bins):
    """Assign intervals to ``n_bins`` bins holding roughly equal exposure.

    Returns the bin index per interval, consecutive from 0, with every bin
    holding positive exposure.
    """
    K = exposure.size
    total = exposure.sum()
    if n_bins >= K:
        raw = np.arange(K)
    else:
        mid = np.cumsum(exposure) - exposure / 2.0
        raw = np.minimum((n_bins * mid / total).astype(np.int64), n_bins - 1)
    # fold bins with no exposure into a neighbour
    bin_exp = np.bincount(raw, weights=exposure)
    keep = bin_exp > 0
    labels = np.cumsum(keep) - 1
    first = int(np.argmax(keep))
    labels[:first] = 0
    return labels[raw]


class DeathHazardModel(BaseEstimator):
    """Discrete-time death hazard for one arm.

    The linear predictor is ``alpha[bin(k)] + gamma * Y_{k-1}`` with time
    coarsened into bins of roughly equal at-risk exposure. ``link="logit"``
    is fit by damped Newton steps on the Bernoulli likelihood;
    ``link="identity"`` by weighted least squares. Predictions are clamped to
    ``[1e-6, 1 - 1e-6]``.

    Parameters
    ----------
    link : {"logit", "identity"}
    time_bins : int
        Number of time bins. ``time_bins >= K`` gives one bin per interval.
    fit_slope : bool
        If False, ``gamma`` is fixed at 0.
    tol : float
        Convergence tolerance on the largest coefficient change (logit).
    max_iter : int
    """

    def __init__(self, link="logit", time_bins=10, fit_slope=True, tol=1e-8, max_iter=100):
        self.link = link
        self.time_bins = time_bins
        self.fit_slope = fit_slope
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, dataset, arm, sample_weight=None):
        check_dataset(dataset)
        arm = check_arm(dataset, arm)
        if self.link not in ("logit", "identity"):
            raise InputError(f"unknown link {self.link!r}")
        if int(self.time_bins) < 1:
            raise InputError("time_bins must be at least 1")
        w = check_multiplicity(dataset, sample_weight)

        exp_tab, death_tab = dataset.exposure_tables(arm, w)
        exposure = exp_tab.sum(1)
        if not exposure.sum() > 0:
            raise InputError(f"arm {arm} has no at-risk exposure")

        self.arm_ = arm
        self.n_intervals_ = dataset.K
        self.bin_index_ = _exposure_bins(exposure, int(self.time_bins))
        n_bins = int(self.bin_index_.max()) + 1
        self.n_bins_ = n_bins

        # aggregate to (bin, y) cells
        ncol = exp_tab.shape[1]
        n_c = np.zeros((n_bins, ncol))
        d_c = np.zeros((n_bins, ncol))
        np.add.at(n_c, self.bin_index_, exp_tab)
        np.add.at(d_c, self.bin_index_, death_tab)
        n_c, d_c = n_c.ravel(), d_c.ravel()
        occupied = n_c > 0
        cb = np.repeat(np.arange(n_bins), ncol)[occupied]
        cy = np.tile(np.arange(ncol), n_bins)[occupied].astype(float)
        n_c, d_c = n_c[occupied], d_c[occupied]

        bin_n = np.bincount(cb, weights=n_c, minlength=n_bins)
        bin_d = np.bincount(cb, weights=d_c, minlength=n_bins)
        slope = bool(self.fit_slope) and np.ptp(cy) > 0 if cy.size else False

        self.fallback_ = False
        X = np.zeros((cb.size, n_bins + slope))
        X[np.arange(cb.size), cb] = 1.0
        if slope:
            X[:, -1] = cy

        if self.link == "identity":
            sw = np.sqrt(n_c)
            coef, *_ = np.linalg.lstsq(X * sw[:, None], d_c / n_c * sw, rcond=None)
            self.converged_, self.n_iter_ = True, 1
        else:
            separated = (bin_d <= 0) | (bin_d >= bin_n)
            if separated.any():
                coef = None
            else:
                coef = self._newton(X, n_c, d_c, bin_d / bin_n, slope)
            if coef is None:
                # separation: per-bin empirical rates, no slope
                rates = np.clip(bin_d / bin_n, EPS, 1 - EPS)
                coef = np.log(rates) - np.log1p(-rates)
                slope = False
                self.fallback_ = True
                self.converged_, self.n_iter_ = True, 0
        self.alpha_ = np.asarray(coef[:n_bins], dtype=float)
        self.gamma_ = float(coef[n_bins]) if slope else 0.0
        p = self._clamp(self._mean(self.alpha_[cb] + self.gamma_ * cy))
        self.loglik_ = float(np.sum(d_c * np.log(p) + (n_c - d_c) * np.log1p(-p)))
        return self

    def _newton(self, X, n_c, d_c, bin_rates, slope):
        p0 = np.clip(bin_rates, EPS, 1 - EPS)
        theta = np.zeros(X.shape[1])
        theta[: p0.size] = np.log(p0) - np.log1p(-p0)

        def loglik(th):
            eta = X @ th
            # log p = -log(1+e^-eta), log(1-p) = -log(1+e^eta)
            return float(-(d_c @ np.logaddexp(0, -eta)) - ((n_c - d_c) @ np.logaddexp(0, eta)))

        ll = loglik(theta)
        for it in range(1, int(self.max_iter) + 1):
            p = expit(X @ theta)
            grad = X.T @ (d_c - n_c * p)
            H = (X * (n_c * p * (1 - p))[:, None]).T @ X
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            t = 1.0
            for _ in range(40):
                cand = theta + t * step
                ll_new = loglik(cand)
                if ll_new >= ll - 1e-12 * abs(ll):
                    break
                t /= 2.0
            change = np.max(np.abs(cand - theta))
            theta, ll = cand, ll_new
            if change < self.tol:
                self.converged_, self.n_iter_ = True, it
                return theta
        raise ConvergenceError(
            f"death hazard fit did not converge in {self.max_iter} iterations",
            {"iterations": int(self.max_iter), "loglik": ll, "last_change": float(change)},
        )

    def _mean(self, eta):
        return expit(eta) if self.link == "logit" else eta

    @staticmethod
    def _clamp(p):
        return np.clip(p, EPS, 1 - EPS)

    def predict(self, interval, prior_events=0):
        """Death probability in ``interval`` (1-based) given ``Y_{k-1}``; broadcasts."""
        check_is_fitted(self, "alpha_")
        k = np.asarray(interval)
        if np.any((k < 1) | (k > self.n_intervals_)):
            raise InputError(f"interval outside 1..{self.n_intervals_}")
        eta = self.alpha_[self.bin_index_[k - 1]] + self.gamma_ * np.asarray(prior_events, float)
        return self._clamp(self._mean(eta))

    def hazard_table(self, max_prior_events):
        """Predictions for every interval and ``Y_{k-1} = 0..max_prior_events``, shape (K, m+1)."""
        k = np.arange(1, self.n_intervals_ + 1)[:, None]
        y = np.arange(int(max_prior_events) + 1)[None, :]
        return self.predict(k, y)

    @property
    def diagnostics(self):
        check_is_fitted(self, "alpha_")
        return {
            "converged": self.converged_, "iterations": self.n_iter_,
            "loglik": self.loglik_, "fallback": self.fallback_,
        }


def fit_death_hazard(dataset: Dataset, arm: int, link="logit", time_bins=10,
                     fit_slope=True, sample_weight=None) -> DeathHazardModel:
    return DeathHazardModel(link=link, time_bins=time_bins, fit_slope=fit_slope).fit(
        dataset, arm, sample_weight=sample_weight
    )
