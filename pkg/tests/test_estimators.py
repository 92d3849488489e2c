import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.linear_model import LogisticRegression

from recursep import (
    ConvergenceError, Dataset, DeathHazardModel, InputError, StepCurve, TimeGrid,
    fit_death_hazard, ghosh_lin_mean, kaplan_meier, nelson_aalen_events,
    restricted_mean_survival, while_alive_curve, while_alive_loss,
)
from recursep.estimators import _exposure_bins

from conftest import make_dataset, small_dgp, with_censoring


# -- independent loop oracles ------------------------------------------------

def km_loop(d, arm):
    S, out = 1.0, []
    for k in range(1, d.K + 1):
        r = sum(1 for s in d.subjects if s.arm == arm and s.last_at_risk >= k)
        dd = sum(1 for s in d.subjects if s.arm == arm and s.death_interval == k)
        if r:
            S *= 1 - dd / r
        out.append(S)
    return np.array(out)


def gl_loop(d, arm):
    """Ghosh-Lin written as survival before the interval times the event rate in it."""
    S_prev, mu, out = 1.0, 0.0, []
    for k in range(1, d.K + 1):
        at = [s for s in d.subjects if s.arm == arm and s.last_at_risk >= k]
        if at:
            mu += S_prev * sum(s.event_counts[k - 1] for s in at) / len(at)
            S_prev *= 1 - sum(s.death_interval == k for s in at) / len(at)
        out.append(mu)
    return np.array(out)


# -- Nelson-Aalen --------------------------------------------------------------

def test_nelson_aalen_example():
    d = make_dataset(2, [(1, [1, 0], None, None), (1, [1, 2], None, None), (0, [0, 0], None, None)])
    na = nelson_aalen_events(d, 1)
    np.testing.assert_allclose(na.increments().values, [1.0, 1.0])
    np.testing.assert_allclose(na.values, [1.0, 2.0])
    np.testing.assert_array_equal(nelson_aalen_events(d, 0).values, [0.0, 0.0])


def test_nelson_aalen_stops_after_risk_set_empties():
    d = make_dataset(4, [(1, [1, 0, 0, 0], 2, None), (0, [0, 0, 0, 0], None, None)])
    np.testing.assert_array_equal(nelson_aalen_events(d, 1).increments().values, [1, 0, 0, 0])


def test_empty_arm_is_input_error():
    g = TimeGrid.uniform(2)
    one_arm = Dataset.from_arrays(g, [1, 1], [[0, 0], [1, 0]], check=False)
    for fn in (nelson_aalen_events, kaplan_meier, ghosh_lin_mean):
        with pytest.raises(InputError):
            fn(one_arm, 0)


# -- Kaplan-Meier ---------------------------------------------------------------

def test_km_examples():
    d = make_dataset(3, [
        (0, [0, 0, 0], 2, None), (0, [0, 0, 0], 3, None),
        (0, [0, 0, 0], None, None), (0, [0, 0, 0], None, None), (1, [0, 0, 0], None, None),
    ])
    np.testing.assert_array_equal(kaplan_meier(d, 0).values, [1.0, 0.75, 0.5])
    np.testing.assert_array_equal(kaplan_meier(d, 1).values, [1.0, 1.0, 1.0])
    all_die = make_dataset(3, [(0, [0, 0, 0], 1, None)] * 3 + [(1, [0, 0, 0], None, None)])
    np.testing.assert_array_equal(kaplan_meier(all_die, 0).values, [0, 0, 0])


@pytest.mark.parametrize("arm", [0, 1])
def test_km_uncensored_equals_empirical_fraction(sim_small, arm):
    m = sim_small.arm == arm
    k = np.arange(1, sim_small.K + 1)
    dead = (sim_small.death[m][:, None] > 0) & (sim_small.death[m][:, None] <= k)
    np.testing.assert_allclose(kaplan_meier(sim_small, arm).values, 1 - dead.mean(0),
                               rtol=0, atol=1e-14)


@pytest.mark.parametrize("arm", [0, 1])
def test_km_with_censoring_matches_loop(sim_censored, arm):
    S = kaplan_meier(sim_censored, arm).values
    np.testing.assert_allclose(S, km_loop(sim_censored, arm), rtol=0, atol=1e-14)
    assert np.all((S >= 0) & (S <= 1)) and np.all(np.diff(S) <= 0)


# -- Ghosh-Lin ------------------------------------------------------------------

def test_ghosh_lin_two_subject_example():
    # one subject with an event in interval 1, the other dies in interval 1:
    # the mean number of events by t_1 is exactly 1/2
    d = make_dataset(2, [(1, [1, 0], None, None), (1, [0, 0], 1, None), (0, [0, 0], None, None)])
    assert ghosh_lin_mean(d, 1).increments()[1] == 0.5


@pytest.mark.parametrize("arm", [0, 1])
def test_ghosh_lin_uncensored_equals_empirical_mean(sim_small, arm):
    m = sim_small.arm == arm
    emp = np.cumsum(sim_small.events[m], axis=1).mean(0)
    np.testing.assert_allclose(ghosh_lin_mean(sim_small, arm).values, emp, rtol=1e-12)


@pytest.mark.parametrize("arm", [0, 1])
def test_ghosh_lin_with_censoring_matches_loop(sim_censored, arm):
    np.testing.assert_allclose(ghosh_lin_mean(sim_censored, arm).values,
                               gl_loop(sim_censored, arm), rtol=1e-12)


def test_ghosh_lin_bounded_by_nelson_aalen(sim_censored):
    for arm in (0, 1):
        gl = ghosh_lin_mean(sim_censored, arm).values
        na = nelson_aalen_events(sim_censored, arm).values
        assert np.all(gl <= na + 1e-12)
        m = sim_censored.arm == arm
        first_death = sim_censored.death[m & (sim_censored.death > 0)].min()
        # equal up to and including the first death interval
        np.testing.assert_allclose(gl[:first_death], na[:first_death], rtol=1e-12)


def test_ghosh_lin_no_deaths_equals_nelson_aalen():
    d = small_dgp(seed=4, beta_D_0=0.0, beta_D_A=0.0, beta_Y_D=0.0)
    d = with_censoring(d, np.random.default_rng(1))
    for arm in (0, 1):
        np.testing.assert_array_equal(ghosh_lin_mean(d, arm).values,
                                      nelson_aalen_events(d, arm).values)


def test_ghosh_lin_no_events_zero():
    d = make_dataset(3, [(0, [0, 0, 0], 2, None), (1, [0, 0, 0], None, None)])
    assert not ghosh_lin_mean(d, 0).values.any()


# -- while-alive ----------------------------------------------------------------

def test_while_alive_two_subject_example():
    d = make_dataset(4, [(0, [1, 1, 0, 0], None, None), (0, [1, 0, 0, 0], 2, None),
                         (1, [0, 0, 0, 0], None, None)])
    walr, sccl = while_alive_loss(d, 0, 4)
    assert walr == 0.5 and sccl == 2.0
    assert while_alive_loss(d, 1, 4) == (0.0, 0.0)
    assert restricted_mean_survival(d, 0)[3] == 3.0


def test_while_alive_invariances(sim_censored):
    base = while_alive_loss(sim_censored, 1, 40)
    doubled = Dataset.concat([sim_censored, sim_censored])
    np.testing.assert_allclose(while_alive_loss(doubled, 1, 40), base, rtol=1e-12)
    renamed = Dataset.from_arrays(sim_censored.grid, sim_censored.arm, sim_censored.events,
                                  sim_censored.death, sim_censored.censor,
                                  [f"other-{i}" for i in range(sim_censored.n)])
    assert while_alive_loss(renamed, 1, 40) == base


def test_while_alive_curve_matches_pointwise(sim_censored):
    curve = while_alive_curve(sim_censored, 0)
    for k in (1, 17, 60):
        assert curve[k] == pytest.approx(while_alive_loss(sim_censored, 0, k).sccl, rel=1e-12)


def test_sample_weight_equals_replication(sim_censored):
    c = np.random.default_rng(3).integers(0, 3, sim_censored.n)
    rep = sim_censored.take(np.repeat(np.arange(sim_censored.n), c),
                            ids=[f"{i}-{j}" for i in range(sim_censored.n) for j in range(c[i])])
    for fn in (kaplan_meier, ghosh_lin_mean, nelson_aalen_events):
        np.testing.assert_allclose(fn(sim_censored, 1, sample_weight=c.astype(float)).values,
                                   fn(rep, 1).values, rtol=1e-12)


def test_step_curve_views():
    g = TimeGrid.uniform(3)
    c = StepCurve(g, [1.0, 1.0, 2.0], "increment")
    np.testing.assert_array_equal(c.cumulative().values, [1, 2, 4])
    np.testing.assert_array_equal(c.cumulative().increments().values, [1, 1, 2])
    assert c.cumulative().to_rows() == [(1.0, 1.0), (2.0, 2.0), (3.0, 4.0)]
    with pytest.raises(InputError):
        StepCurve(g, [1.0])


# -- death hazard model --------------------------------------------------------

@pytest.fixture
def ten_intervals():
    # arm 0: 10 at-risk subject-intervals, 2 deaths
    return make_dataset(5, [
        (0, [0, 0, 0, 0, 0], 2, None), (0, [0, 0, 0, 0, 0], 3, None),
        (0, [0, 0, 0, 0, 0], None, 6 - 1),
        (1, [0, 0, 0, 0, 0], None, None),
    ])


def test_hazard_empirical_fraction(ten_intervals):
    Z = ten_intervals.at_risk_matrix[ten_intervals.arm == 0].sum()
    D = (ten_intervals.death[ten_intervals.arm == 0] > 0).sum()
    for link in ("identity", "logit"):
        m = fit_death_hazard(ten_intervals, 0, link=link, time_bins=1, fit_slope=False)
        np.testing.assert_allclose(m.predict(np.arange(1, 6), 0), D / Z, rtol=1e-9)
        np.testing.assert_allclose(m.predict(3, 7), D / Z, rtol=1e-9)


def test_hazard_spec_example_ten_intervals_two_deaths():
    # 10 at-risk subject-intervals with 2 deaths
    d = make_dataset(4, [
        (0, [0, 0, 0, 0], None, None), (0, [0, 0, 0, 0], 2, None),
        (0, [0, 0, 0, 0], 4, None), (1, [0, 0, 0, 0], None, None),
    ])
    assert d.at_risk_matrix[d.arm == 0].sum() == 10
    for link in ("identity", "logit"):
        m = fit_death_hazard(d, 0, link=link, time_bins=1, fit_slope=False)
        np.testing.assert_allclose(m.hazard_table(3), 0.2, rtol=1e-9)


def test_hazard_zero_deaths_clamps():
    d = make_dataset(3, [(0, [1, 0, 0], None, None), (1, [0, 0, 0], None, None)])
    for link in ("identity", "logit"):
        m = fit_death_hazard(d, 0, link=link, time_bins=1, fit_slope=False)
        np.testing.assert_allclose(m.hazard_table(2), 1e-6, rtol=1e-9)
    assert fit_death_hazard(d, 0, link="logit", time_bins=1).fallback_


def test_hazard_identity_per_interval_reproduces_empirical_rates(sim_censored):
    m = fit_death_hazard(sim_censored, 1, link="identity", time_bins=sim_censored.K,
                         fit_slope=False)
    a = sim_censored.arm == 1
    r = sim_censored.at_risk_matrix[a].sum(0)
    dd = sim_censored.death_matrix[a].sum(0)
    emp = np.clip(dd / np.maximum(r, 1), 1e-6, 1 - 1e-6)
    np.testing.assert_allclose(m.predict(np.arange(1, sim_censored.K + 1), 0), emp, rtol=1e-9)


def _expanded_rows(d, arm, bins):
    """One row per at-risk subject-interval: bin one-hot, Y_{k-1}, death."""
    m = d.arm == arm
    Z, Y, D = d.at_risk_matrix[m], d.prior_events[m], d.death_matrix[m]
    ii, kk = np.nonzero(Z)
    X = np.zeros((ii.size, bins.max() + 2))
    X[np.arange(ii.size), bins[kk]] = 1.0
    X[:, -1] = Y[ii, kk]
    return X, D[ii, kk]


@pytest.mark.parametrize("seed", [1, 2])
def test_hazard_logit_matches_sklearn(seed):
    d = with_censoring(small_dgp(seed=seed, n=400, beta_Y_D=0.004), np.random.default_rng(seed))
    m = fit_death_hazard(d, 0, link="logit", time_bins=4)
    assert m.converged_ and not m.fallback_
    X, y = _expanded_rows(d, 0, m.bin_index_)
    ref = LogisticRegression(penalty=None, fit_intercept=False, tol=1e-12, max_iter=10_000)
    ref.fit(X, y)
    np.testing.assert_allclose(m.alpha_, ref.coef_[0, :-1], atol=1e-4)
    assert m.gamma_ == pytest.approx(ref.coef_[0, -1], abs=1e-4)


def test_hazard_identity_matches_least_squares():
    d = small_dgp(seed=3, n=300, beta_Y_D=0.004)
    m = fit_death_hazard(d, 1, link="identity", time_bins=3)
    X, y = _expanded_rows(d, 1, m.bin_index_)
    coef, *_ = np.linalg.lstsq(X, y.astype(float), rcond=None)
    np.testing.assert_allclose(np.r_[m.alpha_, m.gamma_], coef, atol=1e-10)


def test_hazard_predictions_within_bounds(sim_censored):
    for link in ("identity", "logit"):
        t = fit_death_hazard(sim_censored, 0, link=link).hazard_table(50)
        assert t.min() >= 1e-6 and t.max() <= 1 - 1e-6


def test_hazard_nonconvergence_raises():
    d = small_dgp(seed=5, n=300, beta_Y_D=0.004)
    with pytest.raises(ConvergenceError) as err:
        DeathHazardModel(max_iter=1, tol=1e-300).fit(d, 0)
    assert err.value.diagnostics["iterations"] == 1


def test_hazard_estimator_api(sim_small):
    m = DeathHazardModel(link="identity", time_bins=2)
    assert m.get_params()["time_bins"] == 2
    m.set_params(time_bins=3).fit(sim_small, 1)
    assert m.n_bins_ == 3 and m.diagnostics["converged"]
    with pytest.raises(InputError):
        DeathHazardModel(link="probit").fit(sim_small, 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=40), st.integers(1, 12))
def test_exposure_bins_are_consecutive_and_nonempty(exposure, n_bins):
    e = np.asarray(exposure)
    if not e.sum() > 0:
        return
    b = _exposure_bins(e, n_bins)
    assert b[0] == 0 and np.all(np.diff(b) >= 0) and np.all(np.diff(b) <= 1)
    assert np.all(np.bincount(b, weights=e) > 0)
    assert b.max() < max(n_bins, 1) or n_bins >= e.size
