import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recursep import (
    DataIntegrityError, Dataset, InputError, RawRecord, SubjectHistory, TimeGrid, at_risk,
    cumulative_events, default_grid, discretize, to_records,
)

from conftest import make_dataset, small_dgp, with_censoring


def subject(counts, death=None, censor=None, arm=0, sid="x"):
    return SubjectHistory(sid, arm, np.asarray(counts), death, censor)


# -- TimeGrid --------------------------------------------------------------

def test_grid_basics():
    g = TimeGrid([0, 1, 2.5, 4])
    assert g.K == 3 and g.tau == 4.0
    np.testing.assert_array_equal(g.widths, [1, 1.5, 1.5])
    assert g != TimeGrid.uniform(3, 4)
    assert TimeGrid.uniform(4) == TimeGrid([0, 1, 2, 3, 4])


@pytest.mark.parametrize("b", [[1, 2, 3], [0, 2, 1], [0], [0, 0, 1], [0, np.inf]])
def test_grid_rejects_bad_boundaries(b):
    with pytest.raises(InputError):
        TimeGrid(b)


def test_grid_closed_right_intervals():
    g = TimeGrid([0, 1, 2])
    np.testing.assert_array_equal(g.interval_of([0.5, 1.0, 1.0001, 2.0, 2.5]), [1, 1, 2, 2, 3])


# -- SubjectHistory invariants ------------------------------------------------

def test_event_in_death_interval_rejected():
    with pytest.raises(DataIntegrityError) as err:
        subject([0, 1, 0], death=2, sid="bad")
    assert list(err.value.subject_ids) == ["bad"]


def test_event_after_censoring_rejected():
    with pytest.raises(DataIntegrityError):
        subject([0, 1, 0], censor=2)


def test_death_must_precede_censoring():
    with pytest.raises(DataIntegrityError):
        subject([0, 0, 0], death=2, censor=2)
    subject([0, 0, 0], death=1, censor=2)


def test_negative_counts_and_bad_arm():
    with pytest.raises(InputError):
        subject([0, -1])
    with pytest.raises(InputError):
        subject([0, 1], arm=2)


# -- at_risk ---------------------------------------------------------------

@pytest.fixture
def three():
    return make_dataset(5, [
        (0, [0, 0, 0, 0, 0], 3, None),
        (1, [1, 0, 0, 0, 0], None, 2),
        (1, [0, 2, 0, 1, 0], None, None),
    ])


def test_at_risk_examples(three):
    assert at_risk(three, "s0", 2) == 1
    assert at_risk(three, "s0", 3) == 1
    assert at_risk(three, "s0", 4) == 0
    assert at_risk(three, "s1", 1) == 1
    assert at_risk(three, "s1", 2) == 0
    assert all(at_risk(three, "s2", k) == 1 for k in range(1, 6))


def test_at_risk_errors(three):
    with pytest.raises(InputError):
        at_risk(three, "nobody", 1)
    with pytest.raises(InputError):
        at_risk(three, "s0", 0)
    with pytest.raises(InputError):
        at_risk(three, "s0", 6)


def test_at_risk_matrix_is_monotone_prefix(sim_censored):
    Z = sim_censored.at_risk_matrix.astype(int)
    assert np.all(np.diff(Z, axis=1) <= 0)
    np.testing.assert_array_equal(Z.sum(1), sim_censored.last_at_risk)


# -- cumulative_events -------------------------------------------------------

def test_cumulative_events_examples():
    s = subject([1, 0, 2, 0, 0])
    assert cumulative_events(s, 3) == 3
    assert cumulative_events(s, 0) == 0
    dead = subject([1, 0, 0, 0], death=2)
    assert cumulative_events(dead, 4) == 1
    with pytest.raises(InputError):
        cumulative_events(s, 6)


def test_prior_events_view(three):
    np.testing.assert_array_equal(three.prior_events[2], [0, 0, 2, 2, 3])


# -- Dataset ----------------------------------------------------------------

def test_dataset_needs_both_arms():
    with pytest.raises(InputError):
        make_dataset(2, [(0, [0, 0], None, None)])


def test_dataset_duplicate_ids():
    g = TimeGrid.uniform(2)
    with pytest.raises(InputError):
        Dataset(g, [subject([0, 0], sid="a"), subject([0, 0], arm=1, sid="a")])


def test_from_arrays_validates():
    g = TimeGrid.uniform(3)
    with pytest.raises(DataIntegrityError) as err:
        Dataset.from_arrays(g, [0, 1], [[0, 1, 0], [0, 0, 0]], death=[2, 0])
    assert list(err.value.subject_ids) == ["0"]


def test_dataset_is_read_only(three):
    with pytest.raises(ValueError):
        three.events[0, 0] = 5


def test_subject_round_trip(three):
    s = three.subject("s2")
    assert s.total_events == 3 and s.last_at_risk == 5
    assert Dataset(three.grid, three.subjects) == three


def test_concat_and_relabel(three):
    both = Dataset.concat([three, three])
    assert both.n == 6 and len(set(both.ids)) == 6
    flipped = three.relabel_arms()
    np.testing.assert_array_equal(flipped.arm, 1 - three.arm)


def _brute_exposure(d, arm):
    m = d.arm == arm
    Z, Y, D = d.at_risk_matrix[m], d.prior_events[m], d.death_matrix[m]
    ncol = int(d.max_prior_events) + 1
    E = np.zeros((d.K, ncol))
    De = np.zeros((d.K, ncol))
    for i in range(Z.shape[0]):
        for k in range(d.K):
            if Z[i, k]:
                E[k, Y[i, k]] += 1
                De[k, Y[i, k]] += D[i, k]
    return E, De


@pytest.mark.parametrize("arm", [0, 1])
def test_exposure_tables_match_brute_force(sim_censored, arm):
    E, De = sim_censored.exposure_tables(arm)
    E2, De2 = _brute_exposure(sim_censored, arm)
    np.testing.assert_array_equal(E, E2)
    np.testing.assert_array_equal(De, De2)


def test_event_entries_match_dense(sim_censored):
    rows, ks, counts, prior = sim_censored.event_entries
    dense = np.zeros_like(sim_censored.events)
    dense[rows, ks - 1] = counts
    np.testing.assert_array_equal(dense, sim_censored.events)
    np.testing.assert_array_equal(prior, sim_censored.prior_events[rows, ks - 1])


# -- discretize ----------------------------------------------------------------

def test_discretize_examples():
    g = TimeGrid([0, 1, 2])
    d = discretize([RawRecord("a", 0, [1.0], censor_time=2.0),
                    RawRecord("b", 1, [0.2, 0.7], censor_time=2.0)], g)
    np.testing.assert_array_equal(d.events, [[1, 0], [2, 0]])
    assert d.last_at_risk.tolist() == [2, 2]


def test_discretize_death_beyond_tau_is_administrative_censoring():
    g = TimeGrid.uniform(5)
    d = discretize([RawRecord("a", 0, [1.5], death_time=5.3),
                    RawRecord("b", 1, [], death_time=2.5)], g)
    s = d.subject("a")
    assert s.death_interval is None and s.last_at_risk == 5
    assert d.subject("b").death_interval == 3


def test_discretize_censoring_mid_interval():
    g = TimeGrid.uniform(4)
    d = discretize([RawRecord("a", 0, [0.5], censor_time=1.5),
                    RawRecord("b", 1, [], censor_time=0.0)], g)
    # observed through interval 2, so leaves at the start of interval 3
    assert d.subject("a").censor_interval == 3 and d.subject("a").last_at_risk == 2
    assert d.subject("b").last_at_risk == 0


def test_discretize_errors():
    g = TimeGrid.uniform(4)
    with pytest.raises(DataIntegrityError) as err:
        discretize([RawRecord("late", 0, [3.0], death_time=2.0)], g)
    assert list(err.value.subject_ids) == ["late"]
    with pytest.raises(InputError):
        discretize([RawRecord("neg", 0, [-1.0], censor_time=2.0)], g)
    with pytest.raises(DataIntegrityError):
        discretize([RawRecord("same", 0, [1.2], death_time=1.8),
                    RawRecord("b", 1, [], censor_time=4)], g)


def test_discretize_defer_moves_death():
    g = TimeGrid.uniform(4)
    d = discretize([RawRecord("a", 0, [1.2], death_time=1.8),
                    RawRecord("b", 1, [3.5], death_time=3.9)], g, death_conflict="defer")
    assert d.subject("a").death_interval == 3
    assert d.subject("b").death_interval is None  # pushed past tau


def test_default_grid():
    g = default_grid([RawRecord("a", 0, [1.0], censor_time=8.0)], K=4)
    assert g == TimeGrid.uniform(4, 8.0)


def test_round_trip_records(sim_censored):
    assert discretize(to_records(sim_censored), sim_censored.grid) == sim_censored


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.data())
def test_discretize_idempotent_on_right_endpoints(K, data):
    n = data.draw(st.integers(2, 6))
    counts = data.draw(st.lists(st.lists(st.integers(0, 3), min_size=K, max_size=K),
                                min_size=n, max_size=n))
    arms = [i % 2 for i in range(n)]
    grid = TimeGrid.uniform(K, 2.0 * K)
    records = [
        RawRecord(str(i), arms[i], list(np.repeat(grid.ends, c)), censor_time=grid.tau)
        for i, c in enumerate(counts)
    ]
    d = discretize(records, grid)
    np.testing.assert_array_equal(d.events, counts)
    assert d.total_events == sum(map(sum, counts))


def test_censoring_helper_is_valid():
    d = with_censoring(small_dgp(seed=3), np.random.default_rng(0), rate=0.05)
    assert (d.censor > 0).any()
