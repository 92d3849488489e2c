"""Discrete-time data model for recurrent events with a terminal event.

All processes live on a partition ``0 = t_0 < t_1 < ... < t_K = tau``.
Intervals are left-open and right-closed, ``(t_{k-1}, t_k]``, and are indexed
``1..K``. Within an interval, death is ordered before recurrent events, so a
subject who dies in interval ``k`` is at risk in ``k`` but cannot have an event
recorded there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataIntegrityError, InputError


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ordered interval boundaries ``t_0 = 0 < ... < t_K = tau``."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise InputError("a time grid needs at least two boundaries")
        if b[0] != 0.0:
            raise InputError("the first grid boundary must be 0")
        if not np.all(np.isfinite(b)) or np.any(np.diff(b) <= 0):
            raise InputError("grid boundaries must be finite and strictly increasing")
        object.__setattr__(self, "boundaries", _frozen(b))

    @classmethod
    def uniform(cls, K, tau=None):
        """``K`` equal-width intervals over ``[0, tau]`` (``tau`` defaults to ``K``)."""
        K = int(K)
        if K < 1:
            raise InputError("K must be at least 1")
        tau = float(K if tau is None else tau)
        if not tau > 0:
            raise InputError("tau must be positive")
        return cls(np.linspace(0.0, tau, K + 1))

    @property
    def K(self):
        return self.boundaries.size - 1

    @property
    def tau(self):
        return float(self.boundaries[-1])

    @property
    def widths(self):
        return np.diff(self.boundaries)

    @property
    def ends(self):
        """Right endpoints ``t_1..t_K``."""
        return self.boundaries[1:]

    def interval_of(self, times):
        """Map times in ``(0, tau]`` to interval indices ``1..K``.

        Times above ``tau`` map to ``K + 1``.
        """
        times = np.asarray(times, dtype=float)
        return np.searchsorted(self.boundaries, times, side="left")

    def index_of_time(self, t):
        """Interval index whose right endpoint equals ``t`` (within 1e-9 relative)."""
        k = int(np.argmin(np.abs(self.boundaries - t)))
        if k == 0 or not np.isclose(self.boundaries[k], t, rtol=1e-9, atol=1e-12):
            raise InputError(f"time {t!r} is not a grid boundary")
        return k

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.boundaries, other.boundaries)

    def __hash__(self):
        return hash(self.boundaries.tobytes())

    def __repr__(self):
        return f"TimeGrid(K={self.K}, tau={self.tau:g})"


@dataclass(frozen=True, eq=False)
class SubjectHistory:
    """One subject's arm and per-interval recurrent-event counts.

    ``death_interval`` is the interval in which death occurs; ``censor_interval``
    is the interval at whose start follow-up ends. ``None`` means the event was
    not observed. A subject with neither is followed through ``tau``.
    """

    id: str
    arm: int
    event_counts: np.ndarray
    death_interval: int | None = None
    censor_interval: int | None = None

    def __post_init__(self):
        counts = np.asarray(self.event_counts)
        if counts.ndim != 1 or counts.size < 1:
            raise InputError(f"subject {self.id}: event_counts must be a non-empty 1-d sequence")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise InputError(f"subject {self.id}: event counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise InputError(f"subject {self.id}: event counts must be nonnegative")
        if self.arm not in (0, 1):
            raise InputError(f"subject {self.id}: arm must be 0 or 1, got {self.arm!r}")
        K = counts.size
        d, c = self.death_interval, self.censor_interval
        for name, v in (("death_interval", d), ("censor_interval", c)):
            if v is not None and not 1 <= v <= K:
                raise InputError(f"subject {self.id}: {name}={v} outside 1..{K}")
        if d is not None and c is not None and not d < c:
            raise DataIntegrityError(
                f"subject {self.id}: death_interval must precede censor_interval", [self.id]
            )
        if d is not None and counts[d - 1:].any():
            raise DataIntegrityError(
                f"subject {self.id}: recurrent events recorded in or after the death interval",
                [self.id],
            )
        if c is not None and counts[c - 1:].any():
            raise DataIntegrityError(
                f"subject {self.id}: recurrent events recorded after censoring", [self.id]
            )
        object.__setattr__(self, "arm", int(self.arm))
        object.__setattr__(self, "event_counts", _frozen(counts))

    @property
    def K(self):
        return self.event_counts.size

    @property
    def last_at_risk(self):
        """Last interval in which the subject is at risk (0 if never)."""
        if self.death_interval is not None:
            return self.death_interval
        if self.censor_interval is not None:
            return self.censor_interval - 1
        return self.K

    @property
    def total_events(self):
        return int(self.event_counts.sum())


def cumulative_events(subject: SubjectHistory, interval: int) -> int:
    """Cumulative number of recurrent events by the end of ``interval``."""
    if not 0 <= interval <= subject.K:
        raise InputError(f"interval {interval} outside 0..{subject.K}")
    return int(subject.event_counts[:interval].sum())


class Dataset:
    """Immutable collection of subject histories on a shared grid.

    Internally stored as arrays: ``arm`` (n,), ``events`` (n, K) holding
    ``Delta Y``, and ``death`` / ``censor`` (n,) holding interval indices with
    0 meaning "not observed".
    """

    def __init__(self, grid, subjects=None, *, _arrays=None, check=True):
        if not isinstance(grid, TimeGrid):
            raise InputError("grid must be a TimeGrid")
        self.grid = grid
        if _arrays is not None:
            ids, arm, events, death, censor = _arrays
        else:
            subjects = list(subjects or ())
            ids = [s.id for s in subjects]
            for s in subjects:
                if s.K != grid.K:
                    raise InputError(
                        f"subject {s.id} has {s.K} intervals, grid has {grid.K}"
                    )
            arm = np.array([s.arm for s in subjects], dtype=np.int8)
            events = (
                np.vstack([s.event_counts for s in subjects]).astype(np.int32)
                if subjects else np.zeros((0, grid.K), dtype=np.int32)
            )
            death = np.array([s.death_interval or 0 for s in subjects], dtype=np.int64)
            censor = np.array([s.censor_interval or 0 for s in subjects], dtype=np.int64)
            self._subjects = subjects
        self.ids = tuple(str(i) for i in ids)
        self.arm = _frozen(np.asarray(arm, dtype=np.int8))
        self.events = _frozen(np.asarray(events, dtype=np.int32))
        self.death = _frozen(np.asarray(death, dtype=np.int64))
        self.censor = _frozen(np.asarray(censor, dtype=np.int64))
        if check:
            self._validate()

    @classmethod
    def from_arrays(cls, grid, arm, events, death=None, censor=None, ids=None, check=True):
        """Build a dataset directly from arrays (0 in ``death``/``censor`` = none)."""
        arm = np.asarray(arm)
        n = arm.size
        events = np.asarray(events)
        death = np.zeros(n, dtype=np.int64) if death is None else np.asarray(death)
        censor = np.zeros(n, dtype=np.int64) if censor is None else np.asarray(censor)
        ids = [str(i) for i in range(n)] if ids is None else list(ids)
        return cls(grid, _arrays=(ids, arm, events, death, censor), check=check)

    def _validate(self):
        n, K = self.n, self.grid.K
        if self.events.shape != (n, K) or self.death.shape != (n,) or self.censor.shape != (n,):
            raise InputError("dataset arrays have inconsistent shapes")
        if len(self.ids) != n:
            raise InputError("one id per subject is required")
        if len(set(self.ids)) != n:
            raise InputError("subject ids must be unique")
        if not np.isin(self.arm, (0, 1)).all():
            raise InputError("arm must be 0 or 1")
        if (self.events < 0).any():
            raise InputError("event counts must be nonnegative")
        for name, v in (("death", self.death), ("censor", self.censor)):
            if ((v < 0) | (v > K)).any():
                raise InputError(f"{name} interval outside 1..{K}")
        both = (self.death > 0) & (self.censor > 0)
        bad = both & (self.death >= self.censor)
        if bad.any():
            raise DataIntegrityError(
                "death_interval must precede censor_interval", self._ids_where(bad)
            )
        # events at or after the exit interval
        k = np.arange(1, K + 1)
        late = (self.events > 0) & (k[None, :] > self.last_at_risk[:, None])
        late |= (self.events > 0) & (k[None, :] == self.death[:, None])
        bad = late.any(axis=1)
        if bad.any():
            raise DataIntegrityError(
                "recurrent events recorded in or after the exit interval",
                self._ids_where(bad),
            )
        counts = self.arm_counts
        if counts[0] == 0 or counts[1] == 0:
            raise InputError("both arms must contain at least one subject")

    def _ids_where(self, mask):
        return [self.ids[i] for i in np.flatnonzero(mask)]

    # -- basic views -----------------------------------------------------

    @property
    def n(self):
        return self.arm.size

    @property
    def K(self):
        return self.grid.K

    @property
    def arm_counts(self):
        return (int((self.arm == 0).sum()), int((self.arm == 1).sum()))

    @cached_property
    def _index(self):
        return {sid: i for i, sid in enumerate(self.ids)}

    def index_of(self, subject_id):
        try:
            return self._index[str(subject_id)]
        except KeyError:
            raise InputError(f"unknown subject id {subject_id!r}") from None

    @cached_property
    def subjects(self):
        if getattr(self, "_subjects", None) is not None:
            return list(self._subjects)
        return [self.subject_at(i) for i in range(self.n)]

    def subject_at(self, i):
        return SubjectHistory(
            id=self.ids[i],
            arm=int(self.arm[i]),
            event_counts=self.events[i],
            death_interval=int(self.death[i]) or None,
            censor_interval=int(self.censor[i]) or None,
        )

    def subject(self, subject_id):
        return self.subject_at(self.index_of(subject_id))

    # -- counting-process views ------------------------------------------

    @cached_property
    def last_at_risk(self):
        """Last at-risk interval per subject (0..K)."""
        L = np.where(self.censor > 0, self.censor - 1, self.grid.K)
        L = np.where(self.death > 0, self.death, L)
        return _frozen(L)

    @cached_property
    def at_risk_matrix(self):
        """Boolean (n, K): alive and uncensored at the start of each interval."""
        k = np.arange(1, self.grid.K + 1)
        return _frozen(k[None, :] <= self.last_at_risk[:, None])

    @cached_property
    def death_matrix(self):
        """Boolean (n, K): death occurs in the interval."""
        k = np.arange(1, self.grid.K + 1)
        return _frozen(k[None, :] == self.death[:, None])

    @cached_property
    def prior_events(self):
        """Integer (n, K): ``Y_{k-1}``, events accrued before each interval."""
        c = np.cumsum(self.events, axis=1, dtype=np.int64)
        prior = np.zeros_like(c)
        prior[:, 1:] = c[:, :-1]
        return _frozen(prior)

    @property
    def total_events(self):
        return int(self.events.sum())

    @cached_property
    def event_entries(self):
        """Nonzero ``Delta Y`` entries sorted by subject then interval.

        Returns ``(subject, interval, count, prior)`` with 1-based intervals and
        ``prior = Y_{k-1}`` just before the entry.
        """
        rows, cols = np.nonzero(self.events)
        counts = self.events[rows, cols].astype(np.int64)
        cum = np.cumsum(counts)
        # groupwise cumulative count, restarting at each subject
        first = np.ones(rows.size, dtype=bool)
        first[1:] = rows[1:] != rows[:-1]
        offset = np.where(first, cum - counts, 0)
        offset = np.maximum.accumulate(offset) if offset.size else offset
        prior = cum - counts - offset
        out = (rows, cols + 1, counts, prior)
        for a in out:
            a.setflags(write=False)
        return out

    @cached_property
    def segments(self):
        """At-risk stretches with constant ``Y_{k-1}``.

        Returns ``(subject, start, end, prior)``: the subject is at risk in
        intervals ``start..end`` (inclusive, possibly empty) with ``prior``
        events accrued before each of them.
        """
        rows, ks, counts, prior = self.event_entries
        n = self.n
        L = self.last_at_risk
        nxt = np.empty(rows.size, dtype=np.int64)
        if rows.size:
            same = np.zeros(rows.size, dtype=bool)
            same[:-1] = rows[1:] == rows[:-1]
            nxt[:-1] = np.where(same[:-1], ks[1:], L[rows[:-1]])
            nxt[-1] = L[rows[-1]]
        first_end = L.copy()
        if rows.size:
            is_first = np.ones(rows.size, dtype=bool)
            is_first[1:] = rows[1:] != rows[:-1]
            first_end[rows[is_first]] = ks[is_first]
        subject = np.concatenate([np.arange(n), rows])
        start = np.concatenate([np.ones(n, dtype=np.int64), ks + 1])
        end = np.concatenate([first_end, nxt])
        y = np.concatenate([np.zeros(n, dtype=np.int64), prior + counts])
        out = (subject, start, end, y)
        for a in out:
            a.setflags(write=False)
        return out

    @property
    def max_prior_events(self):
        """Largest ``Y_{k-1}`` reached while at risk."""
        _, start, end, y = self.segments
        live = start <= end
        return int(y[live].max()) if live.any() else 0

    def exposure_tables(self, arm=None, sample_weight=None):
        """At-risk exposure and deaths by ``(interval, Y_{k-1})``.

        Returns two arrays of shape ``(K, max_prior_events + 1)``; rows are
        intervals ``1..K``. ``sample_weight`` holds per-subject multiplicities.
        """
        K, ncol = self.K, self.max_prior_events + 1
        w = np.ones(self.n) if sample_weight is None else np.asarray(sample_weight, float)
        if arm is not None:
            w = np.where(self.arm == arm, w, 0.0)
        subject, start, end, y = self.segments
        live = start <= end
        sw = w[subject[live]]
        size = (K + 2) * ncol
        diff = np.bincount(start[live] * ncol + y[live], weights=sw, minlength=size)
        diff -= np.bincount((end[live] + 1) * ncol + y[live], weights=sw, minlength=size)
        exposure = np.cumsum(diff.reshape(K + 2, ncol), axis=0)[1:K + 1]
        dead = np.flatnonzero(self.death > 0)
        totals = self.events.sum(1)
        deaths = np.bincount(
            (self.death[dead] - 1) * ncol + totals[dead], weights=w[dead], minlength=K * ncol
        ).reshape(K, ncol)
        return exposure, deaths

    # -- derived datasets --------------------------------------------------

    def with_arms(self, arm):
        """Copy with the arm vector replaced."""
        return Dataset.from_arrays(
            self.grid, arm, self.events, self.death, self.censor, self.ids
        )

    def relabel_arms(self):
        """Copy with treatment labels swapped (``A -> 1 - A``)."""
        return self.with_arms(1 - self.arm)

    def take(self, indices, ids=None):
        indices = np.asarray(indices, dtype=np.int64)
        if ids is None:
            ids = [self.ids[i] for i in indices]
        return Dataset.from_arrays(
            self.grid, self.arm[indices], self.events[indices],
            self.death[indices], self.censor[indices], ids,
        )

    @classmethod
    def concat(cls, datasets: Sequence["Dataset"], relabel=True):
        """Stack datasets sharing a grid. ``relabel`` prefixes ids with the part index."""
        datasets = list(datasets)
        if not datasets:
            raise InputError("nothing to concatenate")
        grid = datasets[0].grid
        if any(d.grid != grid for d in datasets):
            raise InputError("datasets must share a grid")
        ids = []
        for j, d in enumerate(datasets):
            ids.extend(f"{j}:{i}" if relabel else i for i in d.ids)
        return cls.from_arrays(
            grid,
            np.concatenate([d.arm for d in datasets]),
            np.vstack([d.events for d in datasets]),
            np.concatenate([d.death for d in datasets]),
            np.concatenate([d.censor for d in datasets]),
            ids,
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.ids == other.ids
            and np.array_equal(self.arm, other.arm)
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.death, other.death)
            and np.array_equal(self.censor, other.censor)
        )

    __hash__ = None

    def __repr__(self):
        n0, n1 = self.arm_counts
        return f"Dataset(n={self.n} [{n0}/{n1}], K={self.K}, events={self.total_events})"


def at_risk(dataset: Dataset, subject, interval: int) -> int:
    """1 if the subject is alive and uncensored at the start of ``interval``."""
    i = dataset.index_of(subject)
    if not 1 <= interval <= dataset.K:
        raise InputError(f"interval {interval} outside 1..{dataset.K}")
    return int(interval <= dataset.last_at_risk[i])


@dataclass
class RawRecord:
    """Continuous-time follow-up of one subject.

    Exactly one of ``death_time`` and ``censor_time`` should be given.
    """

    id: str
    arm: int
    event_times: Sequence[float] = field(default_factory=list)
    death_time: float | None = None
    censor_time: float | None = None


def default_grid(records: Iterable[RawRecord], K=100):
    """``K`` equal-width intervals over ``[0, max observed time]``."""
    tmax = 0.0
    for r in records:
        for t in (r.death_time, r.censor_time, *r.event_times):
            if t is not None:
                tmax = max(tmax, float(t))
    if tmax <= 0:
        raise InputError("cannot build a default grid: no positive times")
    return TimeGrid.uniform(K, tmax)


def discretize(records: Iterable[RawRecord], grid: TimeGrid, death_conflict="error") -> Dataset:
    """Map continuous-time records onto ``grid``.

    A time ``u`` falls in interval ``k`` when ``t_{k-1} < u <= t_k``. Follow-up
    past ``tau`` is administratively censored at ``tau`` (the subject stays at
    risk through interval ``K``). A censoring time in interval ``k`` keeps the
    subject under observation through ``k``; it exits at the start of ``k + 1``.

    A recurrent event in the same interval as death cannot be represented
    (death comes first within an interval). ``death_conflict="error"`` rejects
    such subjects; ``"defer"`` moves the death to the next interval, or drops
    it (administrative censoring) when that falls beyond ``tau``.
    """
    if death_conflict not in ("error", "defer"):
        raise InputError(f"unknown death_conflict policy {death_conflict!r}")
    K = grid.K
    ids, arms, rows, deaths, censors = [], [], [], [], []
    for r in records:
        sid = str(r.id)
        if r.death_time is not None and r.censor_time is not None:
            raise InputError(f"subject {sid}: give a death time or a censoring time, not both")
        times = np.asarray(list(r.event_times), dtype=float)
        exit_times = [t for t in (r.death_time, r.censor_time) if t is not None]
        if (times < 0).any() or any(t < 0 for t in exit_times):
            raise InputError(f"subject {sid}: negative time")
        if (times == 0).any():
            raise InputError(f"subject {sid}: event at time 0")
        if r.death_time is not None and (times > r.death_time).any():
            raise DataIntegrityError(f"subject {sid}: event after death time", [sid])
        if r.censor_time is not None and (times > r.censor_time).any():
            raise DataIntegrityError(f"subject {sid}: event after censoring time", [sid])

        death = censor = 0
        if r.death_time is not None:
            if r.death_time == 0:
                raise InputError(f"subject {sid}: death at time 0")
            d = int(grid.interval_of(r.death_time))
            if d <= K:
                death = d
        elif r.censor_time is not None:
            c = int(grid.interval_of(r.censor_time))
            if c < K:
                censor = c + 1  # c == 0 only for censoring at time 0
        ks = grid.interval_of(times[times <= grid.tau])
        counts = np.bincount(ks, minlength=K + 1)[1:K + 1]
        if death and counts[death - 1:].any() and death_conflict == "defer":
            death = death + 1 if death < K else 0
        if death and counts[death - 1:].any():
            raise DataIntegrityError(
                f"subject {sid}: recurrent event in the same interval as death", [sid]
            )
        ids.append(sid)
        arms.append(r.arm)
        rows.append(counts)
        deaths.append(death)
        censors.append(censor)
    if any(a not in (0, 1) for a in arms):
        raise InputError("arm must be 0 or 1")
    events = np.vstack(rows) if rows else np.zeros((0, K), dtype=np.int64)
    return Dataset.from_arrays(grid, arms, events, deaths, censors, ids)


def to_records(dataset: Dataset):
    """Inverse of :func:`discretize` placing every time at an interval's right end."""
    ends = dataset.grid.ends
    out = []
    for i in range(dataset.n):
        ks = np.repeat(np.arange(dataset.K), dataset.events[i])
        rec = RawRecord(id=dataset.ids[i], arm=int(dataset.arm[i]), event_times=list(ends[ks]))
        if dataset.death[i]:
            rec.death_time = float(ends[dataset.death[i] - 1])
        elif dataset.censor[i]:
            rec.censor_time = float(ends[dataset.censor[i] - 2]) if dataset.censor[i] > 1 else 0.0
        else:
            rec.censor_time = dataset.grid.tau
        out.append(rec)
    return out
