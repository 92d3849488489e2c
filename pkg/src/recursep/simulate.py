"""Data-generating processes."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, RawRecord, TimeGrid
from .exceptions import InputError

PATTERNS = ("constant", "decreasing", "increasing")

# per-pattern defaults, in units of 1/K: (start, step per block, limit)
_PATTERN_DEFAULTS = {
    "constant": (2.0, 0.0, 2.0),
    "decreasing": (3.0, -0.5, 1.0),
    "increasing": (1.0, 0.5, 3.0),
}


@dataclass
class DiscreteDGPConfig:
    """Additive-probability recurrent/terminal event generator.

    Per interval ``k``, for a subject alive at its start:
    ``P(death) = beta_D_0 + beta_D_A * A + beta_Y_D * Y_{k-1}`` and, if it
    survives, ``P(event) = baseline_k + beta_Y_A * A``. Coefficients are given
    per interval (e.g. ``-0.5 / K``). ``block_fraction`` sets the baseline step
    length as a fraction of ``K`` (0.2 gives 200 intervals when ``K = 1000``).
    """

    K: int = 1000
    n: int = 1000
    baseline_pattern: str = "constant"
    beta_Y_A: float = 0.0
    beta_D_0: float | None = None
    beta_D_A: float | None = None
    beta_Y_D: float | None = None
    block_fraction: float = 0.2
    baseline_start: float | None = None
    baseline_step: float | None = None
    baseline_limit: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.baseline_pattern not in PATTERNS:
            raise InputError(f"baseline_pattern must be one of {PATTERNS}")
        if int(self.K) < 1 or int(self.n) < 2:
            raise InputError("need K >= 1 and n >= 2")
        K = self.K
        if self.beta_D_0 is None:
            self.beta_D_0 = 1.0 / K
        if self.beta_D_A is None:
            self.beta_D_A = -0.5 / K
        if self.beta_Y_D is None:
            self.beta_Y_D = 0.2 / K
        start, step, limit = _PATTERN_DEFAULTS[self.baseline_pattern]
        if self.baseline_start is None:
            self.baseline_start = start / K
        if self.baseline_step is None:
            self.baseline_step = step / K
        if self.baseline_limit is None:
            self.baseline_limit = limit / K

    def baseline(self):
        """``beta_{Y,0,k}`` for ``k = 1..K``."""
        K = self.K
        block = max(1, int(round(self.block_fraction * K)))
        steps = np.arange(K) // block
        b = self.baseline_start + self.baseline_step * steps
        if self.baseline_step < 0:
            b = np.maximum(b, self.baseline_limit)
        elif self.baseline_step > 0:
            b = np.minimum(b, self.baseline_limit)
        return b

    def to_dict(self):
        return asdict(self)


@dataclass
class GenerationReport:
    violations: int = 0


def generate_discrete(config: DiscreteDGPConfig, rng=None, report=None,
                      strict=True) -> Dataset:
    """Simulate a two-arm trial with ``A ~ Bernoulli(1/2)`` and ``A_Y = A_D = A``.

    Probabilities outside ``[0, 1]`` are clipped and counted in ``report``;
    with ``strict`` any violation raises.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    K, n = int(config.K), int(config.n)
    arm = (rng.random(n) < 0.5).astype(np.int8)
    base = config.baseline()
    events = np.zeros((n, K), dtype=np.int32)
    death = np.zeros(n, dtype=np.int64)
    Y = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    pd_arm = config.beta_D_0 + config.beta_D_A * arm
    py_arm = config.beta_Y_A * arm
    violations = 0
    for k in range(K):
        pd = pd_arm + config.beta_Y_D * Y
        py = base[k] + py_arm
        bad = alive & ((pd < 0) | (pd > 1) | (py < 0) | (py > 1))
        violations += int(bad.sum())
        u = rng.random((2, n))
        dies = alive & (u[0] < np.clip(pd, 0, 1))
        death[dies] = k + 1
        alive &= ~dies
        ev = alive & (u[1] < np.clip(py, 0, 1))
        events[ev, k] = 1
        Y += ev
    if report is not None:
        report.violations += violations
    if strict and violations:
        raise InputError(f"{violations} probability draws fell outside [0, 1]")
    return Dataset.from_arrays(TimeGrid.uniform(K), arm, events, death, check=False)


@dataclass
class ContinuousDGPConfig:
    """Independent recurrent and terminal processes in continuous time.

    Recurrent events follow a Poisson process whose rate starts at
    ``base_rate`` and is multiplied by ``step_factor`` every ``epoch_length``;
    treated subjects have the rate scaled by ``rr``. Death is exponential with
    hazard ``control_hazard`` (times ``hr`` when treated). Follow-up stops at
    ``max_follow_up``.
    """

    base_rate: float = 2.0
    step_factor: float = float(np.exp(0.5))
    epoch_length: float = 1.2
    max_follow_up: float = 5.0
    rr: float = 1.0
    hr: float = 1.0
    control_hazard: float = 0.7
    n: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.base_rate > 0 or not self.max_follow_up > 0:
            raise InputError("base_rate and max_follow_up must be positive")
        if not self.epoch_length > 0 or self.step_factor < 0:
            raise InputError("epoch_length must be positive and step_factor nonnegative")
        if self.rr < 0 or self.hr < 0 or self.control_hazard < 0:
            raise InputError("rr, hr and control_hazard must be nonnegative")
        if int(self.n) < 2:
            raise InputError("need n >= 2")

    def epochs(self):
        """``(start, end, rate)`` for each constant-rate piece of the control rate."""
        out, start, e = [], 0.0, 0
        while start < self.max_follow_up:
            end = min(start + self.epoch_length, self.max_follow_up)
            out.append((start, end, self.base_rate * self.step_factor**e))
            start, e = end, e + 1
        return out

    def expected_events(self, arm=0, horizon=None):
        """Expected event count by ``horizon`` ignoring death."""
        horizon = self.max_follow_up if horizon is None else horizon
        scale = self.rr if arm == 1 else 1.0
        return scale * sum(r * max(0.0, min(b, horizon) - a) for a, b, r in self.epochs())

    def to_dict(self):
        return asdict(self)


def generate_continuous(config: ContinuousDGPConfig, rng=None):
    """Simulate raw continuous-time records (``A ~ Bernoulli(1/2)``)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    n, tmax = int(config.n), float(config.max_follow_up)
    arm = (rng.random(n) < 0.5).astype(int)
    hazard = config.control_hazard * np.where(arm == 1, config.hr, 1.0)
    with np.errstate(divide="ignore"):
        death = rng.exponential(1.0, n) / hazard
    died = death <= tmax
    exit_time = np.minimum(death, tmax)
    scale = np.where(arm == 1, config.rr, 1.0)
    times = [[] for _ in range(n)]
    for a, b, rate in config.epochs():
        length = np.clip(np.minimum(exit_time, b) - a, 0.0, None)
        counts = rng.poisson(rate * scale * length)
        for i in np.flatnonzero(counts):
            times[i].extend(a + length[i] * rng.random(counts[i]))
    records = []
    for i in range(n):
        ev = sorted(t for t in times[i] if t > 0)
        if died[i]:
            records.append(RawRecord(str(i), int(arm[i]), ev, death_time=float(death[i])))
        else:
            records.append(RawRecord(str(i), int(arm[i]), ev, censor_time=tmax))
    return records
