"""Test result container shared by all methods."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from scipy.stats import norm

METHODS = ("PR-MSMaT", "WA", "GL")
DIRECTIONS = ("two", "left", "right")


def p_values(z):
    """Two-sided, left-sided and right-sided normal p-values for ``z``."""
    return (
        float(min(1.0, 2.0 * norm.sf(abs(z)))),
        float(norm.cdf(z)),
        float(norm.sf(z)),
    )


@dataclass(frozen=True)
class TestResult:
    """Outcome of one test at one horizon.

    ``u`` is the raw statistic: the score for PR-MSMaT, the log ratio of
    while-alive loss rates for WA, and the difference in mean frequency for GL.
    ``var`` is its estimated variance and ``z = u / sqrt(var)``.
    """

    __test__ = False  # not a pytest class

    method: str
    horizon_index: int
    tau: float
    u: float
    var: float
    z: float
    p_two: float
    p_left: float
    p_right: float
    beta_hat: float
    variance_method: str
    a_d: int | None = None
    truncated_fraction: float = 0.0
    boundary: bool = False

    @classmethod
    def from_statistic(cls, method, horizon_index, tau, u, var, beta_hat,
                       variance_method, **extra):
        z = u / math.sqrt(var)
        p_two, p_left, p_right = p_values(z)
        return cls(
            method=method, horizon_index=int(horizon_index), tau=float(tau),
            u=float(u), var=float(var), z=float(z),
            p_two=p_two, p_left=p_left, p_right=p_right,
            beta_hat=float(beta_hat), variance_method=variance_method, **extra,
        )

    def p_value(self, direction):
        return {"two": self.p_two, "left": self.p_left, "right": self.p_right}[direction]

    def reject(self, direction, alpha=0.05):
        return self.p_value(direction) < alpha

    def to_dict(self):
        d = asdict(self)
        # beta_hat may be -inf on the boundary; JSON has no infinities
        if not math.isfinite(d["beta_hat"]):
            d["beta_hat"] = None
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)
