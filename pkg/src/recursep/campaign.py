"""Monte Carlo campaigns: rejection rates, power and mean while-alive curves.

Replication ``r`` of scenario ``s`` draws from the stream keyed by
``(seed, s, r)`` and results are merged in ``(s, r)`` order, so outputs are
identical for any number of workers.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .comparators import MarginalTest
from .data import TimeGrid, discretize
from .estimators import while_alive_curve
from .exceptions import InputError, NumericalError, RecurSepError
from .results import DIRECTIONS, METHODS
from .rng import replicate_rng
from .separable import DEFAULT_TRUNCATION, PRMSMaTest
from .simulate import (
    ContinuousDGPConfig, DiscreteDGPConfig, generate_continuous, generate_discrete,
)

log = logging.getLogger(__name__)

GENERATORS = ("discrete", "continuous")


@dataclass
class Scenario:
    """One data-generating configuration plus analysis options.

    ``horizons`` are times on the analysis grid (default: its last boundary).
    ``grid_k`` sets the number of equal-width analysis intervals for the
    continuous generator; the discrete generator uses its own unit grid.
    """

    name: str
    generator: str = "discrete"
    params: dict = field(default_factory=dict)
    horizons: list | None = None
    grid_k: int = 60
    a_d: int = 0
    link: str = "identity"
    time_bins: int = 1
    fit_slope: bool = True
    truncation: tuple = DEFAULT_TRUNCATION
    curves: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InputError(f"unknown generator {self.generator!r}")
        self.truncation = tuple(self.truncation)
        self.config()  # validate parameters early

    def config(self, seed=0):
        cls = DiscreteDGPConfig if self.generator == "discrete" else ContinuousDGPConfig
        try:
            return cls(**{**self.params, "seed": seed})
        except TypeError as exc:
            raise InputError(f"scenario {self.name}: {exc}") from None

    def generate(self, rng):
        cfg = self.config()
        if self.generator == "discrete":
            return generate_discrete(cfg, rng=rng)
        grid = TimeGrid.uniform(self.grid_k, cfg.max_follow_up)
        return discretize(generate_continuous(cfg, rng=rng), grid, death_conflict="defer")

    def horizon_indices(self, grid):
        if not self.horizons:
            return [grid.K]
        return [grid.index_of_time(float(t)) for t in self.horizons]

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "name" not in d:
            raise InputError("every scenario needs a name")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"scenario {d['name']}: unknown keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["truncation"] = list(self.truncation)
        return d


def additive_scenarios(effect="null", patterns=("constant", "decreasing", "increasing"),
                       n=1000, K=1000, horizons=None, **params):
    """Additive-intensity designs: ``effect`` is ``"null"`` or ``"power"`` (beta_Y_A = -0.5/K)."""
    beta_y_a = {"null": 0.0, "power": -0.5 / K}[effect]
    return [
        Scenario(
            name=f"{p}_{effect}",
            params=dict(K=K, n=n, baseline_pattern=p, beta_Y_A=beta_y_a, **params),
            horizons=horizons,
        )
        for p in patterns
    ]


def crossing_scenarios(n=500, rrs=(1.0, 0.75), hrs=(1.0, 0.5, 0.2), grid_k=60, **params):
    """Continuous-time designs with a stepwise rising event rate."""
    return [
        Scenario(
            name=f"rr{rr:g}_hr{hr:g}", generator="continuous",
            params=dict(n=n, rr=rr, hr=hr, **params), grid_k=grid_k, curves=True,
        )
        for rr in rrs for hr in hrs
    ]


def _run_one(task):
    s_idx, scenario, rep, seed, methods, variance = task
    rng = replicate_rng(seed, s_idx, rep)
    out = {"scenario": scenario.name, "replication": rep, "rows": [], "curves": None}
    try:
        data = scenario.generate(rng)
        horizons = scenario.horizon_indices(data.grid)
        for method in methods:
            if method == "PR-MSMaT":
                test = PRMSMaTest(
                    a_d=scenario.a_d, variance=variance, link=scenario.link,
                    time_bins=scenario.time_bins, fit_slope=scenario.fit_slope,
                    truncation=scenario.truncation, random_state=seed,
                )
            else:
                test = MarginalTest(method, variance=variance, random_state=seed)
            for res in test.fit(data, horizons).results_:
                out["rows"].append(res)
        if scenario.curves:
            out["curves"] = (
                data.grid.ends.copy(),
                while_alive_curve(data, 0).values.copy(),
                while_alive_curve(data, 1).values.copy(),
            )
    except RecurSepError as exc:
        out["failure"] = f"{type(exc).__name__}: {exc}"
    return out


def worker_count(n_jobs=1):
    """Requested workers capped by ``RECURSEP_THREADS`` when set."""
    n = max(1, int(n_jobs or 1))
    cap = os.environ.get("RECURSEP_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InputError(f"RECURSEP_THREADS must be an integer, got {cap!r}") from None
    return n


@dataclass
class CampaignResult:
    """Aggregated rejection rates plus the per-replication archive."""

    rates: list
    replications: list
    failures: list
    curves: dict
    settings: dict

    def rate(self, scenario, method, direction="two", tau=None):
        rows = [
            r for r in self.rates
            if r["scenario"] == scenario and r["method"] == method and r["direction"] == direction
            and (tau is None or r["tau"] == tau)
        ]
        if not rows:
            raise KeyError((scenario, method, direction, tau))
        return rows[-1]["rate"]

    def z_values(self, scenario, method, tau=None):
        return np.array([
            r["z"] for r in self.replications
            if r["scenario"] == scenario and r["method"] == method
            and (tau is None or r["tau"] == tau)
        ])

    def write(self, out_dir):
        write_campaign(self, out_dir)


def run_campaign(scenarios, methods=METHODS, directions=DIRECTIONS, replications=1000,
                 n_jobs=1, seed=0, alpha=0.05, variance="plugin", max_failure=0.01):
    """Run every scenario ``replications`` times and tally rejections per direction."""
    scenarios = [s if isinstance(s, Scenario) else Scenario.from_dict(s) for s in scenarios]
    methods = list(methods)
    directions = list(directions)
    bad = [m for m in methods if m not in METHODS] + [d for d in directions if d not in DIRECTIONS]
    if bad:
        raise InputError(f"unknown methods/directions: {bad}")
    if int(replications) < 1:
        raise InputError("replications must be at least 1")
    if len({s.name for s in scenarios}) != len(scenarios):
        raise InputError("scenario names must be unique")

    tasks = [
        (i, s, r, int(seed), methods, variance)
        for i, s in enumerate(scenarios) for r in range(int(replications))
    ]
    workers = worker_count(n_jobs)
    if workers == 1:
        outputs = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (8 * workers))))

    failures = [
        {"scenario": o["scenario"], "replication": o["replication"],
         "seed": [int(seed), i // int(replications), o["replication"]], "error": o["failure"]}
        for i, o in enumerate(outputs) if "failure" in o
    ]
    for f in failures:
        log.warning("replication failed: %s", f)
    if len(failures) > max_failure * len(tasks):
        raise NumericalError(
            f"{len(failures)} of {len(tasks)} replications failed; first: {failures[0]}"
        )

    archive = []
    for o in outputs:
        for res in o["rows"]:
            archive.append({
                "scenario": o["scenario"], "replication": o["replication"],
                "method": res.method, "tau": res.tau, "u": res.u, "var": res.var,
                "z": res.z, "p_two": res.p_two, "p_left": res.p_left,
                "p_right": res.p_right, "beta_hat": res.beta_hat,
            })

    rates = []
    for s in scenarios:
        for m in methods:
            taus = sorted({r["tau"] for r in archive if r["scenario"] == s.name and r["method"] == m})
            for tau in taus:
                sel = [r for r in archive
                       if r["scenario"] == s.name and r["method"] == m and r["tau"] == tau]
                for d in directions:
                    rej = sum(r[f"p_{d}"] < alpha for r in sel)
                    valid = len(sel)
                    rate = rej / valid
                    rates.append({
                        "scenario": s.name, "method": m, "tau": tau, "direction": d,
                        "rejections": rej, "replications": valid, "rate": rate,
                        "se": math.sqrt(rate * (1 - rate) / valid),
                    })

    curves = {}
    for s in scenarios:
        got = [o["curves"] for o in outputs if o["scenario"] == s.name and o.get("curves")]
        if not got:
            continue
        time = got[0][0]
        arr0 = np.array([g[1] for g in got])
        arr1 = np.array([g[2] for g in got])
        m = len(got)
        curves[s.name] = {
            "time": time,
            "mean0": arr0.mean(0), "mean1": arr1.mean(0),
            "se0": arr0.std(0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(time),
            "se1": arr1.std(0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(time),
            # SE of the mean difference, pairing arms within replication
            "se_diff": (arr1 - arr0).std(0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(time),
            "replications": m,
        }

    settings = {
        "scenarios": [s.to_dict() for s in scenarios], "methods": methods,
        "directions": directions, "replications": int(replications), "seed": int(seed),
        "alpha": alpha, "variance": variance,
    }
    return CampaignResult(rates, archive, failures, curves, settings)


def curve_crossings(time, diff):
    """Times where ``diff`` changes sign, by linear interpolation between grid points."""
    time, diff = np.asarray(time, float), np.asarray(diff, float)
    out = []
    for j in range(diff.size - 1):
        a, b = diff[j], diff[j + 1]
        if a == 0:
            out.append(float(time[j]))
        elif a * b < 0:
            out.append(float(time[j] + (time[j + 1] - time[j]) * a / (a - b)))
    return out


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path, rows, fields):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


RATE_FIELDS = ["scenario", "method", "tau", "direction", "rejections", "replications", "rate", "se"]
REPLICATION_FIELDS = ["scenario", "replication", "method", "tau", "u", "var", "z",
                      "p_two", "p_left", "p_right", "beta_hat"]
CURVE_FIELDS = ["scenario", "time", "mean0", "se0", "mean1", "se1", "se_diff"]


def write_campaign(result: CampaignResult, out_dir):
    """Write ``rejection_rates.csv``, ``replications.csv``, ``summary.json`` and ``mean_curves.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "rejection_rates.csv", result.rates, RATE_FIELDS)
    _write_csv(out / "replications.csv", result.replications, REPLICATION_FIELDS)
    if result.curves:
        rows = []
        for name, c in result.curves.items():
            for j, t in enumerate(c["time"]):
                rows.append({"scenario": name, "time": float(t),
                             **{k: float(c[k][j]) for k in CURVE_FIELDS[2:]}})
        _write_csv(out / "mean_curves.csv", rows, CURVE_FIELDS)
    summary = {
        "settings": result.settings,
        "rates": result.rates,
        "failures": result.failures,
    }
    if result.curves:
        summary["curve_crossings"] = {
            name: curve_crossings(c["time"], c["mean1"] - c["mean0"])
            for name, c in result.curves.items()
        }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
