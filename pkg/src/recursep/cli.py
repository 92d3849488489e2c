"""Command-line interface: ``recursep --mode {test,estimate,simulate}``.

Exit codes: 0 success, 2 input error, 3 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

from . import __version__
from .campaign import Scenario, additive_scenarios, crossing_scenarios, run_campaign
from .comparators import MarginalTest
from .estimators import ghosh_lin_mean, kaplan_meier, while_alive_curve
from .exceptions import InputError, NumericalError
from .io import ingest_csv, write_curve_csv
from .results import DIRECTIONS, METHODS
from .separable import DEFAULT_TRUNCATION, PRMSMaTest, fit_separable

MODES = ("test", "estimate", "simulate")

DEFAULTS = {
    "mode": None,
    "input": None,
    "grid_k": 100,
    "grid": None,
    "horizons": None,
    "method": list(METHODS),
    "a_d": 0,
    "variance": "plugin",
    "bootstrap_b": 500,
    "truncate": list(DEFAULT_TRUNCATION),
    "link": "logit",
    "bins": 10,
    "seed": 0,
    "out": "recursep_out",
}

# keys only meaningful in simulate mode
SIMULATE_KEYS = {"scenarios", "preset", "replications", "n_jobs", "directions", "alpha"}


def _csv_list(text, cast=str):
    return [cast(x.strip()) for x in str(text).split(",") if x.strip()]


def build_parser():
    p = argparse.ArgumentParser(
        prog="recursep",
        description="Separable-effect tests for recurrent events with a terminal event.",
    )
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--input", help="long-format CSV (id,arm,type,time)")
    p.add_argument("--config", help="JSON config; explicit flags override its values")
    p.add_argument("--grid-k", type=int, help="number of equal-width intervals (default 100)")
    p.add_argument("--horizons", help="comma-separated horizon times (default: end of grid)")
    p.add_argument("--method", help="comma-separated subset of " + ",".join(METHODS))
    p.add_argument("--a-d", type=int, choices=(0, 1))
    p.add_argument("--variance", choices=("plugin", "bootstrap"))
    p.add_argument("--bootstrap-b", type=int)
    p.add_argument("--truncate", help="weight truncation bounds LOW,HIGH")
    p.add_argument("--link", choices=("logit", "identity"))
    p.add_argument("--bins", type=int, help="time bins of the death-hazard model")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_config(args):
    """Merge defaults, the JSON config file and explicit flags (flags win)."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise InputError(f"{path}: top level must be an object")
        unknown = set(loaded) - set(DEFAULTS) - SIMULATE_KEYS
        if unknown:
            raise InputError(f"{path}: unknown keys {sorted(unknown)}")
        cfg.update(loaded)
    flags = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    if "horizons" in flags:
        flags["horizons"] = _csv_list(flags["horizons"], float)
    if "method" in flags:
        flags["method"] = _csv_list(flags["method"])
    if "truncate" in flags:
        flags["truncate"] = _csv_list(flags["truncate"], float)
    cfg.update(flags)

    if cfg["mode"] not in MODES:
        raise InputError(f"--mode must be one of {MODES}")
    if isinstance(cfg["method"], str):
        cfg["method"] = _csv_list(cfg["method"])
    bad = [m for m in cfg["method"] if m not in METHODS]
    if bad or not cfg["method"]:
        raise InputError(f"unknown method(s) {bad}; choose from {METHODS}")
    if len(cfg["truncate"]) != 2:
        raise InputError("--truncate needs two values LOW,HIGH")
    if cfg["variance"] not in ("plugin", "bootstrap"):
        raise InputError("variance must be plugin or bootstrap")
    if cfg["variance"] == "bootstrap" and int(cfg["bootstrap_b"]) < 2:
        raise InputError("bootstrap needs B >= 2")
    if cfg["a_d"] not in (0, 1):
        raise InputError("a_d must be 0 or 1")
    if cfg["mode"] != "simulate" and not cfg["input"]:
        raise InputError(f"--input is required in {cfg['mode']} mode")
    return cfg


def _grid_spec(cfg):
    return {"boundaries": cfg["grid"]} if cfg.get("grid") else int(cfg["grid_k"])


def horizon_indices(grid, horizons):
    """Interval indices for horizon times; each must be a grid boundary in ``(0, tau]``."""
    if not horizons:
        return [grid.K]
    out = []
    for t in horizons:
        if not 0 < t <= grid.tau * (1 + 1e-12):
            raise InputError(f"horizon {t:g} outside (0, tau={grid.tau:g}]")
        out.append(grid.index_of_time(t))
    return out


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _neglog10(p):
    return math.inf if p <= 0 else -math.log10(p)


def format_table(results, horizons):
    """Rows per method, columns per horizon: ``z`` and ``-log10 p`` (two-sided)."""
    head = f"{'method':<10}{'stat':<10}" + "".join(f"{'tau=' + format(t, 'g'):>12}" for t in horizons)
    lines = [head, "-" * len(head)]
    for method, rs in results.items():
        lines.append(f"{method:<10}{'z':<10}" + "".join(f"{r.z:>12.3f}" for r in rs))
        lines.append(f"{'':<10}{'-log10 p':<10}" + "".join(f"{_neglog10(r.p_two):>12.3f}" for r in rs))
    return "\n".join(lines)


def _run_test(cfg, dataset, out):
    ks = horizon_indices(dataset.grid, cfg["horizons"])
    taus = [float(dataset.grid.ends[k - 1]) for k in ks]
    results, files = {}, []
    for method in cfg["method"]:
        if method == "PR-MSMaT":
            test = PRMSMaTest(
                a_d=cfg["a_d"], variance=cfg["variance"], n_bootstrap=cfg["bootstrap_b"],
                truncation=tuple(cfg["truncate"]), link=cfg["link"], time_bins=cfg["bins"],
                random_state=cfg["seed"],
            )
        else:
            test = MarginalTest(method, cfg["variance"], cfg["bootstrap_b"], cfg["seed"])
        results[method] = test.fit(dataset, ks).results_
        for r in results[method]:
            path = out / f"result_{method}_tau{r.tau:g}.json"
            _write_json(path, r.to_dict())
            files.append(path.name)
    print(format_table(results, taus))
    return files


def _run_estimate(cfg, dataset, out):
    time = dataset.grid.ends
    files = []

    def emit(name, values):
        files.append(write_curve_csv(out / name, time, values).name)

    for a in (0, 1):
        emit(f"km_arm{a}.csv", kaplan_meier(dataset, a).values)
        emit(f"ghosh_lin_arm{a}.csv", ghosh_lin_mean(dataset, a).values)
        emit(f"while_alive_L_arm{a}.csv", while_alive_curve(dataset, a).values)
    fit = fit_separable(dataset, cfg["a_d"], link=cfg["link"], time_bins=cfg["bins"],
                        truncation=tuple(cfg["truncate"]))
    for a_y in (0, 1):
        emit(f"mu_ay{a_y}_ad{cfg['a_d']}.csv", fit.curves[a_y].cumulative)
    print(f"wrote {len(files)} curve files to {out}")
    return files


def _campaign_scenarios(cfg):
    if cfg.get("scenarios"):
        return [Scenario.from_dict(s) for s in cfg["scenarios"]]
    preset = cfg.get("preset")
    if not isinstance(preset, dict) or "name" not in preset:
        raise InputError("simulate mode needs 'scenarios' or a 'preset' object with a 'name'")
    opts = {k: v for k, v in preset.items() if k != "name"}
    if preset["name"] == "additive":
        return additive_scenarios(**opts)
    if preset["name"] == "crossing":
        return crossing_scenarios(**opts)
    raise InputError(f"unknown preset {preset['name']!r}")


def _run_simulate(cfg, out):
    scenarios = _campaign_scenarios(cfg)
    result = run_campaign(
        scenarios, methods=cfg["method"], directions=cfg.get("directions", list(DIRECTIONS)),
        replications=int(cfg.get("replications", 100)), n_jobs=int(cfg.get("n_jobs", 1)),
        seed=int(cfg["seed"]), alpha=float(cfg.get("alpha", 0.05)), variance=cfg["variance"],
    )
    result.write(out)
    for r in result.rates:
        print(f"{r['scenario']:<24}{r['method']:<10}{r['direction']:<6}tau={r['tau']:<8g}"
              f"rate={r['rate']:.3f} (se {r['se']:.3f})")
    files = ["rejection_rates.csv", "replications.csv", "summary.json"]
    if result.curves:
        files.append("mean_curves.csv")
    return files, [s.to_dict() for s in scenarios]


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    out = Path(cfg["out"])
    manifest = {"version": __version__, "mode": cfg["mode"], "seed": cfg["seed"]}
    if cfg["mode"] == "simulate":
        files, scenarios = _run_simulate(cfg, out)
        manifest["scenarios"] = scenarios
    else:
        dataset = ingest_csv(cfg["input"], _grid_spec(cfg))
        manifest["input_sha256"] = _file_digest(cfg["input"])
        manifest["grid"] = {"K": dataset.K, "boundaries": dataset.grid.boundaries.tolist()}
        manifest["n_subjects"] = int(dataset.n)
        out.mkdir(parents=True, exist_ok=True)
        run = _run_test if cfg["mode"] == "test" else _run_estimate
        files = run(cfg, dataset, out)
    manifest["config"] = cfg
    manifest["outputs"] = files
    _write_json(out / "manifest.json", manifest)
    return 0


def run_cli(argv=None):
    """Entry point returning an exit code instead of raising."""
    try:
        return main(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else 2
    except (InputError, OSError) as exc:
        print(f"recursep: input error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"recursep: numerical failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - report instead of a bare traceback
        print(f"recursep: unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def console_main():
    sys.exit(run_cli())


if __name__ == "__main__":
    console_main()
