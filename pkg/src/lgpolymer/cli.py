"""``polymer`` command line: run one experiment (or all) and emit a JSON report.

Exit status is 0 when every check passes, 1 when a check fails and 2 for a
configuration error.  Settings come from a TOML file (``--config``) and are
overridden by flags.  Top-level TOML keys apply to every experiment; a table
named after an experiment (``[chi]``, ``[var-identity]``) applies to that one
only.
"""
from __future__ import annotations

import argparse
import inspect
import json
import logging
import os
import sys

from .experiments import EXPERIMENTS, SCHEMA_VERSION, ConfigError, Tolerances

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("lgpolymer")

DEFAULT_SEED = 1
# flag/config key -> experiment keyword
_KEYMAP = {
    "theta": "theta",
    "mu": "mu",
    "s": "s",
    "t": "t",
    "n": "N",
    "n_list": "N_list",
    "reps": "reps",
    "reps_min": "reps_min",
    "tau": "tau",
    "alpha": "alpha",
    "c1": "c1",
    "dims": "dims",
    "k_list": "ks",
}
_RUN_KEYS = {"seed", "workers", "sigma", "p_min"}


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dims(text):
    try:
        parts = [int(v) for v in str(text).lower().replace(",", "x").split("x")]
    except ValueError:
        parts = []
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polymer", description="Log-gamma polymer Monte Carlo laboratory.")
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS) + ["all"])
    g = parser.add_argument_group("model and sizes")
    g.add_argument("--theta", type=float)
    g.add_argument("--mu", type=float)
    g.add_argument("--s", type=float, help="horizontal direction (lln-bulk)")
    g.add_argument("--t", type=float, help="vertical direction (lln-bulk)")
    g.add_argument("--n", type=int, help="scaling parameter N")
    g.add_argument("--n-list", type=_int_list, help="comma-separated N values")
    g.add_argument("--dims", type=_dims, help="rectangle MxN")
    g.add_argument("--reps", type=int)
    g.add_argument("--reps-min", type=int, help="replicas at the largest N (chi)")
    g.add_argument("--tau", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--c1", type=float)
    g.add_argument("--k-list", type=_int_list, help="exit depths (duality)")
    r = parser.add_argument_group("run control")
    r.add_argument("--config", help="TOML file with default settings")
    r.add_argument("--seed", type=int, help="master seed (fallback: $POLYMER_SEED)")
    r.add_argument("--workers", type=int, help="worker threads (default: logical cores)")
    r.add_argument("--sigma", type=float, help="z-score threshold (default 4)")
    r.add_argument("--p-min", type=float, help="p-value threshold (default 1e-3)")
    r.add_argument("--out", help="JSON report path (default polymer-<experiment>.json)")
    r.add_argument("--csv", help="also write the experiment's CSV table here")
    r.add_argument("--stdout", action="store_true", help="print the JSON report on stdout")
    r.add_argument("--quiet", action="store_true", help="no progress messages")
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _norm(key):
    return key.replace("-", "_")


def _coerce(key, value):
    if key in ("n_list", "k_list") and not isinstance(value, list):
        return _int_list(value)
    if key == "dims" and not isinstance(value, (list, tuple)):
        return _dims(value)
    return tuple(value) if key == "dims" else value


def resolve(name: str, args: argparse.Namespace, config: dict) -> tuple[dict, dict]:
    """Merge config sections and flags into (experiment kwargs, run settings)."""
    merged = {}
    sections = set(EXPERIMENTS) | {"all"}
    for key, value in config.items():
        if isinstance(value, dict):
            if key not in sections:
                raise ConfigError(f"unknown config table [{key}]")
            continue
        merged[_norm(key)] = value
    for key, value in config.get(name, {}).items():
        merged[_norm(key)] = value
    for key in list(_KEYMAP) + sorted(_RUN_KEYS):
        v = getattr(args, key, None)
        if v is not None:
            merged[key] = v
    unknown = set(merged) - set(_KEYMAP) - _RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown settings: {', '.join(sorted(unknown))}")
    run = {k: merged.pop(k) for k in list(merged) if k in _RUN_KEYS}
    fn = EXPERIMENTS[name]
    accepted = set(inspect.signature(fn).parameters)
    kwargs = {}
    for key, value in merged.items():
        target = _KEYMAP[key]
        if target not in accepted:
            # shared top-level keys may not apply to every experiment
            if name in config and key in map(_norm, config[name]) or getattr(args, key, None) is not None:
                raise ConfigError(f"setting {key!r} does not apply to {name}")
            continue
        try:
            kwargs[target] = _coerce(key, value)
        except argparse.ArgumentTypeError as exc:
            raise ConfigError(str(exc)) from None
    return kwargs, run


def _seed(run):
    if run.get("seed") is not None:
        return int(run["seed"])
    env = os.environ.get("POLYMER_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"POLYMER_SEED is not an integer: {env!r}") from None
    return DEFAULT_SEED


def run_one(name, args, config):
    kwargs, run = resolve(name, args, config)
    seed = _seed(run)
    tol = Tolerances(sigma=float(run.get("sigma", 4.0)), p_min=float(run.get("p_min", 1e-3)))
    fn = EXPERIMENTS[name]
    params = inspect.signature(fn).parameters
    call = dict(kwargs, seed=seed)
    if "workers" in params:
        call["workers"] = run.get("workers")
    if "tol" in params:
        call["tol"] = tol
    log.info("running %s (seed %d)", name, seed)
    return fn(**call)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.quiet:
        logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="[polymer] %(message)s")
    try:
        config = _load_config(args.config)
        if args.experiment == "all":
            if args.csv:
                raise ConfigError("--csv is not available with 'all'")
            reports = [run_one(name, args, config) for name in EXPERIMENTS]
            doc = {"schema": SCHEMA_VERSION, "name": "all",
                   "reports": [r.to_dict() for r in reports],
                   "passed": all(r.passed for r in reports)}
            passed = doc["passed"]
            text = json.dumps(doc, indent=2, sort_keys=True)
        else:
            rep = run_one(args.experiment, args, config)
            if args.csv:
                rep.write_csv(args.csv)
            passed = rep.passed
            text = rep.to_json()
    except ConfigError as exc:
        print(f"polymer: configuration error: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out else (None if args.stdout else f"polymer-{args.experiment}.json")
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    if args.stdout:
        sys.stdout.write(text + "\n")
    log.info("%s: %s", args.experiment, "all checks passed" if passed else "some checks FAILED")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
