"""``screenopt`` command line front end.

Configuration is an INI-style file with one section per concern::

    [screen]
    r = 200
    n = 40000
    v = 3

    [fluorescence]
    target_mean = 0.4

    [curve]
    alpha_min = -1
    alpha_max = 3
    alpha_step = 0.1

Unknown sections and keys are rejected.  Run ``screenopt reference`` for the
full key list with defaults.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import math
import os
import re
import sys
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .approx import approximate_discovery
from .fluorescence import FluorescenceModel
from .moments import ScreenConfig, descendants_for_capacity, expected_selected, expected_w1
from .optimizer import (GridSpec, InfeasibleConstraintError, SelectionEmptyError,
                        max_alpha_for_w1, optimize_alpha, optimize_beta)
from .simulator import estimate_pdisc


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "<config>", line: Optional[int] = None):
        self.path, self.line = path, line
        where = f"{path}:{line}" if line else path
        super().__init__(f"{where}: {message}")


def _float_or_none(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _int_or_none(s: str):
    return None if s.strip().lower() in ("", "none") else int(s)


def _float_list(s: str):
    return [float(x) for x in s.split(",") if x.strip()]


def _bool(s: str):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options):
    def conv(s):
        s = s.strip().lower()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return conv


@dataclasses.dataclass(frozen=True)
class Key:
    convert: Callable[[str], Any]
    default: Any
    help: str


SCHEMA: dict[str, dict[str, Key]] = {
    "screen": {
        "r": Key(int, 200, "number of genes (construct types)"),
        "n": Key(int, 40000, "cells sorted in the first FACS stage"),
        "v": Key(int, 3, "genes sent to validation"),
        "model": Key(_choice("multinomial", "poisson"), "multinomial", "construct insertion model"),
        "lambda": Key(_float_or_none, None, "multiplicity of infection (poisson model)"),
        "L": Key(_int_or_none, None, "descendants per selected cell (two-stage)"),
        "capacity": Key(_float_or_none, None,
                        "stage-two cell capacity; sets L = round(capacity / E(selected))"),
    },
    "fluorescence": {
        "family": Key(_choice("normal", "lognormal"), "normal",
                      "distribution family; lognormal parameters are on the log scale"),
        "target_mean": Key(float, 0.4, "target-cell location"),
        "target_sd": Key(float, 1.0, "target-cell scale"),
        "nontarget_mean": Key(float, 0.0, "non-target location"),
        "nontarget_sd": Key(float, 1.0, "non-target scale"),
    },
    "curve": {
        "alpha_min": Key(float, -1.0, "first threshold"),
        "alpha_max": Key(float, 3.0, "last threshold (inclusive)"),
        "alpha_step": Key(float, 0.1, "grid step"),
        "replicates": Key(int, 0, "simulation replicates per point; 0 disables simulation"),
        "seed": Key(int, 0, "master seed"),
        "sweep": Key(_choice("none", "target_mean", "v"), "none",
                     "emit one file per value of this parameter"),
        "sweep_values": Key(_float_list, [], "comma-separated values for the sweep"),
    },
    "optimize": {
        "stage": Key(_choice("single", "two"), "single", "single- or two-stage design"),
        "grid_points": Key(int, 61, "coarse grid size"),
        "lo": Key(_float_or_none, None, "grid lower end (default: G2 0.1% upper quantile)"),
        "hi": Key(_float_or_none, None, "grid upper end (default: G1 0.01% upper quantile)"),
        "tol": Key(float, 1e-4, "golden-section tolerance on the threshold"),
        "b": Key(float, 10.0, "target-cell budget for the first stage (two-stage)"),
        "w1_mode": Key(_choice("expectation", "probability"), "expectation",
                       "E(W1) >= b, or P(W1 >= b) >= 1 - epsilon"),
        "epsilon": Key(float, 0.05, "failure probability for w1_mode = probability"),
        "refine_replicates": Key(int, 0, "re-score the top 3 alphas by simulation (single)"),
        "replicates": Key(int, 2000, "simulation budget per beta (poisson two-stage)"),
        "seed": Key(int, 0, "master seed"),
    },
    "simulate": {
        "alpha": Key(float, 0.8, "first-stage threshold"),
        "beta": Key(_float_or_none, None, "second-stage threshold; empty for single-stage"),
        "replicates": Key(int, 10000, "number of replicates"),
        "seed": Key(int, 0, "master seed"),
    },
    "compare-stages": {
        "single_n": Key(int, 10000, "cells in the single-stage design"),
        "two_stage_n": Key(int, 5000, "first-stage cells in the two-stage design"),
        "b": Key(float, 10.0, "target-cell budget fixing alpha for the two-stage design"),
        "alpha_min": Key(float, -1.0, "single-stage grid start"),
        "alpha_max": Key(float, 3.0, "single-stage grid end"),
        "alpha_step": Key(float, 0.05, "single-stage grid step"),
        "beta_min": Key(float, -1.0, "two-stage beta grid start"),
        "beta_max": Key(float, 3.0, "two-stage beta grid end"),
        "beta_step": Key(float, 0.05, "two-stage beta grid step"),
        "replicates": Key(int, 0, "simulation replicates per point; 0 disables simulation"),
        "seed": Key(int, 0, "master seed"),
    },
}

COMMAND_SECTION = {"curve": "curve", "optimize": "optimize", "simulate": "simulate",
                   "compare-stages": "compare-stages"}


@dataclasses.dataclass
class RunConfig:
    screen: ScreenConfig
    fluorescence: FluorescenceModel
    sections: dict[str, dict[str, Any]]
    path: str = "<config>"

    def section(self, name: str) -> dict[str, Any]:
        return self.sections[name]


def _key_lines(text: str) -> dict[tuple[str, Optional[str]], int]:
    lines: dict[tuple[str, Optional[str]], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip()), no)
    return lines


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    """Parse and validate a config file's text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    lines = _key_lines(text)
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from exc

    sections: dict[str, dict[str, Any]] = {
        name: {k: key.default for k, key in keys.items()} for name, keys in SCHEMA.items()}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]", path, lines.get((name, None)))
        for k, raw in cp.items(name):
            line = lines.get((name, k))
            if k not in SCHEMA[name]:
                raise ConfigError(f"unknown key {k!r} in [{name}]", path, line)
            try:
                sections[name][k] = SCHEMA[name][k].convert(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}.{k}: {exc}", path, line) from exc

    sc = sections["screen"]
    try:
        screen = ScreenConfig(r=sc["r"], n=sc["n"], v=sc["v"], model=sc["model"],
                              lam=sc["lambda"] if sc["model"] == "poisson" else None,
                              L=sc["L"] or 1)
    except ValueError as exc:
        raise ConfigError(str(exc), path, lines.get(("screen", None))) from exc
    fc = sections["fluorescence"]
    try:
        ctor = FluorescenceModel.normal if fc["family"] == "normal" else FluorescenceModel.lognormal
        fl = ctor(fc["target_mean"], fc["nontarget_mean"], fc["target_sd"], fc["nontarget_sd"])
    except ValueError as exc:
        raise ConfigError(str(exc), path, lines.get(("fluorescence", None))) from exc
    return RunConfig(screen, fl, sections, path)


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(p)) from exc
    return parse_config(text, str(p))


def threshold_grid(lo: float, hi: float, step: float, name: str = "alpha") -> np.ndarray:
    if not step > 0:
        raise ConfigError(f"{name}_step must be positive")
    if hi < lo:
        raise ConfigError(f"empty {name} grid: {name}_max < {name}_min")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


def _fmt_prob(p: Optional[float]) -> str:
    return "" if p is None else f"{p:.6f}"


def _fmt_num(x: float) -> str:
    return repr(float(x))


CURVE_COLUMNS = ["threshold", "pdisc_approx", "pdisc_sim", "ci_low", "ci_high",
                 "degenerate_flag"]


def _curve_rows(screen, fl, grid, *, replicates, seed, alpha=None, stream=()):
    rows = []
    for idx, t in enumerate(grid):
        res = (approximate_discovery(screen, fl, t) if alpha is None
               else approximate_discovery(screen, fl, alpha, t))
        sim = lo = hi = None
        if replicates > 0:
            a, b = (t, None) if alpha is None else (alpha, t)
            est = estimate_pdisc(screen, fl, a, b, replicates=replicates, seed=seed,
                                 stream=stream + (idx,))
            sim, lo, hi = est.estimate, est.ci_low, est.ci_high
        rows.append([_fmt_num(t), _fmt_prob(res.value), _fmt_prob(sim), _fmt_prob(lo),
                     _fmt_prob(hi), str(int(res.degenerate))])
    return rows


def _write_csv(path: Path, header: list[str], rows: list[list[str]]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _sweep_path(out: Path, key: str, value) -> Path:
    return out.with_name(f"{out.stem}_{key}={value:g}{out.suffix or '.csv'}")


def cmd_curve(rc: RunConfig, out: Path) -> list[Path]:
    """Discovery curve over an alpha grid; one file per sweep value in sweep mode."""
    cs = rc.section("curve")
    grid = threshold_grid(cs["alpha_min"], cs["alpha_max"], cs["alpha_step"])
    jobs: list[tuple[Path, ScreenConfig, FluorescenceModel]] = []
    if cs["sweep"] == "none":
        jobs.append((out, rc.screen, rc.fluorescence))
    else:
        if not cs["sweep_values"]:
            raise ConfigError("sweep requires sweep_values", rc.path)
        for val in cs["sweep_values"]:
            try:
                if cs["sweep"] == "v":
                    if val != int(val):
                        raise ValueError(f"v must be an integer, got {val}")
                    jobs.append((_sweep_path(out, "v", val), rc.screen.with_(v=int(val)),
                                 rc.fluorescence))
                else:
                    g1 = rc.fluorescence.g1
                    loc = dataclasses.fields(g1)[0].name
                    fl = FluorescenceModel(dataclasses.replace(g1, **{loc: val}),
                                           rc.fluorescence.g2)
                    jobs.append((_sweep_path(out, "target_mean", val), rc.screen, fl))
            except ValueError as exc:
                raise ConfigError(f"sweep value {val:g}: {exc}", rc.path) from exc
    written = []
    for k, (path, screen, fl) in enumerate(jobs):
        rows = _curve_rows(screen, fl, grid, replicates=cs["replicates"], seed=cs["seed"],
                           stream=(k,))
        _write_csv(path, CURVE_COLUMNS, rows)
        written.append(path)
    return written


def _config_summary(screen: ScreenConfig, fl: FluorescenceModel) -> dict:
    return {
        "r": screen.r, "n": screen.n, "v": screen.v, "model": screen.model,
        "lambda": screen.lam, "L": screen.L,
        "target": {"family": type(fl.g1).__name__.lower(), **dataclasses.asdict(fl.g1)},
        "nontarget": {"family": type(fl.g2).__name__.lower(), **dataclasses.asdict(fl.g2)},
    }


def _resolve_L(rc: RunConfig, screen: ScreenConfig, alpha: float) -> ScreenConfig:
    sc = rc.section("screen")
    if sc["L"] is not None:
        return screen.with_(L=sc["L"])
    if sc["capacity"] is not None:
        return screen.with_(L=descendants_for_capacity(screen, rc.fluorescence, alpha,
                                                       sc["capacity"]))
    raise ConfigError("two-stage runs need screen.L or screen.capacity", rc.path)


def cmd_optimize(rc: RunConfig) -> dict:
    """Optimal threshold(s) as a JSON-ready dict with stable key order."""
    os_ = rc.section("optimize")
    grid = GridSpec(os_["lo"], os_["hi"], os_["grid_points"], os_["tol"])
    fl = rc.fluorescence
    report: dict[str, Any] = {"command": "optimize", "stage": os_["stage"]}
    if os_["stage"] == "single":
        res = optimize_alpha(rc.screen, fl, grid, refine_replicates=os_["refine_replicates"],
                             seed=os_["seed"])
        screen = rc.screen
        constraint = None
    else:
        alpha = max_alpha_for_w1(rc.screen, fl, os_["b"], mode=os_["w1_mode"],
                                 epsilon=os_["epsilon"])
        screen = _resolve_L(rc, rc.screen, alpha)
        res = optimize_beta(screen, fl, alpha, grid, replicates=os_["replicates"],
                            seed=os_["seed"])
        constraint = {"b": os_["b"], "mode": os_["w1_mode"],
                      "epsilon": os_["epsilon"] if os_["w1_mode"] == "probability" else None,
                      "expected_w1": expected_w1(screen, fl, alpha),
                      "expected_selected": expected_selected(screen, fl, alpha),
                      "L": screen.L}
    flags = []
    if res.no_signal:
        flags.append("no-signal")
    if res.refined_by_simulation:
        flags.append("simulation-refined")
    report.update({
        "alpha_star": res.alpha_star,
        "beta_star": res.beta_star,
        "value": res.value,
        "constraint_active": res.constraint_active,
        "constraint": constraint,
        "flags": flags,
        "config": _config_summary(screen, fl),
        "search_trace": [{"threshold": x, "value": y} for x, y in res.trace],
    })
    return report


def cmd_simulate(rc: RunConfig, workers: Optional[int] = None) -> dict:
    ss = rc.section("simulate")
    screen = rc.screen
    beta = ss["beta"]
    if beta is not None:
        screen = _resolve_L(rc, screen, ss["alpha"])
    est = estimate_pdisc(screen, rc.fluorescence, ss["alpha"], beta,
                         replicates=ss["replicates"], seed=ss["seed"], workers=workers)
    approx = None
    if screen.model == "multinomial" or beta is None:
        approx = approximate_discovery(screen, rc.fluorescence, ss["alpha"], beta).value
    return {
        "command": "simulate",
        "alpha": ss["alpha"],
        "beta": beta,
        "estimate": est.estimate,
        "ci_low": est.ci_low,
        "ci_high": est.ci_high,
        "replicates": est.replicates,
        "seed": ss["seed"],
        "pdisc_approx": approx,
        "config": _config_summary(screen, rc.fluorescence),
    }


def cmd_compare_stages(rc: RunConfig, out: Path) -> Path:
    """Single-stage curve over alpha and two-stage curve over beta in one CSV."""
    cs = rc.section("compare-stages")
    fl = rc.fluorescence
    a_grid = threshold_grid(cs["alpha_min"], cs["alpha_max"], cs["alpha_step"], "alpha")
    b_grid = threshold_grid(cs["beta_min"], cs["beta_max"], cs["beta_step"], "beta")
    single = rc.screen.with_(n=cs["single_n"])
    two = rc.screen.with_(n=cs["two_stage_n"])
    alpha_star = max_alpha_for_w1(two, fl, cs["b"])
    two = _resolve_L(rc, two, alpha_star)
    rows = [["single", "alpha", ""] + row for row in
            _curve_rows(single, fl, a_grid, replicates=cs["replicates"], seed=cs["seed"],
                        stream=(0,))]
    rows += [["two", "beta", _fmt_num(alpha_star)] + row for row in
             _curve_rows(two, fl, b_grid, replicates=cs["replicates"], seed=cs["seed"],
                         alpha=alpha_star, stream=(1,))]
    _write_csv(out, ["stage", "variable", "alpha_fixed"] + CURVE_COLUMNS, rows)
    return out


def reference_text() -> str:
    """Markdown reference of every config key and its default."""
    out = ["# screenopt configuration reference", ""]
    for name, keys in SCHEMA.items():
        out += [f"## [{name}]", "", "| key | default | meaning |", "|---|---|---|"]
        for k, key in keys.items():
            d = key.default
            d = ", ".join(map(str, d)) if isinstance(d, list) else ("" if d is None else d)
            out.append(f"| `{k}` | `{d}` | {key.help} |")
        out.append("")
    return "\n".join(out)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: Optional[Path]):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="screenopt",
        description="Threshold design for FACS-sorted pooled RNAi screens.",
        epilog="SCREENOPT_THREADS caps simulation worker threads (default: all cores). "
               "Run 'screenopt reference' for every config key and default.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "curve": "discovery probability over an alpha grid (CSV)",
        "optimize": "optimal threshold(s) (JSON)",
        "simulate": "Monte Carlo estimate at one threshold (JSON)",
        "compare-stages": "single- vs two-stage curves (CSV)",
    }
    for name, h in helps.items():
        sp = sub.add_parser(name, help=h, description=h)
        sp.add_argument("--config", required=True, help="INI config file")
        sp.add_argument("--seed", type=int, help="override the section's master seed")
        sp.add_argument("--replicates", type=int, help="override the section's replicates")
        sp.add_argument("--out", type=Path,
                        help="output path (CSV commands require it; JSON goes to stdout if absent)")
    ref = sub.add_parser("reference", help="print the config key reference (markdown)")
    ref.add_argument("--out", type=Path)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reference":
        _emit(reference_text(), args.out)
        return 0
    try:
        rc = load_config(args.config)
        sec = rc.section(COMMAND_SECTION[args.command])
        if args.seed is not None:
            sec["seed"] = args.seed
        if args.replicates is not None:
            if args.replicates < 0:
                raise ConfigError("--replicates must be >= 0", rc.path)
            sec["replicates"] = args.replicates
        if args.command in ("curve", "compare-stages") and args.out is None:
            raise ConfigError(f"{args.command} needs --out", rc.path)
        if args.command == "curve":
            for path in cmd_curve(rc, args.out):
                print(path)
        elif args.command == "compare-stages":
            print(cmd_compare_stages(rc, args.out))
        elif args.command == "optimize":
            _emit(_dump_json(cmd_optimize(rc)), args.out)
        else:
            if sec["replicates"] < 1:
                raise ConfigError("simulate needs replicates >= 1", rc.path)
            _emit(_dump_json(cmd_simulate(rc)), args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleConstraintError as exc:
        _emit(_dump_json({"error": {"type": "infeasible_constraint", "message": str(exc)}}),
              args.out if args.command == "optimize" else None)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SelectionEmptyError as exc:
        _emit(_dump_json({"error": {"type": "selection_empty", "message": str(exc)}}),
              args.out if args.command == "optimize" else None)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
