"""
Command-line scenario runner.

    simulate run --scenario oh_1e --solver closed --out out/
    simulate run --config configs/hbond_reduced.yaml --reduce 0.2 --compare-full
    simulate validate configs/oh_1e_lindblad.yaml
    simulate list-scenarios

Exit codes: 0 success, 2 configuration error, 3 dimension cap exceeded,
4 solver instability.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from . import dynamics as D
from . import models as M
from . import reduction as R
from .hilbert import EmptySpaceError, SpaceTooLargeError
from .svgplot import line_plot

log = logging.getLogger("cavchem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIM = 3
EXIT_SOLVER = 4

SOLVERS = ("closed", "lindblad")
RUN_KEYS = ("solver", "reduce", "compare_full", "pilot")
REDUCED_SUFFIX = " [reduced]"

DESCRIPTIONS = {
    "oh_1e": "one electron in an O-H double well, JC-coupled to a cavity mode",
    "oh_2e": "two opposite-spin electrons in an O-H double well, one cavity mode per spin",
    "phonon_grid": "atoms hopping on a k x k grid, phonon-assisted covalent bonds",
    "hbond": "hydrogen bond between -OH and a second oxygen (photon, spin and phonon modes)",
}


class ConfigParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class RunManifest:
    config_path: Optional[str]
    scenario: str
    solver: str
    keep_fraction: Optional[float]
    compare_full: bool
    out_dir: Path
    pilot: str = "closed"
    plot: bool = True
    deterministic: bool = True


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a YAML config; syntax errors carry line/column (1-based)."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        col = mark.column + 1 if mark is not None else None
        raise ConfigParseError(f"{path}: {exc.problem or exc}", line, col) from None
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"{path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigParseError(f"{path}: top level must be a mapping", 1, 1)
    return data


def _merge_overrides(data: dict[str, Any], args: argparse.Namespace) -> dict[str, Any]:
    data = dict(data)
    run = dict(data.pop("run", {}) or {})
    bad = set(run) - set(RUN_KEYS)
    if bad:
        raise M.ConfigError(f"run.{sorted(bad)[0]}", "unknown key")
    if getattr(args, "scenario", None):
        if "scenario" in data and data["scenario"] != args.scenario:
            # switching scenario invalidates scenario-specific keys
            data = {k: v for k, v in data.items() if k in ("horizon", "samples", "dt")}
        data["scenario"] = args.scenario
    for key in ("horizon", "samples", "dt"):
        val = getattr(args, key, None)
        if val is not None:
            data[key] = val
    if getattr(args, "channel", None):
        data["channels"] = list(args.channel)
    for key, attr in (("solver", "solver"), ("reduce", "reduce"), ("pilot", "pilot")):
        val = getattr(args, attr, None)
        if val is not None:
            run[key] = val
    if getattr(args, "compare_full", False):
        run["compare_full"] = True
    data["run"] = run
    return data


def resolve(args: argparse.Namespace) -> tuple[M.ScenarioConfig, dict[str, Any]]:
    data = load_config_file(args.config) if getattr(args, "config", None) else {}
    data = _merge_overrides(data, args)
    run = data.pop("run")
    if "scenario" not in data:
        raise M.ConfigError("scenario", "missing (give --scenario or a config file)")
    cfg = M.config_from_dict(data)
    solver = run.get("solver", "lindblad" if cfg.channels else "closed")
    if solver not in SOLVERS:
        raise M.ConfigError("run.solver", f"must be one of {SOLVERS}, got {solver!r}")
    reduce_ = run.get("reduce")
    if reduce_ is not None:
        if isinstance(reduce_, bool) or not isinstance(reduce_, (int, float)) or not 0 < reduce_ <= 1:
            raise M.ConfigError("run.reduce", f"keep fraction must lie in (0, 1], got {reduce_!r}")
        reduce_ = float(reduce_)
    pilot = run.get("pilot", "closed")
    if pilot not in SOLVERS:
        raise M.ConfigError("run.pilot", f"must be one of {SOLVERS}, got {pilot!r}")
    settings = {
        "solver": solver,
        "reduce": reduce_,
        "compare_full": bool(run.get("compare_full", False)),
        "pilot": pilot,
    }
    return cfg, settings


def simulate(bundle: M.ScenarioBundle, solver: str) -> D.TimeSeries:
    cfg = bundle.config
    times = cfg.times
    if solver == "closed":
        traj = D.evolve_closed(bundle.hamiltonian, bundle.initial, times, hbar=cfg.coupling.hbar)
        return D.observe(traj, bundle.observables)
    traj = D.evolve_lindblad(
        bundle.hamiltonian,
        bundle.channels,
        bundle.initial,
        times,
        dt=cfg.dt,
        hbar=cfg.coupling.hbar,
        omega=cfg.coupling.omega,
        observables=bundle.observables,
        store_states=False,
    )
    return traj.series


def stable_value(values: np.ndarray, tail: float = 0.1) -> float:
    """Mean over the final ``tail`` fraction of samples."""
    n = max(1, int(round(tail * values.size)))
    return float(np.mean(values[-n:]))


def _g15(v: float) -> float:
    return float(f"{v:.15g}")


def _csv_text(times: np.ndarray, columns: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *columns])
    for k, t in enumerate(times):
        w.writerow([f"{t:.12g}", *(f"{col[k]:.12g}" for col in columns.values())])
    return buf.getvalue()


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def execute(cfg: M.ScenarioConfig, manifest: RunManifest) -> dict[str, Any]:
    """Run the scenario and write artifacts; returns a summary dict."""
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    bundle = M.build(cfg)
    columns: dict[str, np.ndarray] = {}
    summary: dict[str, Any] = {"dim": bundle.dim}

    reduction_report = None
    if manifest.keep_fraction is None:
        series = simulate(bundle, manifest.solver)
        columns.update(series.values)
    else:
        r, reduced, report = R.reduce(bundle, manifest.keep_fraction, pilot_solver=manifest.pilot)
        red_series = simulate(reduced, manifest.solver)
        if manifest.compare_full:
            full_series = simulate(bundle, manifest.solver)
            columns.update(full_series.values)
            columns.update({lab + REDUCED_SUFFIX: v for lab, v in red_series.values.items()})
            comparison = {}
            for lab, full_v in full_series.values.items():
                red_v = red_series[lab]
                sf, sr = stable_value(full_v), stable_value(red_v)
                corr = float(np.corrcoef(full_v, red_v)[0, 1]) if np.std(full_v) > 0 and np.std(red_v) > 0 else None
                comparison[lab] = {
                    "stable_full": _g15(sf),
                    "stable_reduced": _g15(sr),
                    "stable_gap": _g15(sr - sf),
                    "pearson": None if corr is None else _g15(corr),
                    "max_abs_diff": _g15(float(np.max(np.abs(red_v - full_v)))),
                }
            report["comparison"] = comparison
        else:
            columns.update(red_series.values)
            report["stable_reduced"] = {lab: _g15(stable_value(v)) for lab, v in red_series.values.items()}
        reduction_report = report
        summary["dim_kept"] = r.dim

    times = cfg.times
    (out / "series.csv").write_text(_csv_text(times, columns))
    meta = {
        "version": __version__,
        "scenario": cfg.scenario,
        "solver": manifest.solver,
        "dim": bundle.dim,
        "config": M.config_to_dict(cfg),
        "reduction": None if manifest.keep_fraction is None else {
            "keep_fraction": manifest.keep_fraction,
            "compare_full": manifest.compare_full,
            "pilot": manifest.pilot,
        },
        "tolerances": {
            "state_norm": D.NORM_TOL,
            "trace_drift_limit": D.TRACE_DRIFT_LIMIT,
            "imaginary_residue": D.IMAG_TOL,
            "dt": cfg.dt if cfg.dt is not None else 0.01 / cfg.coupling.omega,
        },
        "deterministic": True,
    }
    doc = {
        "metadata": meta,
        "times": [_g15(t) for t in times],
        "series": {lab: [_g15(v) for v in col] for lab, col in columns.items()},
    }
    (out / "series.json").write_text(_dump_json(doc))
    if reduction_report is not None:
        (out / "reduction.json").write_text(_dump_json(reduction_report))
    if manifest.plot:
        base = {k.removesuffix(REDUCED_SUFFIX) for k in columns}
        ylabel = "probability" if base <= set(bundle.probabilities) else "expectation value"
        (out / "plot.svg").write_text(
            line_plot(times, columns, xlabel="time", ylabel=ylabel, title=f"{cfg.scenario} ({manifest.solver})")
        )
    summary["outputs"] = sorted(p.name for p in out.iterdir())
    return summary


# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=M.SCENARIOS)
    p.add_argument("--horizon", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--channel", action="append",
                   help="decay channel: 'photon-escape' or a mode label (repeatable)")
    p.add_argument("--solver", choices=SOLVERS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simulate", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write series.csv/json, plot.svg")
    run.add_argument("--config", help="YAML scenario config")
    _add_common(run)
    run.add_argument("--reduce", type=float, metavar="FRACTION",
                     help="keep fraction for amplitude-based state selection")
    run.add_argument("--compare-full", action="store_true",
                     help="with --reduce, also run the full space and write both curves")
    run.add_argument("--pilot", choices=SOLVERS, help="solver for the selection pilot run")
    run.add_argument("--out", default="out", help="output directory (default: out)")
    run.add_argument("--no-plot", action="store_true")

    val = sub.add_parser("validate", help="check a config without simulating")
    val.add_argument("config")
    _add_common(val)

    sub.add_parser("list-scenarios", help="list available scenarios")
    return parser


def _cmd_validate(args) -> int:
    if not Path(args.config).exists():
        print(f"error: {args.config} does not exist", file=sys.stderr)
        return EXIT_CONFIG
    cfg, settings = resolve(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        msg = cfg.coupling.check_rwa()
    if msg:
        print(f"warning: {msg}", file=sys.stderr)
    bundle = M.build(cfg)
    print(f"OK, dim={bundle.dim} scenario={cfg.scenario} solver={settings['solver']} "
          f"g/omega={cfg.coupling.rwa_ratio:.3g}")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg, settings = resolve(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        msg = cfg.coupling.check_rwa()
    if msg:
        print(f"warning: {msg}", file=sys.stderr)
    if settings["compare_full"] and settings["reduce"] is None:
        raise M.ConfigError("run.compare_full", "requires a keep fraction (--reduce)")
    manifest = RunManifest(
        config_path=args.config,
        scenario=cfg.scenario,
        solver=settings["solver"],
        keep_fraction=settings["reduce"],
        compare_full=settings["compare_full"],
        out_dir=Path(args.out),
        pilot=settings["pilot"],
        plot=not args.no_plot,
    )
    summary = execute(cfg, manifest)
    line = f"OK, dim={summary['dim']}"
    if "dim_kept" in summary:
        line += f" dim_kept={summary['dim_kept']}"
    print(f"{line} -> {manifest.out_dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-scenarios":
            for name in M.SCENARIOS:
                print(f"{name:12s} {DESCRIPTIONS[name]}")
            return EXIT_OK
        if args.command == "validate":
            return _cmd_validate(args)
        return _cmd_run(args)
    except ConfigParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (M.ConfigError, EmptySpaceError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpaceTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIM
    except D.LindbladInstabilityError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
