"""Command-line interface: figure-style sweeps as CSV plus a JSON run manifest.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence
(or failed validation).  All diagnostics go to stderr; CSV files contain data
only and are bit-identical for a fixed seed and configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, bell, validate
from .counting import FixedPairs, Poisson
from .detectors import PerfectStep, SmoothStep, parse_response
from .optimize import (
    NoViolation,
    Scenario,
    noise_resistance,
    smooth_threshold_no_violation_check,
    sweep,
    verify_small_phi_family,
)


class ConfigError(Exception):
    pass


def parse_grid(text: str):
    """``a..b`` inclusive integer range, ``a:b:steps`` float grid, or a scalar."""
    text = text.strip()
    if ".." in text:
        lo_s, _, hi_s = text.partition("..")
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError as exc:
            raise ConfigError(f"bad integer range {text!r}: {exc}") from exc
        if hi < lo:
            raise ConfigError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"float grid must be a:b:steps, got {text!r}")
        try:
            lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"bad float grid {text!r}: {exc}") from exc
        if steps < 1:
            raise ConfigError(f"grid needs at least one step, got {text!r}")
        return [float(v) for v in np.linspace(lo, hi, steps)]
    try:
        return [int(text)]
    except ValueError:
        pass
    try:
        return [float(text)]
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}") from exc


def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".12g")
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row width {len(row)} != header width {len(header)}")
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(csv_path: Path, subcommand: str, config: dict, wall_time: float, n_rows: int) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "version": __version__,
        "wall_time_s": wall_time,
        "rows": n_rows,
        "csv": csv_path.name,
    }
    Path(str(csv_path) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str) -> dict:
    """Flat key=value file; keys use the long option names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def _response_for(args, n: int):
    if getattr(args, "response", None):
        return parse_response(args.response)
    eta = getattr(args, "eta", None)
    if eta is not None:
        return SmoothStep(n, eta)
    return PerfectStep(n)


def _theta_grid(args) -> list[float]:
    if getattr(args, "theta", None):
        return [float(v) for v in parse_grid(args.theta)]
    steps = getattr(args, "theta_steps", 100)
    return [float(v) for v in np.linspace(0.0, math.pi / 4.0, steps)]


def _warn(message: str) -> None:
    print(f"bellthresh: {message}", file=sys.stderr)


# --- subcommand implementations -------------------------------------------


def _cmd_fig2(args) -> tuple[list[str], list[list], bool]:
    return _ch_theta_sweep(args, tie_m_to_n=True, include_m=False)


def _cmd_fig3(args) -> tuple[list[str], list[list], bool]:
    return _ch_theta_sweep(args, tie_m_to_n=False, include_m=True)


def _ch_theta_sweep(args, *, tie_m_to_n: bool, include_m: bool):
    thetas = _theta_grid(args)
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        m = n if tie_m_to_n else int(args.m)
        scenario = Scenario(
            state_family="pure",
            source=FixedPairs(m),
            response_a=_response_for(args, n),
            functional="ch",
        )
        points = sweep(
            scenario,
            "theta",
            thetas,
            seed=args.seed * 100003 + n,
            jobs=args.jobs,
            with_noise=not args.no_noise,
            options={"noise_opt": {"probe_random_starts": 4}},
        )
        for point in points:
            if point.result is None:
                _warn(f"point n={n} theta={point.value}: {point.error}")
                ok = False
                continue
            if not point.result.diagnostics.converged:
                ok = False
            row = [point.value, n]
            if include_m:
                row.append(m)
            row.extend([point.result.best_value, point.result.noise_resistance])
            rows.append(row)
    header = ["theta", "n"] + (["m"] if include_m else []) + ["ch_value", "noise_resistance"]
    return header, rows, ok


def _cmd_fig4(args) -> tuple[list[str], list[list], bool]:
    mus = [float(v) for v in parse_grid(args.mu)]
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        scenario = Scenario(
            state_family="pure",
            source=Poisson.auto(mus[0]),
            response_a=_response_for(args, n),
            functional="ch",
        )
        points = sweep(
            scenario,
            "mu",
            mus,
            seed=args.seed * 100003 + n,
            jobs=args.jobs,
            with_noise=not args.no_noise,
            options={
                "theta_opt": {"golden_tol": 1e-3, "probe_random_starts": 4},
                "noise_opt": {"probe_random_starts": 4},
            },
        )
        for point in points:
            if point.result is None:
                _warn(f"point n={n} mu={point.value}: {point.error}")
                ok = False
                continue
            if not point.result.diagnostics.converged:
                ok = False
            rows.append(
                [
                    point.value,
                    n,
                    point.result.optimal_theta,
                    point.result.best_value,
                    point.result.noise_resistance,
                ]
            )
    return ["mu", "n", "theta_opt", "ch_value", "noise_resistance"], rows, ok


def _cmd_fig5(args) -> tuple[list[str], list[list], bool]:
    thetas = _theta_grid(args)
    mu = float(args.mu)
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        response = _response_for(args, n)
        for source_name, source in (("fixed", FixedPairs(n)), ("poisson", Poisson.auto(mu))):
            scenario = Scenario(
                state_family="pure",
                source=source,
                response_a=response,
                functional="chsh_ps",
            )
            points = sweep(
                scenario,
                "theta",
                thetas,
                seed=args.seed * 100003 + 2 * n + (source_name == "poisson"),
                jobs=args.jobs,
            )
            for point in points:
                if point.result is None:
                    _warn(f"point n={n} source={source_name} theta={point.value}: {point.error}")
                    ok = False
                    continue
                if not point.result.diagnostics.converged:
                    ok = False
                rows.append(
                    [
                        point.value,
                        n,
                        source_name,
                        mu if source_name == "poisson" else None,
                        point.result.best_value,
                        point.result.local_bound,
                        point.result.violates,
                    ]
                )
    return ["theta", "n", "source", "mu", "s_value", "local_bound", "violated"], rows, ok


def _cmd_local_bound(args) -> tuple[list[str], list[list], bool]:
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        value, _mixture, diag = bell.local_bound_numeric(n, seed=args.seed)
        closed = bell.local_bound_closed_form(n)
        ok &= diag["converged"]
        if value > closed + 1e-4:
            _warn(f"n={n}: numeric bound {value} exceeds the conjectured bound {closed}")
            ok = False
        rows.append([n, closed, value, diag["best_two_spread"], diag["converged"]])
    return ["n", "bound_closed", "bound_numeric", "spread", "converged"], rows, ok


def _cmd_noise(args) -> tuple[list[str], list[list], bool]:
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        source = Poisson.auto(float(args.mu)) if args.mu is not None else FixedPairs(int(args.m) if args.m else n)
        scenario = Scenario(
            state_family=args.state,
            source=source,
            response_a=_response_for(args, n),
            functional=args.functional.replace("-", "_"),
        )
        theta = float(args.theta) if args.theta else 0.0
        try:
            w_crit = noise_resistance(scenario, theta, seed=args.seed * 100003 + n)
            rows.append([n, args.functional, theta, w_crit, 1.0 - w_crit])
        except NoViolation as exc:
            _warn(f"n={n}: {exc}")
            rows.append([n, args.functional, theta, None, None])
    return ["n", "functional", "theta", "w_critical", "noise_resistance"], rows, ok


def _cmd_small_phi(args) -> tuple[list[str], list[list], bool]:
    phis = [float(v) for v in parse_grid(args.phi)]
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        report = verify_small_phi_family(n, phis)
        if report.relative_error > 0.05:
            _warn(
                f"n={n}: fitted quadratic coefficient {report.fitted_coefficient} "
                f"deviates {report.relative_error:.1%} from {report.predicted_coefficient}"
            )
            ok = False
        for phi, ch in report.rows:
            rows.append([n, phi, ch, report.predicted_coefficient, report.fitted_coefficient])
    return ["n", "phi", "ch_value", "predicted_coefficient", "fitted_coefficient"], rows, ok


def _cmd_smooth_check(args) -> tuple[list[str], list[list], bool]:
    etas = [float(v) for v in parse_grid(args.eta)]
    rows = []
    ok = True
    for n in parse_grid(args.n):
        n = int(n)
        for m in parse_grid(args.m):
            m = int(m)
            for row in smooth_threshold_no_violation_check(n, m, etas, seed=args.seed):
                ok &= row.converged
                rows.append(
                    [row.n, row.m, row.eta, row.best_value, row.bound, row.margin, row.theta_opt]
                )
    return ["n", "m", "eta", "s_max", "bound", "margin", "theta_opt"], rows, ok


def _cmd_validate(args) -> tuple[list[str], list[list], bool]:
    checks = validate.run_checks(max_m=args.max_m, seed=args.seed)
    rows = []
    ok = True
    for name, passed, detail in checks:
        print(f"{'ok  ' if passed else 'FAIL'} {name}: {detail}", file=sys.stderr)
        ok &= passed
        rows.append([name, passed, detail])
    return ["check", "passed", "detail"], rows, ok


def _cmd_sweep(args) -> tuple[list[str], list[list], bool]:
    grid = [float(v) for v in parse_grid(args.grid)]
    n = int(args.n) if args.n else 1
    if args.mu is not None:
        source = Poisson.auto(float(args.mu))
    else:
        source = FixedPairs(int(args.m) if args.m else n)
    scenario = Scenario(
        state_family=args.state,
        source=source,
        response_a=_response_for(args, n),
        functional=args.functional.replace("-", "_"),
    )
    theta = float(args.theta) if args.theta else None
    points = sweep(
        scenario,
        args.param,
        grid,
        theta=theta,
        seed=args.seed,
        jobs=args.jobs,
        with_noise=args.noise,
    )
    rows = []
    ok = True
    for point in points:
        if point.result is None:
            _warn(f"{args.param}={point.value}: {point.error}")
            ok = False
            continue
        if not point.result.diagnostics.converged:
            ok = False
        rows.append(
            [
                args.param,
                point.value,
                point.theta if point.theta is not None else point.result.optimal_theta,
                point.result.best_value,
                point.result.local_bound,
                point.result.bound_is_heuristic,
                point.result.violates,
                point.result.diagnostics.converged,
                point.result.critical_weight,
                point.result.noise_resistance,
            ]
        )
    header = [
        "parameter",
        "value",
        "theta",
        "best_value",
        "local_bound",
        "bound_is_heuristic",
        "violated",
        "converged",
        "w_critical",
        "noise_resistance",
    ]
    return header, rows, ok


# --- argument plumbing ------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--jobs", type=int, default=1)
    sub.add_argument("-o", "--output", default=None, help="CSV output path")
    sub.add_argument("--config", default=None, help="flat key=value config file")


_FUNCTIONALS = ("ch", "chsh-ps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellthresh",
        description="Bell inequality violations with threshold photon detectors",
    )
    parser.add_argument("--version", action="version", version=f"bellthresh {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("fig2", help="CH violation and noise resistance vs theta, source with M=N pairs")
    p.add_argument("--n", default="1..5")
    p.add_argument("--theta-steps", type=int, default=100)
    p.add_argument("--eta", type=float, default=None, help="smooth-step efficiency at threshold")
    p.add_argument("--no-noise", action="store_true", help="skip the noise-resistance bisection")
    _add_common(p)
    p.set_defaults(func=_cmd_fig2)

    p = subs.add_parser("fig3", help="CH violation and noise resistance vs theta at fixed M")
    p.add_argument("--n", default="1..7")
    p.add_argument("--m", type=int, default=7)
    p.add_argument("--theta-steps", type=int, default=100)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--no-noise", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_fig3)

    p = subs.add_parser("fig4", help="CH violation vs mean pair number of a Poisson source")
    p.add_argument("--n", default="5")
    p.add_argument("--mu", default="1..20")
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--no-noise", action="store_true")
    _add_common(p)
    p.set_defaults(func=_cmd_fig4)

    p = subs.add_parser("fig5", help="post-selected CHSH vs theta: M=N source versus Poisson")
    p.add_argument("--n", default="2..4")
    p.add_argument("--mu", type=float, default=0.1)
    p.add_argument("--theta-steps", type=int, default=100)
    p.add_argument("--eta", type=float, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_fig5)

    p = subs.add_parser("local-bound", help="numeric local bound vs the closed form")
    p.add_argument("--n", default="1..4")
    _add_common(p)
    p.set_defaults(func=_cmd_local_bound)

    p = subs.add_parser("noise", help="critical noise weight for one configuration")
    p.add_argument("--n", default="1..5")
    p.add_argument("--m", type=int, default=None, help="fixed pair count (default: N)")
    p.add_argument("--mu", type=float, default=None, help="Poisson mean (overrides --m)")
    p.add_argument("--theta", default=None)
    p.add_argument("--state", choices=("pure", "singlet"), default="singlet")
    p.add_argument("--functional", choices=_FUNCTIONALS, default="chsh-ps")
    p.add_argument("--response", default=None, help="step:N | smooth:N:ETA | scurve:PATH")
    _add_common(p)
    p.set_defaults(func=_cmd_noise)

    p = subs.add_parser("small-phi", help="CH on the analytic small-angle settings family")
    p.add_argument("--n", default="1..10")
    p.add_argument("--phi", default="0.005:0.03:8")
    _add_common(p)
    p.set_defaults(func=_cmd_small_phi)

    p = subs.add_parser("smooth-check", help="post-selected CHSH for smooth thresholds with M > N")
    p.add_argument("--n", default="2")
    p.add_argument("--m", default="3")
    p.add_argument("--eta", default="0.1:0.8:4")
    _add_common(p)
    p.set_defaults(func=_cmd_smooth_check)

    p = subs.add_parser("validate", help="run the oracle-equivalence and closed-form self checks")
    p.add_argument("--max-m", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=_cmd_validate)

    p = subs.add_parser("sweep", help="generic single-parameter sweep")
    p.add_argument("--param", choices=("theta", "n", "mu", "m", "eta"), required=True)
    p.add_argument("--grid", required=True, help="a..b integer range or a:b:steps float grid")
    p.add_argument("--n", default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--theta", default=None)
    p.add_argument("--state", choices=("pure", "singlet"), default="pure")
    p.add_argument("--functional", choices=_FUNCTIONALS, default="ch")
    p.add_argument("--response", default=None)
    p.add_argument("--noise", action="store_true", help="also bisect the noise resistance")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file values as defaults: flags > config file > defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ConfigError("--config requires a path")
    values = _load_config_file(argv[idx + 1])
    if not argv or argv[0].startswith("-"):
        raise ConfigError("--config requires a subcommand before it")
    sub_actions = next(
        a for a in parser._actions if isinstance(a, argparse._SubParsersAction)
    )
    sub = sub_actions.choices.get(argv[0])
    if sub is None:
        raise ConfigError(f"unknown subcommand {argv[0]!r}")
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ConfigError(f"unknown config key {key!r} for subcommand {argv[0]!r}")
        action = next(a for a in sub._actions if a.dest == dest)
        if action.type is int:
            defaults[dest] = int(value)
        elif action.type is float:
            defaults[dest] = float(value)
        elif isinstance(action, (argparse._StoreTrueAction,)):
            defaults[dest] = value.lower() in ("1", "true", "yes")
        else:
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return argv


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        start = time.time()
        header, rows, converged = args.func(args)
    except ConfigError as exc:
        print(f"bellthresh: configuration error: {exc}", file=sys.stderr)
        return 2

    if args.output:
        csv_path = Path(args.output)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(csv_path, header, rows)
        config = {
            k: v for k, v in sorted(vars(args).items()) if k not in ("func",) and v is not None
        }
        write_manifest(csv_path, args.subcommand, config, time.time() - start, len(rows))
    elif args.subcommand != "validate":
        print(",".join(header))
        for row in rows:
            print(",".join(_fmt(v) for v in row))

    return 0 if converged else 3


if __name__ == "__main__":
    sys.exit(main())
