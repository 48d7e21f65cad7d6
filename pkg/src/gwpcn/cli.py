"""Command-line driver: ``gwpcn solve|sweep|figure|certify``.

Configs are TOML with a ``[network]`` table, an array of ``[[users]]`` and an
optional ``[sweep]`` table. Unknown keys are rejected. Quantities use the
usual engineering units (dBm, dB, meters, joules) and are converted to SI
once, here.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import channel
from .experiments import (
    DESK_REALIZATIONS,
    FIGURES,
    PROBLEMS,
    SUM_PROBLEMS,
    SWEEP_PARAMS,
    ExperimentSpec,
    Scenario,
    SweepResult,
    figure_preset,
    problem_instance,
    run_sweep,
    solve_prepared,
)
from .model import (
    ChannelRealization,
    HeteroAllocation,
    InvalidAllocationError,
    NetworkInstance,
    SolveReport,
)
from .oracle import MAX_USERS, GridSpec, certify, grid_best
from .units_metrics import db_to_linear, dbm_to_watts, noise_power

log = logging.getLogger("gwpcn")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2

SWEEP_HEADER = (
    "swept_param",
    "value",
    "problem",
    "objective",
    "mean_sum_rate_bps_hz",
    "mean_min_rate_bps_hz",
    "mean_jfi",
    "realizations",
    "seed",
    "failures",
)

_NETWORK_KEYS = {
    "p_b_dbm": True,
    "sigma2_dbm_hz": True,
    "bandwidth_hz": True,
    "gamma_db": True,
    "e_max_joules": False,
    "beta": False,
    "pathloss_const": False,
    "fading": False,
}
_USER_KEYS = {
    "d_meters": True,
    "eta": False,
    "e_budget_joules": False,
    "type": False,
    "h_gain": False,
    "g_gain": False,
}
_SWEEP_KEYS = {
    "param": True,
    "values": True,
    "realizations": False,
    "seed": False,
    "problems": False,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    """A parsed config: the scenario, optional pinned gains and optional sweep."""

    scenario: Scenario
    gains: ChannelRealization | None = None
    sweep: ExperimentSpec | None = None

    def instance(self, seed: int = 0) -> NetworkInstance:
        """The network for single solves; fading is drawn from ``seed`` unless pinned."""
        scen = self.scenario
        if self.gains is None:
            return scen.instances(seed, 1)[0]
        return NetworkInstance(
            scen.users(),
            self.gains,
            dbm_to_watts(scen.p_b_dbm),
            db_to_linear(scen.gamma_db),
            noise_power(scen.sigma2_dbm_hz, scen.bandwidth_hz),
            scen.e_max,
        )


# -- parsing ----------------------------------------------------------------


def _check_keys(table: dict, allowed: dict, where: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    missing = [k for k, required in allowed.items() if required and k not in table]
    if missing:
        raise ConfigError(f"missing required key(s) in [{where}]: {', '.join(missing)}")


def _number(table: dict, key: str, where: str, default=None) -> float | None:
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be a finite number, got {v!r}")
    return float(v)


def _in_range(value, where: str, *, lo=None, hi=None, lo_open=False, hi_open=False):
    if value is None:
        return value
    bad = (
        (lo is not None and (value < lo or (lo_open and value == lo)))
        or (hi is not None and (value > hi or (hi_open and value == hi)))
    )
    if bad:
        left = "(" if lo_open else "["
        right = ")" if hi_open else "]"
        raise ConfigError(f"{where} must lie in {left}{lo}, {hi}{right}, got {value}")
    return value


def _integer(table: dict, key: str, where: str, default: int) -> int:
    v = table.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {v!r}")
    return v


def _apply_overrides(doc: dict, overrides) -> dict:
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        parts = key.strip().split(".")
        node = doc
        for i, part in enumerate(parts[:-1]):
            if isinstance(node, list):
                if not part.isdigit() or int(part) >= len(node):
                    raise ConfigError(f"override {key!r}: no entry {part!r}")
                node = node[int(part)]
            else:
                node = node.setdefault(part, [] if parts[i + 1].isdigit() else {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} does not name a key")
        node[parts[-1]] = value
    return doc


def parse_config(path, overrides=()) -> Config:
    """Read and validate a TOML config; raises :class:`ConfigError`."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(_apply_overrides(doc, overrides))


def config_from_dict(doc: dict) -> Config:
    unknown = sorted(set(doc) - {"network", "users", "sweep"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    if "network" not in doc:
        raise ConfigError("missing [network] section")
    net = doc["network"]
    _check_keys(net, _NETWORK_KEYS, "network")
    p_b_dbm = _number(net, "p_b_dbm", "network")
    sigma2 = _number(net, "sigma2_dbm_hz", "network")
    bandwidth = _in_range(_number(net, "bandwidth_hz", "network"), "network.bandwidth_hz", lo=0, lo_open=True)
    gamma_db = _in_range(_number(net, "gamma_db", "network"), "network.gamma_db", lo=0.0)
    e_max = _in_range(_number(net, "e_max_joules", "network"), "network.e_max_joules", lo=0, lo_open=True)
    beta = _in_range(_number(net, "beta", "network", 2.0), "network.beta", lo=2.0, hi=6.0)
    pl = _in_range(
        _number(net, "pathloss_const", "network", channel.PATHLOSS_CONST),
        "network.pathloss_const",
        lo=0,
        lo_open=True,
    )
    fading = _in_range(_number(net, "fading", "network"), "network.fading", lo=0.0)

    users = doc.get("users")
    if not isinstance(users, list) or not users:
        raise ConfigError("config needs at least one [[users]] entry")
    dists, etas, budgets, kinds, hs, gs = [], [], [], [], [], []
    for i, u in enumerate(users):
        where = f"users[{i}]"
        _check_keys(u, _USER_KEYS, where)
        dists.append(_in_range(_number(u, "d_meters", where), f"{where}.d_meters", lo=0, lo_open=True))
        kind = u.get("type", "harvest")
        if kind not in ("harvest", "legacy"):
            raise ConfigError(f"{where}.type must be 'harvest' or 'legacy', got {kind!r}")
        if kind == "harvest" and "eta" not in u:
            raise ConfigError(f"missing required key(s) in [{where}]: eta")
        # Legacy users never harvest, so their efficiency is a placeholder.
        etas.append(
            _in_range(_number(u, "eta", where, 0.5), f"{where}.eta", lo=0, hi=1, lo_open=True, hi_open=True)
        )
        budgets.append(_in_range(_number(u, "e_budget_joules", where, 0.0), f"{where}.e_budget_joules", lo=0.0))
        kinds.append(kind == "legacy")
        hs.append(_in_range(_number(u, "h_gain", where), f"{where}.h_gain", lo=0.0))
        gs.append(_in_range(_number(u, "g_gain", where), f"{where}.g_gain", lo=0.0))

    gains = None
    if any(g is not None for g in gs) or any(h is not None for h in hs):
        if any(g is None for g in gs):
            raise ConfigError("g_gain must be given for every user once any user pins gains")
        hs = [g if h is None else h for h, g in zip(hs, gs)]
        gains = ChannelRealization(h=hs, g=gs)
    declared = any("type" in u for u in users)
    try:
        scen = Scenario(
            distances=tuple(dists),
            etas=tuple(etas),
            e_budgets=tuple(budgets),
            legacy=tuple(kinds) if declared else None,
            p_b_dbm=p_b_dbm,
            beta=beta,
            e_max=e_max,
            gamma_db=gamma_db,
            sigma2_dbm_hz=sigma2,
            bandwidth_hz=bandwidth,
            pathloss_const=pl,
            fading=fading,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    spec = None
    if "sweep" in doc:
        sw = doc["sweep"]
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        if gains is not None:
            raise ConfigError("pinned gains (h_gain/g_gain) cannot be swept; use network.fading")
        param = sw["param"]
        if param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep.param must be one of {SWEEP_PARAMS}, got {param!r}")
        values = sw["values"]
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values must be a non-empty array")
        for v in values:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sweep.values must be numbers, got {v!r}")
        problems = sw.get("problems", list(SUM_PROBLEMS))
        if not isinstance(problems, list) or not all(isinstance(p, str) for p in problems):
            raise ConfigError("sweep.problems must be an array of strings")
        bad = [p for p in problems if p.lower() not in PROBLEMS]
        if bad:
            raise ConfigError(f"unknown problem(s) in sweep.problems: {', '.join(bad)}")
        try:
            spec = ExperimentSpec(
                scenario="custom",
                swept_param=param,
                values=tuple(values),
                realizations=_integer(sw, "realizations", "sweep", DESK_REALIZATIONS),
                seed=_integer(sw, "seed", "sweep", 42),
                problems=tuple(problems),
                base=scen,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return Config(scen, gains, spec)


# -- output -----------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x!r}")
    return repr(x)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in result.rows:
        w.writerow(
            [
                result.swept_param,
                _fmt(r.value),
                r.problem,
                _fmt(r.objective),
                _fmt(r.mean_sum_rate),
                _fmt(r.mean_min_rate),
                _fmt(r.mean_jfi),
                r.realizations,
                r.seed,
                r.failures,
            ]
        )
    return buf.getvalue()


def report_csv(report: SolveReport, legacy=None) -> str:
    """One summary row followed by the per-user allocation table."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    alloc = report.allocation
    w.writerow(
        ["problem", "objective", "sum_rate_bps_hz", "min_rate_bps_hz", "jfi", "tau0", "iterations", "converged", "flags"]
    )
    w.writerow(
        [
            report.problem,
            _fmt(report.objective),
            _fmt(report.sum_rate),
            _fmt(report.min_rate),
            _fmt(report.jfi),
            _fmt(alloc.tau0),
            report.iterations,
            str(report.converged).lower(),
            ";".join(report.flags),
        ]
    )
    w.writerow([])
    w.writerow(["user", "role", "tau", "energy_joules", "rate_bps_hz"])
    if isinstance(alloc, HeteroAllocation):
        # Harvesters spend what they collected; legacy users draw e_bar each.
        m = alloc.tau1.size
        energies = [None] * m + [alloc.e_bar] * alloc.tau2.size
        taus = list(alloc.tau1) + list(alloc.tau2)
        roles = ["harvest"] * m + ["legacy"] * alloc.tau2.size
    else:
        energies = list(alloc.energy)
        taus = list(alloc.tau)
        roles = ["generalized"] * len(taus)
    for i, (t, e, role, r) in enumerate(zip(taus, energies, roles, report.per_user_rate)):
        w.writerow([i, role, _fmt(t), "" if e is None else _fmt(e), _fmt(r)])
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def sweep_svg(result: SweepResult, title: str = "") -> str:
    """A self-contained line chart of objective vs swept value, one line per problem."""
    width, height = 640, 400
    left, right, top, bottom = 70, 170, 40, 50
    xs = sorted({float(r.value) for r in result.rows})
    ys = [r.objective for r in result.rows] or [0.0]
    x0, x1 = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1.0
    y0, y1 = min(0.0, min(ys)), max(ys) * 1.05 if max(ys) > 0 else 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * (width - left - right)

    def py(y):
        return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{py(y0):.2f}" x2="{width - right}" y2="{py(y0):.2f}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    for i in range(6):
        yv = y0 + (y1 - y0) * i / 5
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.2f}" text-anchor="end">{yv:.3g}</text>')
        out.append(
            f'<line x1="{left}" y1="{py(yv):.2f}" x2="{width - right}" y2="{py(yv):.2f}" stroke="#ddd"/>'
        )
    for xv in xs:
        out.append(f'<text x="{px(xv):.2f}" y="{height - bottom + 18}" text-anchor="middle">{xv:g}</text>')
    out.append(
        f'<text x="{(left + width - right) / 2:.1f}" y="{height - 10}" text-anchor="middle">'
        f"{result.swept_param}</text>"
    )
    out.append(
        f'<text x="18" y="{(top + height - bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 18 {(top + height - bottom) / 2:.1f})">objective (bits/s/Hz)</text>'
    )
    labels = list(dict.fromkeys(r.problem for r in result.rows))
    for n, label in enumerate(labels):
        color = _PALETTE[n % len(_PALETTE)]
        pts = [(px(float(r.value)), py(r.objective)) for r in result.series(label)]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.extend(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}"/>' for x, y in pts)
        ly = top + 16 * n
        out.append(f'<line x1="{width - right + 10}" y1="{ly}" x2="{width - right + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - right + 36}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sweep_manifest(spec: ExperimentSpec, result: SweepResult) -> str:
    doc = {
        "scenario": spec.scenario,
        "swept_param": spec.swept_param,
        "values": [float(v) for v in spec.values],
        "realizations": spec.realizations,
        "seed": spec.seed,
        "problems": list(spec.problems),
        "matched_e_max_joules": {
            repr(float(v)): caps for v, caps in sorted(result.matched_e_max.items())
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit_sweep(spec: ExperimentSpec, result: SweepResult, args) -> None:
    fmt = args.format
    if fmt in ("svg", "both") and not args.out:
        raise ConfigError("--format svg/both needs --out")
    csv_text = sweep_csv(result)
    if not args.out:
        sys.stdout.write(csv_text)
        return
    out = Path(args.out)
    if fmt in ("csv", "both"):
        out.write_text(csv_text)
        out.with_suffix(".manifest.json").write_text(sweep_manifest(spec, result))
    if fmt in ("svg", "both"):
        svg_path = out if fmt == "svg" else out.with_suffix(".svg")
        svg_path.write_text(sweep_svg(result, spec.scenario))


# -- commands ---------------------------------------------------------------


def _problem(name: str) -> str:
    p = name.lower().replace("-", "_")
    if p not in PROBLEMS:
        raise ConfigError(f"unknown problem {name!r}; expected one of {', '.join(PROBLEMS)}")
    return p


def _prepared(cfg: Config, problem: str, seed: int):
    inst = cfg.instance(seed)
    try:
        return problem_instance(problem, inst, cfg.scenario.legacy_mask)
    except ValueError as exc:
        raise ConfigError(f"cannot pose {problem} on this config: {exc}") from None


def _cmd_solve(args) -> int:
    cfg = parse_config(args.config, args.override)
    problem = _problem(args.problem)
    report = solve_prepared(problem, _prepared(cfg, problem, args.seed))
    text = report_csv(report)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config, args.override)
    if cfg.sweep is None:
        raise ConfigError("sweep needs a [sweep] section in the config")
    spec = cfg.sweep
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.realizations is not None:
        spec = replace(spec, realizations=args.realizations)
    result = run_sweep(spec)
    _emit_sweep(spec, result, args)
    return EXIT_OK


def _cmd_figure(args) -> int:
    if args.override:
        raise ConfigError("figure presets take no --override; write a config and use sweep")
    try:
        spec = figure_preset(args.name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.realizations is not None:
        spec = replace(spec, realizations=args.realizations)
    result = run_sweep(spec)
    _emit_sweep(spec, result, args)
    return EXIT_OK


def _cmd_certify(args) -> int:
    cfg = parse_config(args.config, args.override)
    problem = _problem(args.problem)
    if cfg.scenario.k > MAX_USERS:
        raise ConfigError(f"certify handles at most {MAX_USERS} users, config has {cfg.scenario.k}")
    prepared = _prepared(cfg, problem, args.seed)
    report = solve_prepared(problem, prepared)
    oracle = grid_best(problem, prepared, GridSpec())
    cert = certify(report, oracle, args.rel_tol, prepared)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["problem", "solver_objective", "oracle_objective", "margin", "grid_spacing", "passed"])
    w.writerow(
        [
            problem,
            _fmt(report.objective),
            _fmt(oracle.objective),
            _fmt(cert.margin),
            _fmt(oracle.residual),
            str(cert.passed).lower(),
        ]
    )
    sys.stdout.write(buf.getvalue())
    for v in cert.violations:
        log.error("%s", v)
    if not cert.passed:
        log.error("certification failed: margin %.3e at rel_tol %g", cert.margin, args.rel_tol)
        return EXIT_INVALID
    return EXIT_OK


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwpcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, problem=False, sweep=False):
        if config:
            p.add_argument("--config", required=True, help="TOML scenario file")
            p.add_argument(
                "--override", action="append", default=[], metavar="KEY=VALUE",
                help="set a config key, e.g. network.p_b_dbm=20 or users.0.eta=0.6",
            )
        if problem:
            p.add_argument("--problem", default="p1", help=f"one of {', '.join(PROBLEMS)}")
        p.add_argument("--seed", type=_nonneg_int, default=None if sweep else 0)
        p.add_argument("--out", help="output file (default: standard output)")
        if sweep:
            p.add_argument("--realizations", type=_pos_int)
            p.add_argument("--format", choices=("csv", "svg", "both"), default="csv")

    common(sub.add_parser("solve", help="solve one instance"), problem=True)
    common(sub.add_parser("sweep", help="run the [sweep] of a config"), sweep=True)
    fig = sub.add_parser("figure", help=f"run a preset: {', '.join(FIGURES)}")
    fig.add_argument("name")
    fig.add_argument("--override", action="append", default=[], help=argparse.SUPPRESS)
    common(fig, config=False, sweep=True)
    cert = sub.add_parser("certify", help="check a solver against the grid oracle (K <= 3)")
    common(cert, problem=True)
    cert.add_argument("--rel-tol", type=float, default=1e-3)
    return parser


def run(args) -> int:
    handlers = {"solve": _cmd_solve, "sweep": _cmd_sweep, "figure": _cmd_figure, "certify": _cmd_certify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except InvalidAllocationError as exc:
        log.error("invalid allocation: %s", exc)
        return EXIT_INVALID


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="gwpcn: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
