"""``kelly-lab`` command-line interface.

Every command is a pure function of its flags, the universe file and the
seed.  Tables go out as CSV with 12 significant digits, ``optimize`` writes
JSON.  Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys

import numpy as np

from . import condensation as cond
from .expectation import GaussHermite, MonteCarlo, default_method, growth_rate, universe_nodes
from .kelly import (ConvergenceError, SolverOptions, first_order_correction, kelly_constrained,
                    kelly_fraction_single, kelly_numerical, kelly_unconstrained, single_asset_numerical)
from .lef import LefError, lef_frontier, max_fully_invested_growth
from .markowitz import (DegenerateUniverse, approx_frontier, cml_sigma, constrained_frontier_point,
                        efficient_frontier, kelly_point, mv_fractions)
from .model import AssetUniverse, simulate_growth

EXIT_CONFIG = 2
EXIT_SOLVER = 3

FIG1_UNIVERSE = {"assets": [
    {"name": "a1", "m": 0.1, "D": 0.04},
    {"name": "a2", "m": 0.15, "D": 0.09},
    {"name": "a3", "m": 0.2, "D": 0.25},
]}


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer, str)):
        return str(x)
    x = float(x)
    return "" if math.isnan(x) else format(x, ".12g")


def write_csv(fh, header, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


@contextlib.contextmanager
def output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def load_universe(args) -> AssetUniverse:
    if args.universe is None:
        raise ConfigError("--universe is required")
    try:
        with open(args.universe) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.universe}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.universe}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return AssetUniverse.from_dict(data)
    except (ValueError, AttributeError) as exc:
        raise ConfigError(f"{args.universe}: {exc}") from exc


def expectation_method(args, n_assets: int):
    if args.method == "mc":
        if args.seed is None:
            raise ConfigError("--method mc needs --seed")
        return MonteCarlo(args.mc_samples, args.seed)
    if args.method == "quad":
        return GaussHermite(args.quad_order)
    try:
        return default_method(n_assets, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def require_seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"'{args.command}' is stochastic and needs --seed")
    if args.seed < 0:
        raise ConfigError("--seed must be non-negative")
    return args.seed


# --- commands ---------------------------------------------------------------------


def optimize_result(u: AssetUniverse, method) -> dict:
    kc = kelly_constrained(u)
    nodes = universe_nodes(u, method)
    num = kelly_numerical(u, SolverOptions(method=method), nodes=nodes)
    mu_K = float(num.fractions @ u.mu)
    try:
        mv = {"mu_P": mu_K, "fractions": mv_fractions(u, mu_K).tolist()}
    except (ValueError, DegenerateUniverse):
        mv = None
    try:
        kp = kelly_point(u)
        kp_out = {"mu_K": kp.mu_K, "sigma_K": kp.sigma_K, "active_set": list(kp.active_set)}
    except ValueError:
        kp_out = None
    out = kc.to_dict()
    out.update({
        # exact growth of the closed-form fractions reported at the top level
        "v": growth_rate(kc.fractions, u, nodes),
        "names": u.names,
        "unconstrained": kelly_unconstrained(u).tolist(),
        "numerical": {"fractions": num.fractions.tolist(), "v": num.v,
                      "residual": num.residual, "iterations": num.iterations},
        "mv": mv,
        "kelly_point": kp_out,
    })
    return out


def cmd_optimize(args) -> None:
    u = load_universe(args)
    res = optimize_result(u, expectation_method(args, len(u)))
    with output(args.out) as fh:
        json.dump(res, fh, indent=2)
        fh.write("\n")


def frontier_rows(u: AssetUniverse, n_points: int, method, no_short: bool):
    mu = np.linspace(u.mu.min(), u.mu.max(), n_points)
    try:
        ef = efficient_frontier(u, mu)
    except DegenerateUniverse:
        ef = np.full(n_points, math.nan)
    cml = cml_sigma(u, mu)
    con = [constrained_frontier_point(u, float(t)).sigma_P for t in mu]
    lef = lef_sigma_on(u, mu, n_points, method, no_short)
    return zip(mu, ef, cml, con, lef)


def lef_v_grid(u: AssetUniverse, n_points: int, method) -> np.ndarray:
    v_max, _ = max_fully_invested_growth(u, method)
    return np.linspace(u.m.min(), v_max, n_points)


def lef_sigma_on(u: AssetUniverse, mu, n_points, method, no_short) -> np.ndarray:
    """LEF sigma interpolated at the requested returns (blank outside its range)."""
    if len(u) == 1:
        return np.full(len(mu), math.nan)
    pts = lef_frontier(u, lef_v_grid(u, n_points, method), method, no_short)
    pm = np.array([p.point.mu_P for p in pts])
    ps = np.array([p.point.sigma_P for p in pts])
    order = np.argsort(pm)
    pm, ps = pm[order], ps[order]
    out = np.interp(mu, pm, ps)
    out[(mu < pm[0]) | (mu > pm[-1])] = math.nan
    return out


def cmd_frontier(args) -> None:
    u = load_universe(args)
    rows = frontier_rows(u, args.points, expectation_method(args, len(u)), args.no_short)
    with output(args.out) as fh:
        write_csv(fh, ["mu_P", "sigma_EF", "sigma_CML", "sigma_constrained", "sigma_LEF"], rows)


def lef_rows(u: AssetUniverse, n_points: int, method, no_short: bool):
    for p in lef_frontier(u, lef_v_grid(u, n_points, method), method, no_short):
        s = p.solution
        yield [s.v_P, p.point.mu_P, p.point.sigma_P, *s.fractions, s.gamma1, s.gamma2, s.nonphysical]


def cmd_lef(args) -> None:
    u = load_universe(args)
    method = expectation_method(args, len(u))
    header = ["v_P", "mu_P", "sigma_P", *[f"q_{i + 1}" for i in range(len(u))], "gamma1", "gamma2", "flag_nonphysical"]
    rows = list(lef_rows(u, args.points, method, args.no_short))
    with output(args.out) as fh:
        write_csv(fh, header, rows)


def phase_rows(n_points: int, m_range: float, D1: float, D2: float):
    ms = np.linspace(-m_range, m_range, n_points)
    for m1, m2, region in cond.phase_grid(ms, D1, D2):
        yield m1, m2, region.value


def cmd_phase(args) -> None:
    with output(args.out) as fh:
        write_csv(fh, ["m1", "m2", "region"], phase_rows(args.points, args.m_range, args.D1, args.D2))


def uniform_rows(N: int, D: float, x: float, L_values, reps: int, seed: int):
    for L in L_values:
        spec = cond.UniformSpec.centered(N, D, x, L)
        M_T = cond.typical_size_uniform(spec)
        ipr_full, ipr_simple = cond.typical_ipr(M_T, spec) if M_T > 0 else (math.nan, math.nan)
        mc = cond.mc_uniform(spec, reps, seed)
        yield L, M_T, mc.mean_M, ipr_simple, mc.mean_ipr, 100 * cond.typical_return_uniform(spec), ipr_full


def powerlaw_rows(N: int, r: float, m_min: float, D_values, trials: int, seed: int):
    spec = cond.PowerLawSpec(N, r, m_min)
    for D in D_values:
        yield D, cond.powerlaw_alpha1(spec, D), cond.mc_alpha1(spec, D, trials, seed)


def cmd_condense(args) -> None:
    seed = require_seed(args)
    if args.model == "uniform":
        L = np.linspace(args.L_min, args.L_max, args.points)
        header = ["L", "M_T_analytic", "M_T_mc", "ipr_analytic", "ipr_mc", "mu_P_pct", "ipr_sum_formula"]
        rows = list(uniform_rows(args.N, args.D, args.x, L, args.reps, seed))
    else:
        Ds = np.linspace(args.D_min, args.D_max, args.points)
        header = ["D", "alpha1_median", "alpha1_mc"]
        rows = list(powerlaw_rows(args.N, args.r, args.m_min, Ds, args.trials, seed))
    with output(args.out) as fh:
        write_csv(fh, header, rows)


def parse_portfolio(spec: str, n: int) -> tuple[str, list[float]]:
    name, sep, body = spec.partition("=")
    if not sep or not name:
        raise ConfigError(f"comparison portfolio {spec!r} must look like NAME=q1,q2,...")
    try:
        q = [float(t) for t in body.split(",")]
    except ValueError as exc:
        raise ConfigError(f"comparison portfolio {name!r}: {exc}") from exc
    if len(q) != n:
        raise ConfigError(f"comparison portfolio {name!r} has {len(q)} fractions, universe has {n}")
    return name, q


def cmd_simulate(args) -> None:
    u = load_universe(args)
    seed = require_seed(args)
    kelly = kelly_numerical(u, SolverOptions(method=expectation_method(args, len(u)))).fractions
    strategies = {"kelly": kelly, "cash": np.zeros(len(u))}
    for spec in args.compare or []:
        name, q = parse_portfolio(spec, len(u))
        strategies[name] = q
    try:
        est = simulate_growth(u, strategies, args.horizon, args.paths, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    header = ["strategy", "mean_log_growth", "stderr", *[f"q_{i + 1}" for i in range(len(u))]]
    with output(args.out) as fh:
        write_csv(fh, header, ([e.name, e.mean, e.stderr, *e.fractions] for e in est))


# --- figures ------------------------------------------------------------------------


def figure_tables(fig: int, args) -> list[tuple[str, list[str], list]]:
    """Datasets behind each figure as ``(suffix, header, rows)``."""
    u = AssetUniverse.from_dict(FIG1_UNIVERSE)
    method = GaussHermite(args.quad_order)
    if fig == 1:
        return [("", ["mu_P", "sigma_EF", "sigma_CML", "sigma_constrained"],
                 [r[:4] for r in frontier_rows_no_lef(u, args.points)])]
    if fig == 2:
        rows = []
        for D in (0.01, 0.04, 0.25, 1.0):
            for m in np.linspace(-D, D, args.points):
                rows.append([D, m, kelly_fraction_single(m, D), single_asset_numerical(m, D),
                             first_order_correction(m, D)])
        return [("", ["D", "m", "q_closed", "q_numerical", "first_order_correction"], rows)]
    if fig == 3:
        kp = kelly_point(u)
        mu = np.linspace(u.m.min() + u.D.min() / 2, kp.mu_K * 1.2, args.points)
        curve = [[t, float(approx_frontier(u, t, kp.active_set))] for t in mu]
        return [("", ["mu_P", "sigma_approx"], curve),
                ("kelly_point", ["mu_K", "sigma_K"], [[kp.mu_K, kp.sigma_K]])]
    if fig == 4:
        return [("", ["m1", "m2", "region"], list(phase_rows(args.points, 0.3, 0.1, 0.2)))]
    if fig == 5:
        seed = require_seed(args)
        L = np.linspace(0.05, 0.5, 10)
        return [("", ["L", "M_T_analytic", "M_T_mc", "ipr_analytic", "ipr_mc", "mu_P_pct", "ipr_sum_formula"],
                 list(uniform_rows(1000, 0.01, -0.05, L, 10_000, seed)))]
    if fig == 6:
        seed = require_seed(args)
        Ds = np.linspace(0.2, 2.0, 10)
        return [("", ["D", "alpha1_median", "alpha1_mc"], list(powerlaw_rows(1000, 0.1, 0.1, Ds, 20_000, seed)))]
    if fig == 7:
        frontier = list(frontier_rows(u, args.points, method, no_short=False))
        lef = [r for r in lef_rows(u, args.points, method, no_short=False)]
        lef_pos = [r for r in lef_rows(u, args.points, method, no_short=True)]
        q_cols = [f"q_{i + 1}" for i in range(len(u))]
        lef_header = ["v_P", "mu_P", "sigma_P", *q_cols, "gamma1", "gamma2", "flag_nonphysical"]
        return [("", ["mu_P", "sigma_EF", "sigma_CML", "sigma_constrained", "sigma_LEF"], frontier),
                ("lef", lef_header, lef), ("lef_no_short", lef_header, lef_pos)]
    raise ConfigError(f"unknown figure {fig}; choose 1..7")


def frontier_rows_no_lef(u: AssetUniverse, n_points: int):
    mu = np.linspace(u.mu.min(), u.mu.max(), n_points)
    ef = efficient_frontier(u, mu)
    cml = cml_sigma(u, mu)
    con = [constrained_frontier_point(u, float(t)).sigma_P for t in mu]
    return zip(mu, ef, cml, con)


def cmd_figure(args) -> None:
    tables = figure_tables(args.fig, args)
    for suffix, header, rows in tables:
        path = args.out
        if suffix and path not in (None, "-"):
            stem, dot, ext = path.rpartition(".")
            path = f"{stem}_{suffix}.{ext}" if dot else f"{path}_{suffix}"
        with output(path) as fh:
            if suffix and path in (None, "-"):
                fh.write(f"# {suffix}\n")
            write_csv(fh, header, rows)


# --- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--universe", help="universe JSON file")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=["quad", "mc"])
    common.add_argument("--quad-order", type=int, default=64)
    common.add_argument("--mc-samples", type=int, default=200_000)
    common.add_argument("--no-short", action="store_true")
    common.add_argument("--points", type=int, default=41)

    p = argparse.ArgumentParser(prog="kelly-lab", description="Kelly-optimal portfolio toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="Kelly fractions by every method (JSON)")
    sub.add_parser("frontier", parents=[common], help="EF, CML, constrained EF and LEF (CSV)")
    sub.add_parser("lef", parents=[common], help="Logarithmic Efficient Frontier (CSV)")
    ph = sub.add_parser("phase", parents=[common], help="two-asset phase diagram (CSV)")
    ph.add_argument("--D1", type=float, default=0.1)
    ph.add_argument("--D2", type=float, default=0.2)
    ph.add_argument("--m-range", type=float, default=0.3)

    co = sub.add_parser("condense", parents=[common], help="condensation statistics (CSV)")
    co.add_argument("model", choices=["uniform", "powerlaw"])
    co.add_argument("--N", type=int, default=1000)
    co.add_argument("--D", type=float, default=0.01)
    co.add_argument("--x", type=float, default=-0.05)
    co.add_argument("--L-min", type=float, default=0.05)
    co.add_argument("--L-max", type=float, default=0.5)
    co.add_argument("--reps", type=int, default=10_000)
    co.add_argument("--r", type=float, default=0.1)
    co.add_argument("--m-min", type=float, default=0.1)
    co.add_argument("--D-min", type=float, default=0.2)
    co.add_argument("--D-max", type=float, default=2.0)
    co.add_argument("--trials", type=int, default=20_000)

    si = sub.add_parser("simulate", parents=[common], help="simulated growth of Kelly vs other portfolios (CSV)")
    si.add_argument("--horizon", type=int, default=100)
    si.add_argument("--paths", type=int, default=10_000)
    si.add_argument("--compare", action="append", metavar="NAME=q1,q2,...")

    fi = sub.add_parser("figure", parents=[common], help="data behind a figure (CSV)")
    fi.add_argument("--fig", type=int, required=True)
    return p


COMMANDS = {
    "optimize": cmd_optimize,
    "frontier": cmd_frontier,
    "lef": cmd_lef,
    "phase": cmd_phase,
    "condense": cmd_condense,
    "simulate": cmd_simulate,
    "figure": cmd_figure,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.points < 2:
            raise ConfigError("--points must be at least 2")
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"kelly-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, LefError) as exc:
        print(f"kelly-lab: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"kelly-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
