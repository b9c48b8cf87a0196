"""Batch front-end: configs in, deterministic CSV/summary/figure artifacts out.

Subcommands: ``constants``, ``mean-force``, ``error-study``, ``scaling``,
``poisson-check``, ``validate``.  Every output file starts with a provenance
header (tool version plus the config hash); numeric output uses 17
significant digits, '.' decimals and LF line endings.  ``--threads`` affects
speed only, never results.

Exit status: 0 when every checked bound is satisfied, 3 when any is violated,
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import fmt
from .config import load_config, override, validate
from .estimators import (bound_report, martingale_sup, pathwise_error,
                         scaling_study)
from .mean_force import (build_table, c_alpha, f_l2, one_sided_lipschitz,
                         theory_constants)
from .poisson import (aggregate_gradient_bound, check_gradient_bound,
                      relative_residual, solve_poisson)
from .potentials import ModelError
from .sde import NoisePlan, coupled_ensemble, equilibrium_start, fixed_start


def _header(cfg):
    return f"effdyn {__version__} config_sha256={cfg.sha256()}"


def _write_text(path, cfg, body):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {_header(cfg)}\n")
        fh.write(body)


def _write_csv(path, cfg, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {_header(cfg)}\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def _prepare(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.build_model()
    table = build_table(model, cfg.xi_min, cfg.xi_max, cfg.grid_m)
    return out, model, table


def _start_sampler(cfg, model):
    if cfg.start == "fixed":
        return fixed_start(np.asarray(cfg.x0, dtype=float))
    return equilibrium_start(model)


def _constants_body(model, table, cons):
    lines = {
        "model": model.label(),
        "kappa_sq": fmt(cons.kappa_sq),
        "rho": fmt(cons.rho),
        "rho_method": cons.rho_method,
        "L_b": fmt(cons.l_b),
        "c_alpha": fmt(cons.c_alpha),
        "beta": fmt(cons.beta),
        "f_l2": fmt(f_l2(model, table)),
        "f_l2_bound": fmt(cons.kappa_sq / cons.rho),
        "grid.xi_min": fmt(float(table.xi[0])),
        "grid.xi_max": fmt(float(table.xi[-1])),
        "grid.m": str(table.m),
        "grid.tail_mass": fmt(table.tail_mass),
    }
    return "".join(f"{k}: {v}\n" for k, v in lines.items())


def _sensitivity_body(rows):
    """rows: (name, base, refined, allowance)."""
    out = []
    for name, base, refined, allowed in rows:
        delta = abs(refined - base)
        ok = delta <= allowed
        out.append(f"name: {name}\nbase: {fmt(base)}\nrefined: {fmt(refined)}\n"
                   f"delta: {fmt(delta)}\nallowed: {fmt(allowed)}\n"
                   f"ok: {'true' if ok else 'false'}\n")
    return "\n".join(out)


def _grid_sensitivity_rows(model, table, cons):
    dense = build_table(model, float(table.xi[0]), float(table.xi[-1]), 2 * table.m)
    rows = []
    b_delta = float(np.max(np.abs(dense.interp_b(table.xi) - table.b)))
    rows.append(("mean-force-row", 0.0, b_delta,
                 1e-6 if model.analytic_facts is not None else 1e-4))
    rows.append(("c_alpha", cons.c_alpha, c_alpha(model, dense),
                 max(1e-3 * abs(cons.c_alpha), 1e-9)))
    rows.append(("L_b", cons.l_b, one_sided_lipschitz(dense),
                 max(1e-2 * (1.0 + cons.l_b), 1e-9)))
    rows.append(("f_l2", f_l2(model, table), f_l2(model, dense),
                 max(1e-3 * abs(f_l2(model, table)), 1e-9)))
    return rows


def cmd_constants(cfg):
    out, model, table = _prepare(cfg)
    cons = theory_constants(model, table)
    table.to_csv(out / "mean_force.csv", header_lines=[_header(cfg)])
    _write_text(out / "constants.txt", cfg, _constants_body(model, table, cons))
    _write_text(out / "sensitivity.txt", cfg,
                _sensitivity_body(_grid_sensitivity_rows(model, table, cons)))
    if cfg.figures:
        from .figures import mean_force_figure

        mean_force_figure(table, out / "mean_force.png", title=model.label())
    return 0


def cmd_mean_force(cfg):
    out, model, table = _prepare(cfg)
    table.to_csv(out / "mean_force.csv", header_lines=[_header(cfg)])
    if cfg.figures:
        from .figures import mean_force_figure

        mean_force_figure(table, out / "mean_force.png", title=model.label())
    return 0


def cmd_error_study(cfg):
    out, model, table = _prepare(cfg)
    cons = theory_constants(model, table)
    plan = NoisePlan(master_seed=cfg.seed, T=cfg.T, dt=cfg.resolved_dt())
    start = _start_sampler(cfg, model)
    report, ens = bound_report(model, plan, cfg.paths, table=table, start=start,
                               threads=cfg.threads)

    table.to_csv(out / "mean_force.csv", header_lines=[_header(cfg)])
    _write_text(out / "constants.txt", cfg, _constants_body(model, table, cons))
    _write_csv(out / "bound_report.csv", cfg, report.to_csv_rows())
    _write_text(out / "bound_report.txt", cfg, report.to_summary())

    # discretization sensitivity: same Brownian paths at dt/2
    report2, _ = bound_report(model, plan.refine(), cfg.paths, table=table,
                              start=start, threads=cfg.threads,
                              include_poisson=False)
    base = {e.name: e for e in report.entries}
    rows = []
    for e2 in report2.entries:
        e1 = base.get(e2.name)
        if e1 is None or not np.isfinite(e1.lhs):
            continue
        rows.append((e2.name, e1.lhs, e2.lhs,
                     max(2.0 * e1.se, 1e-3 * abs(e1.lhs))))
    rows.extend(_grid_sensitivity_rows(model, table, cons))
    _write_text(out / "sensitivity.txt", cfg, _sensitivity_body(rows))

    if cfg.figures:
        from .figures import bounds_figure

        bounds_figure(report, out / "bounds.png", title=model.label())
    return 0 if report.all_satisfied else 3


def cmd_scaling(cfg):
    out, model, table = _prepare(cfg)
    plan = NoisePlan(master_seed=cfg.seed, T=cfg.T, dt=cfg.resolved_dt())
    result = scaling_study(model, plan, cfg.paths, cfg.sweep_parameter,
                           cfg.sweep_values, table=table,
                           method=cfg.integrator, threads=cfg.threads)
    _write_csv(out / "scaling.csv", cfg, result.to_csv_rows())
    _write_text(out / "scaling.txt", cfg, result.to_summary())

    result2 = scaling_study(model, plan.refine(), cfg.paths, cfg.sweep_parameter,
                            cfg.sweep_values, table=table,
                            method=cfg.integrator, threads=cfg.threads)
    rows = [("slope", result.slope, result2.slope,
             max(2.0 * result.slope_se, 1e-3 * abs(result.slope)))]
    for v, e1, e2 in zip(result.values, result.estimates, result2.estimates):
        rows.append((f"error({cfg.sweep_parameter}={v:g})", e1.value, e2.value,
                     max(2.0 * e1.std_error, 1e-3 * abs(e1.value))))
    _write_text(out / "sensitivity.txt", cfg, _sensitivity_body(rows))

    if cfg.figures:
        from .figures import scaling_figure

        scaling_figure(result, out / "scaling.png", title=model.label())
    return 0


def cmd_poisson_check(cfg):
    out, model, table = _prepare(cfg)
    if model.n != 2:
        print("poisson-check requires n = 2", file=sys.stderr)
        return 2
    from .bounds import BoundReport

    rho = theory_constants(model, table).rho
    report = BoundReport()
    sol = solve_poisson(model, table, cfg.poisson_xi, width=cfg.poisson_width,
                        npts=cfg.poisson_npts)
    sol.to_csv(out / "poisson_solution.csv", header_lines=[_header(cfg)])
    for xi in np.linspace(table.xi[0], table.xi[-1], 25):
        s = solve_poisson(model, table, float(xi), width=cfg.poisson_width,
                          npts=cfg.poisson_npts)
        report.add(check_gradient_bound(s, rho))
    agg, _ = aggregate_gradient_bound(model, table, npts=cfg.poisson_npts)
    report.add(agg)
    _write_csv(out / "poisson_bounds.csv", cfg, report.to_csv_rows())

    sol2 = solve_poisson(model, table, cfg.poisson_xi, width=cfg.poisson_width,
                         npts=2 * cfg.poisson_npts - 1)
    rows = [
        ("dirichlet", sol.dirichlet, sol2.dirichlet,
         max(1e-3 * abs(sol.dirichlet), 1e-9)),
        ("conditional-mean", 0.0, abs(sol2.mean), 1e-8),
        ("interior-residual", 0.0, relative_residual(sol2), 1e-6),
    ]
    summary = (f"xi: {fmt(float(sol.xi))}\ndirichlet: {fmt(sol.dirichlet)}\n"
               f"f_sq_mean: {fmt(sol.f_sq_mean)}\nmean: {fmt(sol.mean)}\n"
               f"relative_residual: {fmt(relative_residual(sol))}\n")
    _write_text(out / "poisson.txt", cfg, summary)
    _write_text(out / "sensitivity.txt", cfg, _sensitivity_body(rows))
    if cfg.figures:
        from .figures import poisson_figure

        poisson_figure(sol, out / "poisson.png",
                       title=f"{model.label()}  xi={sol.xi:g}")
    return 0 if report.all_satisfied else 3


def cmd_validate(cfg, parse_diags):
    diags = list(parse_diags) + validate(cfg)
    for d in diags:
        print(d)
    return 2 if diags else 0


_COMMANDS = {
    "constants": cmd_constants,
    "mean-force": cmd_mean_force,
    "error-study": cmd_error_study,
    "scaling": cmd_scaling,
    "poisson-check": cmd_poisson_check,
}

_STUDY_OF = {"constants": "constants", "mean-force": "mean-force",
             "error-study": "error", "scaling": "scaling",
             "poisson-check": "poisson-check"}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="effdyn",
        description="Coarse-grained effective dynamics: constants, tables, "
                    "bound checks and rate studies for overdamped models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*_COMMANDS, "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (speed only, never results)")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg, parse_diags = load_config(args.config)
    if cfg is None:
        for d in parse_diags:
            print(d, file=sys.stderr)
        return 2
    cfg = override(cfg, seed=args.seed, out=args.out, threads=args.threads,
                   figures=False if args.no_figures else None)
    if args.command == "validate":
        return cmd_validate(cfg, parse_diags)
    cfg.study = _STUDY_OF[args.command]
    diags = parse_diags + validate(cfg)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except ModelError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
