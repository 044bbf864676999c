"""``adia-strips`` command line.

Exit codes: 0 success, 2 divergence / envelope violations / trend failure /
no flow chain, 3 configuration or artifact errors, 4 a sweep row diverged.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, adiabatic_lab, artifacts, config, estimates, morse_flow
from .geometry import CHARTS, MORSE_FUNCTIONS
from .strip_solver import (
    DivergedError,
    floer_oracle,
    omega_energy,
    perturb_field,
    solve_strip,
    stokes_energy,
)

EXIT_OK = 0
EXIT_FAIL = 2
EXIT_CONFIG = 3
EXIT_ROW_DIVERGED = 4

ENV_OUT = "ADIA_STRIPS_OUT"
PROBLEM_FILE = "problem.ini"


def _err(msg):
    print(f"adia-strips: {msg}", file=sys.stderr)


def _out_dir(args, default):
    out = os.environ.get(ENV_OUT) or args.out or default
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_problem(out: Path, problem: config.Problem):
    with open(out / PROBLEM_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(problem.text if problem.text.endswith("\n") else problem.text + "\n")


def _default_point(value, dim, fill=0.1):
    if value is None:
        return np.full(dim, fill)
    arr = np.asarray(value, dtype=float)
    if arr.size == 1:
        arr = np.full(dim, arr.item())
    if arr.size != dim:
        raise config.ConfigError(f"point {tuple(value)} does not have {dim} coordinates")
    return arr


def _strip_grid(problem):
    r = problem.get("strip", "r", 20.0)
    if r <= 0:
        raise config.ConfigError("strip r must be positive")
    Ns = problem.get("strip", "ns", None)
    if Ns is None:
        Ns = int(round(20.0 * 2.0 * r))
        Ns += Ns % 2
    Nt = problem.get("strip", "nt", 20)
    if Ns < 4 or Nt < 3:
        raise config.ConfigError("grid needs ns >= 4 and nt >= 3")
    return r, int(Ns), int(Nt)


# ---------------------------------------------------------------------------
# solve


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    try:
        problem = config.load(args.config)
        r, Ns, Nt = _strip_grid(problem)
        x_minus = _default_point(problem.get("strip", "x_minus"), problem.chart.dim)
    except config.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    chart, bc = problem.chart, problem.bc
    end_condition = problem.get("strip", "end_condition", "floer-seeded")
    formulation = problem.get("strip", "formulation", "holomorphic")
    res_tol = args.tol if args.tol is not None else problem.get("solver", "res_tol", 1e-9)
    max_iter = problem.get("solver", "max_iter", 50)
    perturb = problem.get("strip", "perturb", 0.0)

    oracle = floer_oracle(chart, bc.f, x_minus, (-r, r), (Ns, Nt), eps=bc.eps, a_form=bc.a_form)
    init = perturb_field(oracle, perturb, args.seed)
    out = _out_dir(args, "adia_solve")
    _write_problem(out, problem)
    code = EXIT_OK
    try:
        u, report = solve_strip(
            chart,
            bc,
            r,
            Ns,
            Nt,
            end_condition,
            init,
            formulation=formulation,
            x_minus=x_minus,
            res_tol=res_tol,
            max_iter=max_iter,
            continuation=problem.get("solver", "continuation", False),
        )
    except DivergedError as exc:
        _err(str(exc))
        u, report = None, exc.report
        code = EXIT_FAIL
    info = {"dim": chart.dim, "eps": bc.eps, "r": r, "Ns": Ns, "Nt": Nt}
    if report is not None:
        info.update(report.as_dict())
    if u is not None:
        artifacts.write_strip(out / "strip.csv", u)
        st = stokes_energy(chart, u, bc)
        info["energy"] = omega_energy(chart, u)
        info["stokes_energy"] = st.total
        if not report.converged:
            _err("Jacobian became singular before the residual tolerance was met")
            code = EXIT_FAIL
    artifacts.write_json(out / "report.json", info)
    artifacts.write_manifest(out, "solve", args.config, args.seed, __version__, time.perf_counter() - t0)
    if code == EXIT_OK:
        print(f"converged: residual {report.residual_norm:.3e} in {report.newton_iters} Newton steps; energy {info['energy']:.12g}")
    return code


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    run = Path(args.run_dir)
    cfg_path = args.config or run / PROBLEM_FILE
    try:
        problem = config.load(cfg_path)
    except config.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        u = artifacts.read_strip(run / "strip.csv")
        if (run / "report.json").is_file():
            meta = artifacts.read_json(run / "report.json")
            if (meta.get("Ns"), meta.get("Nt")) != (u.Ns, u.Nt):
                raise artifacts.ArtifactError("strip.csv does not match the grid in report.json")
    except artifacts.ArtifactError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if u.dim != problem.chart.dim:
        _err(f"strip has dimension {u.dim}, chart has {problem.chart.dim}")
        return EXIT_CONFIG
    chart, bc = problem.chart, problem.bc
    try:
        prof = estimates.gamma_profile(chart, u, bc)
    except estimates.WindowError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    rep = estimates.check_decay_bound(prof)
    kappa, _, _ = estimates.c1_envelope(chart, u, bc)
    rep.c1_kappa = kappa

    out = _out_dir(args, str(run) + "_verify")
    inner = estimates._window_mask(prof.s_grid, prof.R)
    env_full = np.full(prof.s_grid.size, np.nan)
    env_full[inner] = rep.envelope
    artifacts.write_csv(
        out / "gamma_profile.csv",
        ["s", "gamma", "dgamma", "ddgamma", "dirichlet", "envelope"],
        np.column_stack([prof.s_grid, prof.gamma, prof.dgamma, prof.ddgamma, prof.dirichlet, env_full]),
    )
    summary = rep.as_dict()
    summary.update({"eps": bc.eps, "delta": prof.delta, "R": prof.R, "slack": prof.slack})
    artifacts.write_json(out / "estimate_report.json", summary)
    s_in = prof.s_grid[inner]
    with np.errstate(divide="ignore"):
        series = [
            ("gamma + int alpha", s_in, np.log10(rep.lhs), "#1f77b4"),
            ("envelope", s_in, np.log10(rep.envelope), "#d62728"),
        ]
    artifacts.line_plot_svg(out / "gamma_envelope.svg", series, "decay envelope", "s", "log10")
    artifacts.write_manifest(out, "verify", cfg_path, args.seed, __version__, time.perf_counter() - t0)
    print(f"K = {rep.K:.6g}, kappa = {kappa:.6g}, violations = {rep.violations}")
    return EXIT_OK if rep.violations == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------
# sweep


def sweep_config(problem: config.Problem, jobs: int = 1, tol=None) -> adiabatic_lab.SweepConfig:
    sw = problem.values.get("sweep", {})
    if "eps_ladder" not in sw:
        raise config.ConfigError("[sweep] needs eps_ladder")
    x_minus = _default_point(sw.get("x_minus"), problem.chart.dim)
    try:
        return adiabatic_lab.SweepConfig(
            chart=problem.chart,
            f=problem.morse,
            eps_ladder=sw["eps_ladder"],
            ell=sw.get("ell", 2.0),
            x_minus=tuple(x_minus.tolist()),
            cells_per_unit=sw.get("cells_per_unit", 20.0),
            Nt=sw.get("nt", 20),
            mode=sw.get("mode", "finite_flow"),
            a_form=problem.bc.a_form,
            formulation=problem.get("strip", "formulation", "holomorphic"),
            res_tol=tol if tol is not None else problem.get("solver", "res_tol", 1e-9),
            max_iter=problem.get("solver", "max_iter", 50),
            jobs=max(1, int(jobs)),
        )
    except adiabatic_lab.ConfigError as exc:
        raise config.ConfigError(str(exc)) from None


def _overlay(path, cfg, eps, u, reference):
    v = adiabatic_lab.rescale(u, eps)
    strip = v.Q[:, 0, :]
    if cfg.chart.dim == 1:
        series = [("strip t=0", v.s, strip[:, 0], "#1f77b4")]
        if reference is not None:
            for k, seg in enumerate(reference.segments):
                series.append(("flow" if k == 0 else "", seg.sigma, seg.Q[:, 0], "#d62728"))
        artifacts.line_plot_svg(path, series, f"eps = {eps:g}", "sigma", "q")
    else:
        series = [("strip t=0", strip[:, 0], strip[:, 1], "#1f77b4")]
        if reference is not None:
            pts = reference.points()
            pts = pts + np.round(strip[0] - pts[0])
            series.append(("flow", pts[:, 0], pts[:, 1], "#d62728"))
        artifacts.line_plot_svg(path, series, f"eps = {eps:g}", "q0", "q1")


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    try:
        problem = config.load(args.config)
        cfg = sweep_config(problem, args.jobs, args.tol)
    except config.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    table = adiabatic_lab.run_sweep(cfg, keep_fields=True)
    out = _out_dir(args, "adia_sweep")
    _write_problem(out, problem)

    cols = adiabatic_lab.TABLE_COLUMNS
    artifacts.write_csv(out / "table.csv", cols, [[row[c] for c in cols] for row in table.rows])
    ref_summary = None if table.reference is None else table.reference.summary()
    artifacts.write_json(
        out / "table.json",
        {"mode": cfg.mode, "reference": ref_summary, "rows": [{c: row[c] for c in cols} for row in table.rows]},
    )
    for k, row in enumerate(table.rows):
        u = row.get("field")
        if u is None:
            continue
        rdir = out / f"row{k}"
        rdir.mkdir(exist_ok=True)
        artifacts.write_strip(rdir / "strip.csv", u)
        _overlay(rdir / "overlay.svg", cfg, row["eps"], u, table.reference)

    diverged = not table.all_converged()
    trend = adiabatic_lab.trend_ok(table.column("sup_dist")) if not diverged else False
    artifacts.write_manifest(
        out,
        "sweep",
        args.config,
        args.seed,
        __version__,
        time.perf_counter() - t0,
        extra={"jobs": cfg.jobs, "row_runtimes": [row["runtime"] for row in table.rows]},
    )
    for row in table.rows:
        print(f"eps={row['eps']:<8g} converged={row['converged']!s:<5} sup_dist={row['sup_dist']:.3e} "
              f"K={row['measured_K']:.3e} kappa={row['measured_kappa']:.3e}")
    if diverged:
        _err("at least one row diverged")
        return EXIT_ROW_DIVERGED
    if not trend:
        _err("sup_dist does not decrease down the ladder")
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# flow


def cmd_flow(args) -> int:
    t0 = time.perf_counter()
    try:
        problem = config.load(args.config)
        fl = problem.values.get("flow", {})
        dim = problem.chart.dim
        x_minus = _default_point(fl.get("x_minus"), dim)
        x_plus = None if "x_plus" not in fl else _default_point(fl["x_plus"], dim)
    except config.ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    chart, f = problem.chart, problem.morse
    try:
        crits = morse_flow.find_criticals(chart, f)
    except morse_flow.NonMorseError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    step = fl.get("step")
    if x_plus is None:
        seg = morse_flow.integrate_flow(chart, f, x_minus, fl.get("length", 10.0), step=step)
        path = morse_flow.FlowPath([seg], [], x_minus, seg.end, "finite")
    else:
        path = morse_flow.assemble_broken(chart, f, x_minus, x_plus, max_breaks=fl.get("max_breaks", 4), step=step)
    out = _out_dir(args, "adia_flow")
    _write_problem(out, problem)
    summary = {
        "criticals": [
            {"location": np.asarray(c.location).tolist(), "index": int(c.index), "value": float(c.value) + 0.0} for c in crits
        ],
        "path": None if path is None else path.summary(),
    }
    if path is not None:
        rows = []
        for k, seg in enumerate(path.segments):
            Qw = seg.Q - np.floor(seg.Q)
            for sig, q in zip(seg.sigma, Qw):
                rows.append([float(sig), *q.tolist(), k])
        artifacts.write_csv(out / "flow.csv", ["sigma"] + [f"q{k}" for k in range(dim)] + ["segment_id"], rows)
        summary["problems"] = morse_flow.check_path(chart, f, path)
    artifacts.write_json(out / "flow.json", summary)
    artifacts.write_manifest(out, "flow", args.config, args.seed, __version__, time.perf_counter() - t0)
    if path is None:
        _err("no flow chain between the given points")
        return EXIT_FAIL
    print(f"{path.kind} path with {len(path.segments)} segment(s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# catalog


def cmd_catalog(args) -> int:
    print("charts:")
    for name, builder in CHARTS.items():
        if name == "flat":
            print(f"  {name:<20} dim 1 or 2 (key: dim)")
        else:
            print(f"  {name:<20} dim {builder().dim} (key: amplitude)")
    print("morse functions:")
    for name in MORSE_FUNCTIONS:
        print(f"  {name:<20} keys: amplitude, wavenumber, phase, norm")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="problem or sweep file")
    common.add_argument("--out", metavar="DIR", help=f"output directory (overridden by ${ENV_OUT})")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker threads for sweep post-processing")
    common.add_argument("--seed", type=int, default=0, metavar="N", help="seed for the initial perturbation")
    common.add_argument("--tol", type=float, default=None, metavar="X", help="Newton residual tolerance")

    parser = argparse.ArgumentParser(prog="adia-strips", description="Adiabatic strips in cotangent bundles of tori.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one strip").set_defaults(func=cmd_solve, needs_config=True)
    p = sub.add_parser("verify", parents=[common], help="check decay estimates on a solved strip")
    p.add_argument("run_dir", help="directory written by 'solve'")
    p.set_defaults(func=cmd_verify, needs_config=False)
    sub.add_parser("sweep", parents=[common], help="run an eps ladder").set_defaults(func=cmd_sweep, needs_config=True)
    sub.add_parser("flow", parents=[common], help="gradient flow lines").set_defaults(func=cmd_flow, needs_config=True)
    sub.add_parser("catalog", parents=[common], help="list built-in charts and functions").set_defaults(
        func=cmd_catalog, needs_config=False
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.needs_config and not args.config:
        _err(f"{args.command} needs --config")
        return EXIT_CONFIG
    if args.jobs < 1:
        _err("--jobs must be at least 1")
        return EXIT_CONFIG
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
