"""Command line front-end: ``evohom <command> [options]``.

Exit status is 0 on success, 1 when a verification fails, 2 for invalid
input and 3 when a run aborts with a solver or model error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import fem
from .config import SCHEMA, geometry_from, load_config, problem_from
from .effective import COLUMNS, EffectiveTable, build_effective_table
from .errors import EvohomError
from .io import flatten_radii, write_csv, write_json
from .macro import MacroSolver
from .mesh import write_vtk
from .micro import MicroSolver
from .sweep import run_sweep
from .verify import TARGETS, macro_mms, periodic_cell_mms, verify

log = logging.getLogger("evohom")


def _out_dir(args, cfg) -> Path:
    d = Path(args.out_dir or cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _table(cfg, args=None) -> EffectiveTable:
    path = getattr(args, "table", None) or cfg["cell"].get("table")
    if path:
        return EffectiveTable.load(path)
    data = problem_from(cfg)
    D = np.asarray(data.D) if data.x_constant_D else np.eye(2)
    c = cfg["cell"]
    return build_effective_table(D=D, grid_size=c["grid_size"], geom=geometry_from(cfg), h=c["h"],
                                 tol=c["tol"])


def cmd_verify(args, cfg) -> int:
    report = verify(args.target)
    text = json.dumps(report, indent=2, default=float)
    if args.out:
        write_json(args.out, report)
    else:
        print(text)
    return 0 if report["passed"] else 1


def cmd_cell_table(args, cfg) -> int:
    out = _out_dir(args, cfg)
    table = _table(cfg)
    table.save(out / "table.json")
    D = table.D
    rows = [dict(zip(("R",) + COLUMNS, (r, D[i, 0, 0], D[i, 0, 1], D[i, 1, 1], table.Jbar[i],
                                      table.dJbar_dR[i], table.gamma[i])))
            for i, r in enumerate(table.radii)]
    write_csv(out / "table.csv", rows)
    log.info("wrote %s", out / "table.json")
    return 0


def cmd_micro_run(args, cfg) -> int:
    out = _out_dir(args, cfg)
    m = cfg["micro"]
    data = problem_from(cfg)
    solver = MicroSolver(data, m["eps"], h_cell=m["h_cell"], extents=m["extents"], tol=m["tol"])
    stride = m["output_stride"]
    if cfg["output"]["matrix_dump"]:
        fem.dump_matrix(solver.K0, out / "micro_stiffness.mtx")
        fem.dump_matrix(solver.M0, out / "micro_mass.mtx")
    rows = []
    state0 = solver.initial_state()

    def on_step(state, row, co):
        rows.append(dict(row))
        flatten_radii(rows, state.R)
        if cfg["output"]["vtk"] and stride and state.step % stride == 0:
            write_vtk(solver.mesh, out / f"micro_{state.step:05d}.vtk", {"u": state.u})

    run = solver.run(m["T"], m["dt"], state=state0, callback=on_step)
    if cfg["output"]["vtk"]:
        write_vtk(solver.mesh, out / "micro_final.vtk", {"u": run.final.u})
    write_csv(out / "micro_timeseries.csv", rows)
    write_json(out / "micro_report.json", {
        "eps": solver.eps, "T": m["T"], "dt": m["dt"], "n_vertices": solver.mesh.n_vertices,
        "mesh_hash": solver.mesh.digest(), "energy_bound": run.energy_bound,
        "mass_initial": solver.mass(state0.u, state0.J_prev),
        "mass_final": rows[-1]["mass_Ju"] if rows else solver.mass(state0.u, state0.J_prev),
        "R_final": run.final.R,
    })
    return 0


def cmd_macro_run(args, cfg) -> int:
    out = _out_dir(args, cfg)
    m = cfg["macro"]
    data = problem_from(cfg)
    solver = MacroSolver(data, _table(cfg, args), n=m["n"], tol=m["tol"], explicit_q=m["explicit_q"])
    run = solver.run(m["T"], m["dt"], keep=m["output_stride"])
    write_csv(out / "macro_timeseries.csv", run.rows)
    if cfg["output"]["vtk"]:
        for st in run.states:
            write_vtk(solver.mesh, out / f"macro_{st.step:05d}.vtk", {"u": st.u, "R": st.R})
    if cfg["output"]["matrix_dump"]:
        fem.dump_matrix(solver.K0, out / "macro_stiffness.mtx")
    qc = [r["q_cancel"] for r in run.rows]
    write_json(out / "macro_report.json", {
        "n": m["n"], "T": m["T"], "dt": m["dt"], "mass_initial": solver.mass(run.states[0]),
        "mass_final": solver.mass(run.final), "R_min": float(run.final.R.min()),
        "R_max": float(run.final.R.max()), "q_cancel_max_over_dt": max(qc) / m["dt"] if qc else 0.0,
    })
    return 0


def cmd_sweep(args, cfg) -> int:
    out = _out_dir(args, cfg)
    s = cfg["sweep"]
    data = problem_from(cfg)
    table = _table(cfg, args)
    rep = run_sweep(data, s["eps"], s["T"], s["dt"], table=table, h_cell=cfg["micro"]["h_cell"],
                    macro_n=cfg["macro"]["n"])
    write_csv(out / "sweep.csv", rep["rows"])
    write_json(out / "sweep_report.json", rep)
    return 0 if rep["two_scale_decreasing"] and rep["radius_decreasing"] else 1


def cmd_mms(args, cfg) -> int:
    report = {}
    if args.which in ("fem", "all"):
        report["fem"] = periodic_cell_mms()
    if args.which in ("macro", "all"):
        report["macro"] = macro_mms(_table(cfg, args) if args.table else build_effective_table(
            grid_size=8, geom=geometry_from(cfg), h=cfg["cell"]["h"], n_probe=0))
    passed = all(r["passed"] for r in report.values())
    if args.out:
        write_json(args.out, report)
    else:
        print(json.dumps(report, indent=2, default=float))
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evohom", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run self-checks and print a JSON report")
    v.add_argument("target", nargs="?", default="all", choices=["all", *TARGETS])
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    for name, func, helptext in (("cell-table", cmd_cell_table, "tabulate effective coefficients"),
                                 ("micro-run", cmd_micro_run, "run the micro scheme"),
                                 ("macro-run", cmd_macro_run, "run the upscaled scheme"),
                                 ("sweep", cmd_sweep, "compare micro runs with the macro run")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--out-dir")
        if name in ("macro-run", "sweep"):
            sp.add_argument("--table", help="precomputed table JSON")
        sp.set_defaults(func=func)

    m = sub.add_parser("mms", help="manufactured-solution convergence rates")
    m.add_argument("--which", choices=["fem", "macro", "all"], default="all")
    m.add_argument("--table")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mms)

    s = sub.add_parser("schema", help="print the configuration JSON schema")
    s.set_defaults(func=lambda a, c: print(json.dumps(SCHEMA, indent=2)) or 0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        print(f"evohom: invalid configuration at {where}: {exc.message}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"evohom: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except EvohomError as exc:
        print(f"evohom: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
