"""Command line entry point: ``quasilocal <command> [options]``.

Exit status: 0 when every check passes, 1 when an expectation or inequality
check fails, 2 on usage, parse or configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .errors import QuasiLocalError, RejectedInput
from .harness import (
    FUNCTIONALS,
    SWEEP_FAMILIES,
    Scenario,
    Suite,
    SuiteError,
    build_tau,
    convergence_study,
    default_out_dir,
    load_suite,
    parse_scenario,
    results_csv,
    results_json,
    run_suite,
    sweep,
    table_csv,
)
from .optimal import (
    OptimalOptions,
    comparison_check,
    hessian_numeric,
    mtx_matrix,
    solve_optimal,
)
from .sphere import ScalarField, random_band_limited, sphere_grid
from .surfaces import build_surface, induced_data

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="suite JSON file or bundled suite name")
    p.add_argument("--scenario", action="append", default=[], help="scenario id to select (repeatable)")
    p.add_argument("--lmax", type=int, help="spectral band limit (default: suite value or 24)")
    p.add_argument("--out-dir", type=Path, help="output directory (default: $QUASILOCAL_OUT_DIR or ./quasilocal-out)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent scenarios")
    p.add_argument("--seed", type=int, default=0, help="seed for random time functions")
    return p


def _inline(p: argparse.ArgumentParser):
    g = p.add_argument_group("inline surface (used when --config is absent)")
    g.add_argument("--family", help="surface family, e.g. schwarzschild_sphere, lightcone, boosted_sphere")
    g.add_argument("--ambient", default="euclidean", choices=("euclidean", "minkowski", "schwarzschild"))
    g.add_argument("--param", action="append", default=[], metavar="KEY=JSON", help="surface parameter")
    g.add_argument("--tau", default='{"kind": "zero"}', help="time function spec as JSON")
    g.add_argument("--functional", action="append", default=[], choices=FUNCTIONALS)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="quasilocal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", parents=[common], help="evaluate functionals")
    _inline(p)

    p = sub.add_parser("solve-optimal", parents=[common], help="minimize the Wang-Yau energy over tau")
    _inline(p)
    p.add_argument("--band", type=int, default=4, help="highest degree of the tau search space")

    p = sub.add_parser("second-variation", parents=[common], help="numerical Hessian spectrum at tau")
    _inline(p)
    p.add_argument("--basis-limit", type=int, default=4)
    p.add_argument("--method", choices=("energy", "gradient"), default="energy")

    p = sub.add_parser("compare", parents=[common], help="comparison inequality over random tau")
    _inline(p)
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--amplitude", type=float, default=0.2)
    p.add_argument("--band", type=int, default=4)
    p.add_argument("--tolerance", type=float, default=1e-7)

    p = sub.add_parser("sweep", parents=[common], help="functionals along a one-parameter family")
    p.add_argument("--family", required=True, choices=sorted(SWEEP_FAMILIES))
    p.add_argument("--values", required=True, help="comma separated parameter values, or start:stop:count")
    p.add_argument("--functional", action="append", default=[], choices=FUNCTIONALS)

    p = sub.add_parser("converge", parents=[common], help="self-convergence in the band limit")
    _inline(p)
    p.add_argument("--lmax-list", default="8,16,24,32")

    p = sub.add_parser("suite", parents=[common], help="run a scenario suite against its expectations")
    p.add_argument("suite", nargs="?", help="suite file or bundled name (alternative to --config)")
    return parser


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------

def _parse_params(items) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _selected(args, default_functionals=("hawking",)) -> Suite:
    if args.config:
        suite = load_suite(args.config)
        scenarios = suite.scenarios
        if args.scenario:
            known = {s.id: s for s in scenarios}
            missing = [i for i in args.scenario if i not in known]
            if missing:
                raise UsageError(f"unknown scenario ids: {missing}")
            scenarios = tuple(known[i] for i in args.scenario)
        return Suite(suite.name, args.lmax or suite.lmax, scenarios)
    if not getattr(args, "family", None):
        raise UsageError("give --config or an inline surface with --family")
    try:
        tau = json.loads(args.tau)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--tau is not valid JSON: {exc}") from None
    raw = {
        "id": args.family,
        "surface": {"ambient": args.ambient, "family": args.family, "parameters": _parse_params(args.param)},
        "functionals": args.functional or list(default_functionals),
        "tau": tau,
    }
    return Suite("inline", args.lmax or 24, (parse_scenario(raw),))


def _out(args) -> Path:
    out = args.out_dir or default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(args, stem: str, csv_text: str, json_obj) -> Path:
    out = _out(args)
    if args.format == "csv":
        path = out / f"{stem}.csv"
        path.write_text(csv_text)
    else:
        path = out / f"{stem}.json"
        path.write_text(json.dumps(json_obj, indent=2, sort_keys=True) + "\n")
    return path


def _prepare(scenario: Scenario, lmax: int, seed: int):
    grid = sphere_grid(lmax)
    emb = build_surface(grid, scenario.surface)
    data = induced_data(emb)
    tau = build_tau(scenario.tau, emb, grid, seed)
    return grid, emb, data, tau


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_suite(args, compute_only=False) -> int:
    if getattr(args, "suite", None):
        args.config = args.suite
    if not args.config and not compute_only:
        raise UsageError("suite needs a suite file or bundled name")
    suite = _selected(args)
    if compute_only:
        # plain evaluation: expectations are not judged
        stripped = tuple(dataclasses.replace(s, expect=()) for s in suite.scenarios)
        suite = dataclasses.replace(suite, scenarios=stripped)
    results = run_suite(suite, jobs=args.jobs, seed=args.seed)
    stem = f"{args.command}-{suite.name}"
    if args.format == "csv":
        path = _out(args) / f"{stem}.csv"
        path.write_text(results_csv(results))
    else:
        path = _out(args) / f"{stem}.json"
        path.write_text(results_json(results, timings=False) + "\n")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        vals = " ".join(f"{k}={v:.12g}" for k, v in sorted(r.values.items()))
        print(f"{status} {r.scenario} {vals}".rstrip())
        for f in r.failures:
            print(f"    {f}")
    print(f"wrote {path}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_solve_optimal(args) -> int:
    suite = _selected(args, ("optimal",))
    status = EXIT_OK
    for sc in suite.scenarios:
        grid, emb, data, tau = _prepare(sc, suite.lmax, args.seed)
        try:
            rep = solve_optimal(data, tau, OptimalOptions(band=args.band))
        except QuasiLocalError as exc:
            print(f"FAIL {sc.id}: {type(exc).__name__}: {exc}")
            status = EXIT_FAIL
            continue
        rows = [[it, e, g, mode] for it, e, g, mode in rep.history]
        path = _write(
            args,
            f"solve-optimal-{sc.id}",
            table_csv(["iteration", "energy", "gradient_sup", "mode"], rows),
            json.loads(rep.to_json()),
        )
        print(
            f"{sc.id} E*={rep.e_star:.12g} residual={rep.residual:.3e} "
            f"kernel={rep.kernel_dimension} minimum_condition={rep.minimum_condition} -> {path}"
        )
    return status


def cmd_second_variation(args) -> int:
    suite = _selected(args, ("wang_yau",))
    status = EXIT_OK
    for sc in suite.scenarios:
        grid, emb, data, tau = _prepare(sc, suite.lmax, args.seed)
        hess = hessian_numeric(data, tau, args.basis_limit, method=args.method)
        psd = bool(hess.eigenvalues[0] >= -1e-6 * hess.scale)
        summary = {
            "scenario": sc.id,
            "eigenvalues": [float(v) for v in hess.eigenvalues],
            "kernel_dimension": hess.kernel_dimension,
            "psd": psd,
            "asymmetry": hess.asymmetry,
        }
        if data.time_symmetric and not np.any(tau.values):
            mtx = mtx_matrix(data, args.basis_limit)
            summary["mtx_relative_difference"] = float(np.max(np.abs(hess.matrix - mtx)) / np.max(np.abs(mtx)))
        path = _write(args, f"second-variation-{sc.id}", hess.spectrum_csv(), summary)
        print(f"{sc.id} min_eig={hess.eigenvalues[0]:.3e} kernel={hess.kernel_dimension} psd={psd} -> {path}")
        if not psd:
            status = EXIT_FAIL
    return status


def cmd_compare(args) -> int:
    suite = _selected(args, ("wang_yau",))
    status = EXIT_OK
    for sc in suite.scenarios:
        grid, emb, data, tau0 = _prepare(sc, suite.lmax, args.seed)
        rng = np.random.default_rng(args.seed)
        rows = []
        for k in range(args.draws):
            tau = ScalarField(grid, tau0.values + random_band_limited(grid, args.band, args.amplitude, rng, 1).values)
            try:
                e_tau, e_0, e_img = comparison_check(data, tau0, tau)
                slack = e_tau - e_0 - e_img
                ok = slack >= -args.tolerance
                rows.append([k, e_tau, e_0, e_img, slack, ok, ""])
            except QuasiLocalError as exc:
                hyp = getattr(exc, "hypothesis", "")
                rows.append([k, "", "", "", "", False, f"{type(exc).__name__} ({hyp}): {exc}"])
                ok = False
            if not ok:
                status = EXIT_FAIL
        header = ["draw", "E_tau", "E_tau0", "E_image_tau", "slack", "holds", "error"]
        path = _write(args, f"compare-{sc.id}", table_csv(header, rows), [dict(zip(header, r)) for r in rows])
        worst = min((r[4] for r in rows if r[4] != ""), default=float("nan"))
        print(f"{sc.id} draws={len(rows)} min_slack={worst:.3e} -> {path}")
    return status


def _values(text: str) -> list[float]:
    if ":" in text:
        start, stop, num = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(num))]
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    functionals = args.functional or ["hawking", "liu_yau"]
    header, rows = sweep(args.family, _values(args.values), functionals, args.lmax or 24)
    path = _write(args, f"sweep-{args.family}", table_csv(header, rows), [dict(zip(header, r)) for r in rows])
    for row in rows:
        print(" ".join(str(x) for x in row).rstrip())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_converge(args) -> int:
    suite = _selected(args)
    Ls = [int(x) for x in args.lmax_list.split(",")]
    status = EXIT_OK
    for sc in suite.scenarios:
        for functional in sc.functionals:
            table = convergence_study(sc, Ls, functional)
            summary = {
                "scenario": sc.id,
                "functional": functional,
                "lmax": table.lmax,
                "values": table.values,
                "differences": table.differences[1:],
                "estimate": table.estimate,
                "decay_rate": table.decay_rate,
                "monotone": table.monotone,
                "flag": table.flag,
            }
            path = _write(args, f"converge-{sc.id}-{functional}", table.to_csv(), summary)
            print(f"{sc.id} {functional} estimate={table.estimate:.15g} monotone={table.monotone} -> {path}")
            if table.flag:
                print(f"    {table.flag}")
            if not table.monotone:
                status = EXIT_FAIL
    return status


COMMANDS = {
    "compute": lambda a: cmd_suite(a, compute_only=True),
    "suite": cmd_suite,
    "solve-optimal": cmd_solve_optimal,
    "second-variation": cmd_second_variation,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "converge": cmd_converge,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (UsageError, SuiteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RejectedInput as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
