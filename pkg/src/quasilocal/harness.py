"""Declarative scenario suites, batch runs, sweeps and convergence studies.

A suite is a JSON document::

    {"schema": "quasilocal-suite/1", "name": "...", "lmax": 24,
     "scenarios": [{"id": ..., "surface": {...}, "functionals": [...],
                    "tau": {...}, "solver": {...}, "expect": [...],
                    "expect_reject": null}]}

Unknown keys are rejected everywhere.  Every expectation names a provenance
tag; DERIVED ones must say which oracle produced them in ``comment``.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import math
import os
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import errors
from .errors import QuasiLocalError, RejectedInput
from .mass import brown_york_mass, cached_reference, hawking_mass, liu_yau_mass, wang_yau_energy
from .optimal import OptimalOptions, solve_optimal
from .sphere import ScalarField, harmonic_field, random_band_limited, sphere_grid
from .surfaces import FAMILIES, build_surface, induced_data
from .weyl import WeylOptions

SCHEMA = "quasilocal-suite/1"
PROVENANCE = ("PAPER", "TRIVIAL", "DERIVED")
FUNCTIONALS = (
    "hawking",
    "brown_york",
    "liu_yau",
    "wang_yau",
    "wang_yau_canonical",
    "consistency_gap",
    "oiee_residual",
    "optimal",
)
RELATIONS = {
    "eq": lambda v, ref, tol: abs(v - ref) <= tol,
    "le": lambda v, ref, tol: v <= ref + tol,
    "ge": lambda v, ref, tol: v >= ref - tol,
}
OUT_DIR_ENV = "QUASILOCAL_OUT_DIR"


class SuiteError(RejectedInput):
    """Malformed suite document."""


# ----------------------------------------------------------------------------
# schema
# ----------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class Expectation:
    functional: str
    value: float
    tolerance: float
    provenance: str
    relation: str = "eq"
    comment: str = ""

    def check(self, value: float) -> bool:
        return bool(math.isfinite(value) and RELATIONS[self.relation](value, self.value, self.tolerance))


@dataclasses.dataclass(frozen=True)
class Scenario:
    id: str
    surface: dict
    functionals: tuple
    tau: dict
    solver: dict
    expect: tuple
    expect_reject: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "surface": self.surface,
            "functionals": list(self.functionals),
            "tau": self.tau,
            "solver": self.solver,
            "expect": [dataclasses.asdict(e) for e in self.expect],
            "expect_reject": self.expect_reject,
        }


@dataclasses.dataclass(frozen=True)
class Suite:
    name: str
    lmax: int
    scenarios: tuple


def _only(obj, allowed, where):
    if not isinstance(obj, dict):
        raise SuiteError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise SuiteError(f"{where}: unknown keys {sorted(unknown)}")


_TAU_KEYS = {
    "zero": {"kind"},
    "own": {"kind"},
    "harmonics": {"kind", "terms"},
    "random": {"kind", "band", "amplitude", "seed", "lmin"},
    "boost": {"kind", "radius", "rapidity"},
}


def _parse_expect(raw, where) -> Expectation:
    _only(raw, {"functional", "value", "tolerance", "provenance", "relation", "comment"}, where)
    try:
        exp = Expectation(
            functional=raw["functional"],
            value=float(raw["value"]),
            tolerance=float(raw["tolerance"]),
            provenance=raw["provenance"],
            relation=raw.get("relation", "eq"),
            comment=raw.get("comment", ""),
        )
    except KeyError as exc:
        raise SuiteError(f"{where}: missing key {exc}") from None
    if exp.functional not in FUNCTIONALS:
        raise SuiteError(f"{where}: unknown functional {exp.functional!r}")
    if exp.provenance not in PROVENANCE:
        raise SuiteError(f"{where}: provenance must be one of {PROVENANCE}")
    if exp.relation not in RELATIONS:
        raise SuiteError(f"{where}: relation must be one of {sorted(RELATIONS)}")
    if exp.provenance == "DERIVED" and not exp.comment:
        raise SuiteError(f"{where}: DERIVED expectations must name their oracle in 'comment'")
    return exp


def parse_scenario(raw, where="scenario") -> Scenario:
    _only(raw, {"id", "surface", "functionals", "tau", "solver", "expect", "expect_reject"}, where)
    if not isinstance(raw.get("id"), str) or not raw["id"]:
        raise SuiteError(f"{where}: 'id' must be a non-empty string")
    where = f"scenario {raw['id']!r}"
    if "surface" not in raw:
        raise SuiteError(f"{where}: missing 'surface'")
    _only(raw["surface"], {"ambient", "family", "parameters"}, f"{where}.surface")
    if raw["surface"].get("family") not in (*FAMILIES, "lightcone"):
        raise SuiteError(f"{where}.surface: unknown family {raw['surface'].get('family')!r}")
    functionals = tuple(raw.get("functionals", ()))
    for f in functionals:
        if f not in FUNCTIONALS:
            raise SuiteError(f"{where}: unknown functional {f!r}")
    tau = raw.get("tau", {"kind": "zero"})
    if not isinstance(tau, dict) or tau.get("kind") not in _TAU_KEYS:
        raise SuiteError(f"{where}.tau: kind must be one of {sorted(_TAU_KEYS)}")
    _only(tau, _TAU_KEYS[tau["kind"]], f"{where}.tau")
    solver = raw.get("solver", {})
    _only(solver, {"tol", "max_iter", "band"}, f"{where}.solver")
    expect = tuple(_parse_expect(e, f"{where}.expect[{i}]") for i, e in enumerate(raw.get("expect", [])))
    for e in expect:
        if e.functional not in functionals:
            raise SuiteError(f"{where}: expectation on {e.functional!r}, which is not computed")
    reject = raw.get("expect_reject")
    if reject is not None and not (isinstance(reject, str) and isinstance(getattr(errors, reject, None), type)):
        raise SuiteError(f"{where}: expect_reject must name an error class")
    return Scenario(raw["id"], raw["surface"], functionals, tau, solver, expect, reject)


def parse_suite(text: str, source: str = "<suite>") -> Suite:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SuiteError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    _only(raw, {"schema", "name", "lmax", "scenarios", "comment"}, source)
    if raw.get("schema") != SCHEMA:
        raise SuiteError(f"{source}: schema must be {SCHEMA!r}")
    lmax = raw.get("lmax", 24)
    if not isinstance(lmax, int) or lmax < 4:
        raise SuiteError(f"{source}: lmax must be an integer >= 4")
    scenarios = tuple(parse_scenario(s, f"{source}: scenario #{i}") for i, s in enumerate(raw.get("scenarios", [])))
    ids = [s.id for s in scenarios]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise SuiteError(f"{source}: duplicate scenario ids {sorted(dup)}")
    return Suite(raw.get("name", Path(source).stem), lmax, scenarios)


def bundled_suites() -> list[str]:
    root = resources.files("quasilocal") / "suites"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_suite(path_or_name: str) -> Suite:
    """Read a suite from a file path, or by name from the bundled suites."""
    path = Path(path_or_name)
    if path.is_file():
        return parse_suite(path.read_text(), str(path))
    if path_or_name in bundled_suites():
        text = (resources.files("quasilocal") / "suites" / f"{path_or_name}.json").read_text()
        return parse_suite(text, path_or_name)
    raise SuiteError(f"no suite file or bundled suite named {path_or_name!r}")


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

@dataclasses.dataclass
class RunResult:
    scenario: str
    values: dict
    residuals: dict
    passed: bool
    failures: list
    error: str = ""
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def build_tau(spec: dict, emb, grid, seed: int | None = None) -> ScalarField:
    kind = spec["kind"]
    if kind == "zero":
        return ScalarField(grid, np.zeros(grid.npts))
    if kind == "own":
        if not emb.is_spacetime:
            raise RejectedInput("'own' time function needs a Minkowski surface")
        return emb.time_function()
    if kind == "harmonics":
        return harmonic_field(grid, spec.get("terms", ()))
    if kind == "boost":
        r = float(spec.get("radius", 1.0))
        return ScalarField(grid, r * np.sinh(float(spec.get("rapidity", 0.3))) * grid.normal[2])
    rng = np.random.default_rng(spec.get("seed", seed if seed is not None else 0))
    return random_band_limited(grid, int(spec.get("band", 4)), float(spec["amplitude"]), rng, int(spec.get("lmin", 1)))


def _weyl_options(solver: dict) -> WeylOptions | None:
    kw = {k: solver[k] for k in ("tol", "max_iter") if k in solver}
    return WeylOptions(**kw) if kw else None


def evaluate(scenario: Scenario, lmax: int, seed: int | None = None) -> tuple[dict, dict]:
    """Compute the scenario's functionals; returns (values, residuals)."""
    grid = sphere_grid(lmax)
    emb = build_surface(grid, scenario.surface)
    data = induced_data(emb)
    weyl = _weyl_options(scenario.solver)
    values: dict = {}
    residuals: dict = {}
    wanted = set(scenario.functionals)
    if "hawking" in wanted:
        values["hawking"] = hawking_mass(data)
    if "brown_york" in wanted:
        values["brown_york"] = brown_york_mass(data, weyl)
    if "liu_yau" in wanted:
        values["liu_yau"] = liu_yau_mass(data, weyl)
    energy_keys = {"wang_yau", "wang_yau_canonical", "consistency_gap", "oiee_residual"}
    if wanted & energy_keys:
        tau = build_tau(scenario.tau, emb, grid, seed)
        report = wang_yau_energy(data, tau, options=weyl)
        values["wang_yau"] = report.value
        values["wang_yau_canonical"] = report.canonical
        values["consistency_gap"] = report.diagnostics["consistency_gap"]
        values["oiee_residual"] = report.div_j.sup()
        residuals["weyl_defect"] = report.diagnostics["weyl_defect"]
        residuals["identity_a_error"] = report.diagnostics["identity_a_error"]
        values = {k: v for k, v in values.items() if k in wanted or k not in energy_keys}
    if "optimal" in wanted:
        tau = build_tau(scenario.tau, emb, grid, seed)
        band = int(scenario.solver.get("band", 4))
        crit = solve_optimal(data, tau, OptimalOptions(band=band, spectrum=False), weyl)
        values["optimal"] = crit.e_star
        residuals["optimal_div_j"] = crit.residual
    if "weyl_defect" not in residuals and {"brown_york", "liu_yau"} & wanted:
        ref = cached_reference(data.sigma, ScalarField(grid, np.zeros(grid.npts)), options=weyl)
        residuals["weyl_defect"] = float(ref.residual)
    return values, residuals


def run_scenario(scenario: Scenario, lmax: int = 24, seed: int | None = None) -> RunResult:
    """Evaluate one scenario in isolation; never raises for scenario failures."""
    start = time.perf_counter()
    values: dict = {}
    residuals: dict = {}
    failures: list = []
    error = ""
    try:
        values, residuals = evaluate(scenario, lmax, seed)
        if scenario.expect_reject:
            failures.append(f"expected {scenario.expect_reject}, computation succeeded")
    except QuasiLocalError as exc:
        error = f"{type(exc).__name__}: {exc}"
        wanted = getattr(errors, scenario.expect_reject) if scenario.expect_reject else None
        if wanted is None or not isinstance(exc, wanted):
            failures.append(error)
    except Exception as exc:  # isolate programming errors too
        error = f"{type(exc).__name__}: {exc}"
        failures.append(error)
    if not error:
        for e in scenario.expect:
            v = values.get(e.functional, float("nan"))
            if not e.check(v):
                failures.append(
                    f"{e.functional} = {v!r} violates {e.relation} {e.value!r} +- {e.tolerance:g} [{e.provenance}]"
                )
    return RunResult(
        scenario=scenario.id,
        values={k: float(v) for k, v in values.items()},
        residuals={k: float(v) for k, v in residuals.items()},
        passed=not failures,
        failures=failures,
        error=error,
        wall_time=time.perf_counter() - start,
    )


def _run_packed(args):
    raw, lmax, seed = args
    return run_scenario(parse_scenario(raw), lmax, seed)


def run_suite(
    config: str | Suite,
    jobs: int = 1,
    lmax: int | None = None,
    seed: int | None = None,
) -> list[RunResult]:
    """Run every scenario; results come back in suite order."""
    suite = config if isinstance(config, Suite) else load_suite(config)
    L = lmax or suite.lmax
    if jobs <= 1 or len(suite.scenarios) <= 1:
        return [run_scenario(s, L, seed) for s in suite.scenarios]
    packed = [(s.to_dict(), L, seed) for s in suite.scenarios]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_packed, packed))


# ----------------------------------------------------------------------------
# reports
# ----------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, int, np.floating)) else str(v)


def results_csv(results: list[RunResult]) -> str:
    """Long-format table, one row per (scenario, quantity); no timings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "kind", "name", "value", "passed"])
    for r in results:
        for k in sorted(r.values):
            w.writerow([r.scenario, "value", k, _fmt(r.values[k]), r.passed])
        for k in sorted(r.residuals):
            w.writerow([r.scenario, "residual", k, _fmt(r.residuals[k]), r.passed])
        if r.error:
            w.writerow([r.scenario, "error", "", r.error, r.passed])
        for f in r.failures:
            w.writerow([r.scenario, "failure", "", f, r.passed])
    return buf.getvalue()


def results_json(results: list[RunResult], timings: bool = True) -> str:
    rows = []
    for r in results:
        d = r.to_dict()
        if not timings:
            d.pop("wall_time")
        rows.append(d)
    return json.dumps({"schema": SCHEMA, "results": rows}, indent=2, sort_keys=True)


def table_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "quasilocal-out"))


# ----------------------------------------------------------------------------
# sweeps and convergence
# ----------------------------------------------------------------------------

SWEEP_FAMILIES = {
    # family -> (surface template builder, parameter label)
    "lightcone": (
        lambda a: {"ambient": "minkowski", "family": "lightcone", "parameters": {"radius": 1.0, "harmonics": [[2, 0, a]]}},
        "amplitude",
    ),
    "schwarzschild": (
        lambda r: {"ambient": "schwarzschild", "family": "schwarzschild_sphere", "parameters": {"radius": r, "mass": 1.0}},
        "radius",
    ),
    "ellipsoid": (
        lambda c: {"ambient": "euclidean", "family": "ellipsoid", "parameters": {"axes": [1.0, 1.0, c]}},
        "axis",
    ),
}


def sweep(family: str, values, functionals, lmax: int = 24) -> tuple[list, list]:
    """Evaluate functionals along a one-parameter family; failures are recorded per point."""
    if family not in SWEEP_FAMILIES:
        raise RejectedInput(f"unknown sweep family {family!r}; choose from {sorted(SWEEP_FAMILIES)}")
    for f in functionals:
        if f not in FUNCTIONALS:
            raise RejectedInput(f"unknown functional {f!r}")
    make, label = SWEEP_FAMILIES[family]
    header = [label, *functionals, "error"]
    rows = []
    for v in values:
        sc = Scenario(f"{family}-{v}", make(float(v)), tuple(functionals), {"kind": "zero"}, {}, ())
        try:
            vals, _ = evaluate(sc, lmax)
            rows.append([float(v), *[vals.get(f, float("nan")) for f in functionals], ""])
        except QuasiLocalError as exc:
            rows.append([float(v), *[float("nan")] * len(functionals), f"{type(exc).__name__}: {exc}"])
    return header, rows


@dataclasses.dataclass
class ConvergenceTable:
    functional: str
    lmax: list
    values: list
    differences: list
    estimate: float
    decay_rate: float
    monotone: bool
    flag: str

    def to_csv(self) -> str:
        rows = [[L, v, d] for L, v, d in zip(self.lmax, self.values, self.differences)]
        return table_csv(["lmax", self.functional, "difference"], rows)


def convergence_study(
    scenario: Scenario,
    L_list,
    functional: str | None = None,
    floor: float = 1e-12,
) -> ConvergenceTable:
    """Values of one functional against L; differences below ``floor`` count as converged."""
    functional = functional or (scenario.functionals[0] if scenario.functionals else "hawking")
    sc = dataclasses.replace(scenario, functionals=(functional,), expect=())
    Ls = sorted(int(L) for L in L_list)
    vals, failed = [], []
    for L in Ls:
        try:
            vals.append(float(evaluate(sc, L)[0][functional]))
        except QuasiLocalError as exc:
            # an under-resolved grid may not reach the solver tolerance
            vals.append(float("nan"))
            failed.append(f"L={L}: {type(exc).__name__}: {exc}")
    diffs = [float("nan")] + [abs(b - a) for a, b in zip(vals, vals[1:])]
    finite = [v for v in vals if math.isfinite(v)]
    last = finite[-1] if finite else float("nan")
    tol = floor * (1 + abs(last)) if finite else floor
    live = [d for d in diffs[1:] if math.isfinite(d)]
    monotone = len(live) >= 1 and all(b <= a or b < tol for a, b in zip(live, live[1:]))
    rate = float("nan")
    pos = [(L, d) for L, d in zip(Ls[1:], diffs[1:]) if math.isfinite(d) and d > tol]
    if len(pos) >= 2:
        (l1, d1), (l2, d2) = pos[-2], pos[-1]
        rate = math.log(d1 / d2) / (l2 - l1)
    notes = [] if monotone else ["non-monotone differences"]
    flag = "; ".join(notes + failed)
    return ConvergenceTable(functional, Ls, vals, diffs, last, rate, monotone, flag)
