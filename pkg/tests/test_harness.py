import json

import numpy as np
import pytest

from quasilocal.harness import (
    OUT_DIR_ENV,
    SCHEMA,
    Suite,
    SuiteError,
    bundled_suites,
    convergence_study,
    default_out_dir,
    load_suite,
    parse_scenario,
    parse_suite,
    results_csv,
    results_json,
    run_scenario,
    run_suite,
    sweep,
)


def scenario(id_, **extra):
    raw = {
        "id": id_,
        "surface": {"ambient": "schwarzschild", "family": "schwarzschild_sphere",
                    "parameters": {"radius": 5.0, "mass": 1.0}},
        "functionals": ["hawking", "brown_york"],
    }
    raw.update(extra)
    return raw


def suite_text(*scenarios, lmax=12):
    return json.dumps({"schema": SCHEMA, "name": "t", "lmax": lmax, "scenarios": list(scenarios)})


def test_bundled_suites_listed():
    assert {"catalog", "rigidity", "schwarzschild"} <= set(bundled_suites())


def test_bundled_suites_parse():
    for name in bundled_suites():
        suite = load_suite(name)
        assert suite.scenarios
        for sc in suite.scenarios:
            for e in sc.expect:
                assert e.provenance in ("PAPER", "TRIVIAL", "DERIVED")


def test_parse_error_reports_position():
    with pytest.raises(SuiteError, match=r"line 2, column"):
        parse_suite('{"schema": "quasilocal-suite/1",\n "scenarios": [,]}')


@pytest.mark.parametrize("mutate, match", [
    (lambda s: s.update(colour="red"), "unknown keys"),
    (lambda s: s["surface"].update(shape="round"), "unknown keys"),
    (lambda s: s["surface"].update(family="torus"), "unknown family"),
    (lambda s: s.update(functionals=["bartnik"]), "unknown functional"),
    (lambda s: s.update(tau={"kind": "zero", "amplitude": 1}), "unknown keys"),
    (lambda s: s.update(tau={"kind": "sideways"}), "kind must be"),
    (lambda s: s.update(solver={"tolerance": 1}), "unknown keys"),
    (lambda s: s.update(expect_reject="NoSuchError"), "error class"),
    (lambda s: s.update(expect=[{"functional": "hawking", "value": 1, "tolerance": 1e-8,
                                 "provenance": "DERIVED"}]), "comment"),
    (lambda s: s.update(expect=[{"functional": "hawking", "value": 1, "tolerance": 1e-8,
                                 "provenance": "GUESS"}]), "provenance"),
    (lambda s: s.update(expect=[{"functional": "liu_yau", "value": 1, "tolerance": 1e-8,
                                 "provenance": "TRIVIAL"}]), "not computed"),
])
def test_scenario_validation(mutate, match):
    raw = scenario("x")
    mutate(raw)
    with pytest.raises(SuiteError, match=match):
        parse_scenario(raw)


def test_suite_level_validation():
    with pytest.raises(SuiteError, match="schema"):
        parse_suite(json.dumps({"schema": "v0", "scenarios": []}))
    with pytest.raises(SuiteError, match="duplicate"):
        parse_suite(suite_text(scenario("a"), scenario("a")))
    with pytest.raises(SuiteError, match="lmax"):
        parse_suite(suite_text(scenario("a"), lmax=2))
    with pytest.raises(SuiteError):
        load_suite("no-such-suite")


def test_expectations_are_judged():
    good = {"functional": "hawking", "value": 1.0, "tolerance": 1e-8, "provenance": "DERIVED",
            "comment": "closed form"}
    bad = dict(good, value=2.0)
    ok = run_scenario(parse_scenario(scenario("ok", expect=[good])), lmax=12)
    ko = run_scenario(parse_scenario(scenario("ko", expect=[bad])), lmax=12)
    assert ok.passed and not ok.failures
    assert not ko.passed and "hawking" in ko.failures[0]


def test_relations():
    ge = {"functional": "brown_york", "value": 1.0, "tolerance": 0.0, "provenance": "DERIVED",
          "relation": "ge", "comment": "exceeds m"}
    assert run_scenario(parse_scenario(scenario("g", expect=[ge])), lmax=12).passed
    le = dict(ge, relation="le")
    assert not run_scenario(parse_scenario(scenario("l", expect=[le])), lmax=12).passed


def test_expected_rejection():
    raw = scenario("inside", expect_reject="RejectedInput")
    raw["surface"]["parameters"]["radius"] = 1.5
    assert run_scenario(parse_scenario(raw), lmax=12).passed
    raw["expect_reject"] = None
    res = run_scenario(parse_scenario(raw), lmax=12)
    assert not res.passed and res.error.startswith("RejectedInput")


def test_failure_is_isolated():
    broken = scenario("broken")
    broken["surface"]["parameters"]["radius"] = 1.0
    clean = parse_suite(suite_text(scenario("a"), scenario("b")))
    mixed = parse_suite(suite_text(scenario("a"), broken, scenario("b")))
    r_clean, r_mixed = run_suite(clean), run_suite(mixed)
    assert not r_mixed[1].passed
    assert r_mixed[0].values == r_clean[0].values
    assert r_mixed[2].values == r_clean[1].values


def test_determinism_and_parallel_agreement():
    raws = [scenario("a"), scenario("b", functionals=["wang_yau", "consistency_gap"],
                                    tau={"kind": "random", "amplitude": 0.02, "band": 3, "seed": 5})]
    suite = parse_suite(suite_text(*raws))
    serial = results_csv(run_suite(suite, jobs=1))
    again = results_csv(run_suite(suite, jobs=1))
    parallel = results_csv(run_suite(suite, jobs=2))
    assert serial == again == parallel
    assert "wall_time" not in results_json(run_suite(suite), timings=False)


def test_default_out_dir(monkeypatch, tmp_path):
    monkeypatch.delenv(OUT_DIR_ENV, raising=False)
    assert default_out_dir().name == "quasilocal-out"
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
    assert default_out_dir() == tmp_path


def test_sweep_records_failures():
    header, rows = sweep("schwarzschild", [1.5, 8.0], ["hawking"], lmax=12)
    assert header == ["radius", "hawking", "error"]
    assert np.isnan(rows[0][1]) and rows[0][2].startswith("RejectedInput")
    assert rows[1][1] == pytest.approx(1.0, abs=1e-8)


def test_sweep_rejects_unknown_family():
    from quasilocal.errors import RejectedInput

    with pytest.raises(RejectedInput):
        sweep("torus", [1.0], ["hawking"])


def test_convergence_exact_on_round_sphere():
    sc = parse_scenario({"id": "round", "surface": {"family": "round_sphere", "parameters": {"radius": 2.0}},
                         "functionals": ["hawking"]})
    table = convergence_study(sc, [8, 12, 16])
    assert table.monotone
    assert all(d < 1e-12 for d in table.differences[1:])


def test_convergence_schwarzschild_hawking():
    sc = parse_scenario(scenario("s", functionals=["hawking"]))
    table = convergence_study(sc, [8, 16, 24, 32])
    assert table.monotone
    assert table.differences[-1] < 1e-9
    assert table.to_csv().splitlines()[0] == "lmax,hawking,difference"


def test_suite_object_passthrough():
    suite = Suite("inline", 12, (parse_scenario(scenario("a")),))
    assert run_suite(suite)[0].passed


def test_convergence_flags_unresolved_grid():
    # r = 1 + 0.3 Y20 on the light cone cannot be embedded to tolerance at L = 8
    sc = parse_scenario({"id": "lc", "surface": {"ambient": "minkowski", "family": "lightcone",
                                                 "parameters": {"radius": 1.0, "harmonics": [[2, 0, 0.3]]}},
                         "functionals": ["liu_yau"]})
    table = convergence_study(sc, [8, 24, 32])
    assert np.isnan(table.values[0])
    assert "L=8: ConvergenceFailure" in table.flag
    assert table.differences[-1] < 1e-6
    assert table.estimate > 0
