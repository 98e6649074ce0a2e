import json
import math

import pytest

from immunegrid._builtins import BUILDERS
from immunegrid.scenario import (
    BUILTIN_NAMES, KineticsSetup, ScenarioError, builtin_scenario,
    parse_scenario, scenario_digest, serialize_scenario, validate_scenario,
)

MINIMAL = {
    "format_version": 1,
    "name": "toy",
    "epitope_universe": 2,
    "affinity": [{"a": 0, "b": 1, "bind": 0.5, "unbind": 0.5}],
    "molecules": [{"name": "M"}, {"name": "V", "epitopes": [0]}],
    "cells": [
        {"name": "X", "mechanisms": [
            {"name": "go", "actions": [{"kind": "secrete", "molecule": "M"}]},
        ]},
    ],
    "compartments": [{"name": "main", "dims": [4, 4, 4],
                      "initial_cells": {"X": 0.1}}],
    "run": {"ticks": 50},
}


def doc(**overrides):
    d = json.loads(json.dumps(MINIMAL))
    d.update(overrides)
    return d


class TestParsing:
    def test_minimal_round_trip(self):
        sc = parse_scenario(json.dumps(MINIMAL))
        assert parse_scenario(serialize_scenario(sc)) == sc

    def test_builtin_round_trips(self):
        for name in ("feedback_local", "simple_is", "bcell_crosslink"):
            sc = builtin_scenario(name)
            assert parse_scenario(serialize_scenario(sc)) == sc
            assert scenario_digest(parse_scenario(serialize_scenario(sc))) \
                == scenario_digest(sc)

    def test_builtin_files_match_builders(self):
        for name, builder in BUILDERS.items():
            assert builtin_scenario(name) == builder()

    def test_syntax_error_carries_position(self):
        with pytest.raises(ScenarioError, match=r"line \d+ column \d+"):
            parse_scenario('{"format_version": 1,\n "name": }')

    def test_unknown_key_rejected(self):
        with pytest.raises(ScenarioError, match="unknown key.*bogus"):
            parse_scenario(json.dumps(doc(bogus=1)))

    def test_format_version_rejected(self):
        with pytest.raises(ScenarioError, match="format_version"):
            parse_scenario(json.dumps(doc(format_version=99)))

    def test_negative_diffusion_rejected(self):
        d = doc()
        d["compartments"][0]["molecular_diffusion"] = {"M": -0.1}
        with pytest.raises(ScenarioError, match="diffusion"):
            parse_scenario(json.dumps(d))

    def test_empty_action_list_rejected(self):
        d = doc()
        d["cells"][0]["mechanisms"][0]["actions"] = []
        with pytest.raises(ScenarioError, match="non-empty"):
            parse_scenario(json.dumps(d))

    def test_unknown_builtin_lists_names(self):
        with pytest.raises(ScenarioError) as err:
            builtin_scenario("nonexistent")
        for name in BUILTIN_NAMES:
            assert name in str(err.value)


class TestValidation:
    def test_builtins_validate_clean(self):
        for name in ("feedback_local", "simple_is", "bcell_crosslink"):
            report = validate_scenario(builtin_scenario(name))
            assert report.ok, (name, report.errors)

    def test_dangling_molecule_reference(self):
        d = doc()
        d["cells"][0]["mechanisms"][0]["actions"] = [
            {"kind": "secrete", "molecule": "XX"}]
        report = validate_scenario(parse_scenario(json.dumps(d)))
        assert any("XX" in e for e in report.errors)

    def test_pattern_with_undeclared_component(self):
        d = doc()
        d["cells"][0]["mechanisms"][0]["conditions"] = [
            {"kind": "surface_complex", "pattern": "TCR:MHC1"}]
        report = validate_scenario(parse_scenario(json.dumps(d)))
        assert any("TCR" in e for e in report.errors)

    def test_unproducible_molecule_warns(self):
        d = doc()
        d["cells"][0]["mechanisms"][0]["conditions"] = [
            {"kind": "site_molecule_at_least", "pattern": "V"}]
        report = validate_scenario(parse_scenario(json.dumps(d)))
        assert report.ok
        assert any("never produced" in w for w in report.warnings)

    def test_schedule_bounds_checked(self):
        d = doc(schedule=[{"tick": 999, "compartment": "main", "agent": "M",
                           "placement": {"mode": "uniform"}, "count": 5}])
        report = validate_scenario(parse_scenario(json.dumps(d)))
        assert any("outside run length" in e for e in report.errors)

    def test_clonal_molecule_needs_random_epitopes(self):
        d = doc()
        d["molecules"].append({"name": "R", "clonal_epitopes": 1})
        d["cells"][0]["mechanisms"][0]["actions"] = [
            {"kind": "express", "molecule": "R"}]
        report = validate_scenario(parse_scenario(json.dumps(d)))
        assert any("clonal" in e for e in report.errors)


class TestBuiltinNumbers:
    def test_feedback_local_published_values(self):
        sc = builtin_scenario("feedback_local")
        comp = sc.compartments[0]
        assert comp.dims == (80, 80, 10)
        assert comp.initial_cells == {"OC": 0.05, "ID0": 0.01, "ID1": 0.005,
                                      "ID2": 0.005, "AID": 0.01}
        assert sc.molecules["C1"].mean_lifetime == 100
        assert sc.molecules["C2"].mean_lifetime == 100
        assert comp.molecular_diffusion == {"C1": 0.0001, "C2": 0.0001}
        assert all(v == 0.01 for v in comp.cellular_diffusion.values())
        for ct in sc.cells.values():
            assert math.isinf(ct.mean_lifetime)

    def test_kinetics_fig1_row(self):
        setup = builtin_scenario("kinetics_fig1")
        assert isinstance(setup, KineticsSetup)
        p = setup.params
        assert (p.p_infect, p.p_kill, p.p_resp, p.s) == (0.3, 0.5, 0.1, 0.01)
        assert (p.d_I, p.d_K, p.d_C) == (0.01, 0.01, 0.01)
        assert setup.init.as_tuple() == (0.1, 0.1, 1.0)

    def test_kinetics_fig2_row(self):
        p = builtin_scenario("kinetics_fig2").params
        assert (p.p_kill, p.p_resp) == (1.0, 0.8)
        assert (p.p_infect, p.s) == (0.3, 0.01)


class TestValidatedScenariosRun:
    def test_fuzzed_valid_scenarios_run_clean(self):
        # anything that passes validation must run without engine faults
        import numpy as np
        from immunegrid.runner import Runner
        rng = np.random.default_rng(77)
        for trial in range(5):
            d = doc()
            d["name"] = f"fuzz{trial}"
            d["run"] = {"ticks": 100}
            d["molecules"] = [
                {"name": "M", "mean_lifetime": int(rng.integers(2, 50))},
                {"name": "V", "epitopes": [0], "fragments": ["M"],
                 "mean_lifetime": int(rng.integers(5, 100))},
                {"name": "R", "epitopes": [1]},
            ]
            d["cells"] = [
                {"name": "X", "mean_lifetime": int(rng.integers(30, 200)),
                 "mechanisms": [
                     {"name": "homeo", "conditions": [
                         {"kind": "surface_count_at_least", "pattern": "R",
                          "side_scoped": True, "negated": True}],
                      "actions": [{"kind": "express", "molecule": "R",
                                   "side": "matched"}]},
                     {"name": "eat", "conditions": [
                         {"kind": "surface_complex", "pattern": "R:V"}],
                      "actions": [{"kind": "ingest", "pattern": "R:V"}]},
                     {"name": "grow",
                      "actions": [{"kind": "divide"}],
                      "prob": float(rng.uniform(0.01, 0.3))},
                 ]},
            ]
            d["compartments"][0]["initial_cells"] = {"X": float(rng.uniform(0.02, 0.2))}
            d["compartments"][0]["molecular_diffusion"] = {
                "V": float(rng.uniform(0, 0.5)), "M": float(rng.uniform(0, 0.5))}
            d["schedule"] = [{"tick": 10, "compartment": "main", "agent": "V",
                              "placement": {"mode": "uniform"}, "count": 40}]
            sc = parse_scenario(json.dumps(d))
            report = validate_scenario(sc)
            assert report.ok, report.errors
            runner = Runner(sc, seed=trial)
            runner.advance(100)
            runner.world.validate()
