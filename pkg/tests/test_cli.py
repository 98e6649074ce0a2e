import json
import os
import socket

import pytest

from immunegrid.cli import main
from tests.test_runner_eventlog import TOY


class TestOde:
    def test_fixed_point_fig1(self, capsys):
        assert main(["ode", "--params", "kinetics_fig1", "--fixed-point"]) == 0
        out = capsys.readouterr().out.strip()
        assert out == "0.1 0.13 0.25"

    def test_fixed_point_fig2(self, capsys):
        assert main(["ode", "--params", "kinetics_fig2", "--fixed-point"]) == 0
        vals = [float(v) for v in capsys.readouterr().out.split()]
        assert vals[0] == pytest.approx(0.0125, abs=1e-9)

    def test_trajectory_columns(self, capsys):
        rc = main(["ode", "--params", "kinetics_fig1", "--t-end", "10",
                   "--dt", "0.1", "--sample-every", "10"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("#")
        row = lines[1].split("\t")
        assert len(row) == 4 and float(row[0]) == 0.0

    def test_bad_dt_exits_2(self):
        assert main(["ode", "--params", "kinetics_fig1", "--dt", "0"]) == 2

    def test_bad_params_file_exits_2(self):
        assert main(["ode", "--params", "/nonexistent.json"]) == 2

    def test_params_from_file(self, tmp_path, capsys):
        p = tmp_path / "p.json"
        p.write_text(json.dumps({
            "params": {"p_infect": 0.3, "p_kill": 0.5, "p_resp": 0.1,
                       "s": 0.01, "d_I": 0.01, "d_K": 0.01, "d_C": 0.01},
            "init": {"I": 0.1, "K": 0.1, "C": 1.0}}))
        assert main(["ode", "--params", str(p), "--fixed-point"]) == 0
        assert capsys.readouterr().out.strip() == "0.1 0.13 0.25"


class TestScenarios:
    def test_list(self, capsys):
        assert main(["scenarios"]) == 0
        names = capsys.readouterr().out.split()
        assert names == ["feedback_local", "simple_is", "bcell_crosslink",
                         "kinetics_fig1", "kinetics_fig2"]

    def test_show(self, capsys):
        assert main(["scenarios", "--show", "bcell_crosslink"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["name"] == "bcell_crosslink"


class TestRun:
    def test_unknown_builtin_exits_2_and_lists_names(self, capsys):
        rc = main(["run", "--scenario", "nonsense", "--seed", "1",
                   "--out", "/tmp/x"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "simple_is" in err and "feedback_local" in err

    def test_run_writes_outputs(self, tmp_path, capsys):
        scenario = tmp_path / "toy.json"
        scenario.write_text(json.dumps(TOY))
        out = tmp_path / "out"
        rc = main(["run", "--scenario", str(scenario), "--seed", "4",
                   "--ticks", "20", "--out", str(out),
                   "--slice", "main:V:z:0", "--profile", "main:V:x"])
        assert rc == 0
        assert (out / "events.log").exists()
        census = (out / "census_main.csv").read_text().splitlines()
        assert census[0].startswith("tick,")
        assert "X" in census[0]
        assert len(census) == 22          # header + tick 0 + 20 ticks
        assert (out / "slice_V_z0.txt").exists()
        assert (out / "profile_V_x.txt").exists()

    def test_invalid_scenario_exits_2(self, tmp_path, capsys):
        bad = json.loads(json.dumps(TOY))
        bad["cells"][0]["mechanisms"][0]["actions"] = [
            {"kind": "secrete", "molecule": "GHOST"}]
        f = tmp_path / "bad.json"
        f.write_text(json.dumps(bad))
        rc = main(["run", "--scenario", str(f), "--seed", "1",
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "GHOST" in capsys.readouterr().err

    def test_run_then_analyze_pipeline(self, tmp_path, capsys):
        scenario = tmp_path / "toy.json"
        scenario.write_text(json.dumps(TOY))
        out = tmp_path / "out"
        main(["run", "--scenario", str(scenario), "--seed", "4",
              "--out", str(out)])
        capsys.readouterr()
        rc = main(["analyze", "--log", str(out / "events.log"),
                   "--perms", "50", "--seed", "1", "--verify"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert "levels" in doc

    def test_analyze_corrupt_log_exits_2(self, tmp_path, capsys):
        f = tmp_path / "junk.log"
        f.write_text('{"format": "immunegrid-log/1", "digest": "x", '
                     '"seed": 1, "ticks": 5, "scenario": {}}\n{broken\n')
        rc = main(["analyze", "--log", str(f)])
        assert rc == 2
        assert "line 2" in capsys.readouterr().err


class TestServe:
    def test_port_in_use_exits_2(self, capsys):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        sock.listen(1)
        try:
            rc = main(["serve", "--port", str(port)])
            assert rc == 2
        finally:
            sock.close()
