import io
import json

import pytest

from immunegrid.eventlog import LogError, action_events, read_log, replay
from immunegrid.runner import Runner
from immunegrid.scenario import builtin_scenario, parse_scenario

TOY = {
    "format_version": 1,
    "name": "toy_run",
    "epitope_universe": 2,
    "affinity": [{"a": 0, "b": 1, "bind": 0.4, "unbind": 0.2}],
    "molecules": [{"name": "V", "epitopes": [0], "mean_lifetime": 60},
                  {"name": "R", "epitopes": [1]}],
    "cells": [
        {"name": "X", "mean_lifetime": 300, "mechanisms": [
            {"name": "homeo", "conditions": [
                {"kind": "surface_count_at_least", "pattern": "R",
                 "side_scoped": True, "negated": True}],
             "actions": [{"kind": "express", "molecule": "R", "side": "matched"}],
             "log": False},
            {"name": "grow", "actions": [{"kind": "divide"}], "prob": 0.1},
        ]},
    ],
    "compartments": [{"name": "main", "dims": [6, 6, 4],
                      "initial_cells": {"X": 0.15},
                      "molecular_diffusion": {"V": 0.2}}],
    "schedule": [{"tick": 5, "compartment": "main", "agent": "V",
                  "placement": {"mode": "wall", "axis": 0, "face": 0},
                  "count": 30}],
    "run": {"ticks": 40},
}


def toy_scenario():
    return parse_scenario(json.dumps(TOY))


def run_to_log(seed=9, live_injection=None, path=None, tmp_path=None):
    stream = io.StringIO()
    runner = Runner(toy_scenario(), seed, log_stream=stream)
    if live_injection is not None:
        runner.run_to(live_injection)
        runner.inject("main", "V", ("point", 2, 2, 2), 7, live=True)
    while not runner.finished:
        runner.step()
    runner.finalize()
    text = stream.getvalue()
    if tmp_path is not None:
        p = tmp_path / (path or "run.log")
        p.write_text(text)
        return runner, str(p)
    return runner, text


class TestDeterminism:
    def test_same_seed_byte_identical_logs(self):
        _, a = run_to_log(seed=9)
        _, b = run_to_log(seed=9)
        assert a == b

    def test_different_seed_differs(self):
        _, a = run_to_log(seed=9)
        _, b = run_to_log(seed=10)
        assert a != b

    def test_census_history_stable(self):
        r1, _ = run_to_log(seed=4)
        r2, _ = run_to_log(seed=4)
        assert r1.census_history == r2.census_history


class TestReplay:
    def test_replay_reproduces_final_hash(self, tmp_path):
        runner, path = run_to_log(seed=9, tmp_path=tmp_path)
        assert replay(path) == runner.world.state_hash()

    def test_replay_with_live_injection(self, tmp_path):
        runner, path = run_to_log(seed=9, live_injection=12, tmp_path=tmp_path)
        assert replay(path) == runner.world.state_hash()

    def test_truncated_log_reports_line(self, tmp_path):
        _, path = run_to_log(seed=9, tmp_path=tmp_path)
        lines = open(path).read().splitlines()
        p = tmp_path / "trunc.log"
        p.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(LogError, match="truncated|trailer"):
            replay(str(p))

    def test_corrupt_record_reports_line_number(self, tmp_path):
        _, path = run_to_log(seed=9, tmp_path=tmp_path)
        lines = open(path).read().splitlines()
        lines[3] = lines[3][:-4]
        p = tmp_path / "bad.log"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(LogError, match="line 4"):
            read_log(str(p))

    def test_header_digest_checked(self, tmp_path):
        _, path = run_to_log(seed=9, tmp_path=tmp_path)
        lines = open(path).read().splitlines()
        header = json.loads(lines[0])
        header["digest"] = "0" * 64
        p = tmp_path / "digest.log"
        p.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(LogError, match="digest"):
            replay(str(p))


class TestLogContent:
    def test_records_parse_and_order(self, tmp_path):
        _, path = run_to_log(seed=9, tmp_path=tmp_path)
        header, records = read_log(path)
        assert header.seed == 9
        ticks = [r["t"] for r in records if r["r"] == "a"]
        assert ticks == sorted(ticks)
        events = action_events(records)
        assert events and all(e.kind for e in events)

    def test_scheduled_injection_recorded_not_live(self, tmp_path):
        _, path = run_to_log(seed=9, tmp_path=tmp_path)
        _, records = read_log(path)
        injections = [r for r in records if r["r"] == "i"]
        assert len(injections) == 1
        assert injections[0]["live"] is False
        assert injections[0]["placed"] == 30

    def test_advance_clips_at_run_length(self):
        runner = Runner(toy_scenario(), 3)
        done = runner.advance(10 ** 6)
        assert done == 40
        assert runner.finished
        with pytest.raises(RuntimeError):
            runner.step()

    def test_live_injection_into_finished_run_rejected(self):
        runner = Runner(toy_scenario(), 3)
        runner.advance(10 ** 6)
        with pytest.raises(RuntimeError):
            runner.inject("main", "V", ("uniform",), 1, live=True)


class TestBuiltinReplayShort:
    def test_bcell_crosslink_replays(self, tmp_path):
        sc = builtin_scenario("bcell_crosslink")
        sc.ticks = 30
        stream = io.StringIO()
        runner = Runner(sc, 2, log_stream=stream)
        runner.advance(30)
        runner.finalize()
        p = tmp_path / "bc.log"
        p.write_text(stream.getvalue())
        assert replay(str(p)) == runner.world.state_hash()
