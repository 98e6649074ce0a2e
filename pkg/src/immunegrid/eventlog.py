"""Event-log files: newline-delimited records with a digest header.

Line 1 is a header object carrying the scenario document, its digest and
the seed, so a log is self-contained for replay.  Every following line is
one record: action/lifecycle events (``"r": "a"``), bond events
(``"r": "b"``), injections (``"r": "i"``) and the final-hash trailer
(``"r": "end"``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterator, Optional

from .events import ActionEvent, BondEvent

LOG_FORMAT = "immunegrid-log/1"


class LogError(ValueError):
    """A log file is malformed; carries the offending line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class LogHeader:
    scenario_doc: dict
    digest: str
    seed: int
    ticks: int


class LogWriter:
    def __init__(self, fh: IO[str], scenario_doc: dict, digest: str,
                 seed: int, ticks: int):
        self._fh = fh
        header = {"format": LOG_FORMAT, "digest": digest, "seed": seed,
                  "ticks": ticks, "scenario": scenario_doc}
        self._fh.write(json.dumps(header, sort_keys=True) + "\n")

    def action(self, e: ActionEvent) -> None:
        rec = {"r": "a", "t": e.tick, "c": e.compartment,
               "p": [e.x, e.y, e.z], "i": e.cell_id, "n": e.clone_id,
               "l": e.label, "k": e.kind}
        if e.target is not None:
            rec["g"] = e.target
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def bond(self, e: BondEvent) -> None:
        rec = {"r": "b", "t": e.tick, "c": e.compartment,
               "p": [e.x, e.y, e.z], "k": e.kind, "m": e.molecule,
               "q": [list(p) for p in e.participants]}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def injection(self, tick: int, compartment: str, agent: str,
                  placement: tuple, count: int, placed: int,
                  live: bool) -> None:
        rec = {"r": "i", "t": tick, "c": compartment, "a": agent,
               "pl": list(placement), "n": count, "placed": placed,
               "live": live}
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def final(self, tick: int, world_hash: str) -> None:
        self._fh.write(json.dumps({"r": "end", "t": tick, "hash": world_hash},
                                  sort_keys=True) + "\n")
        self._fh.flush()


def read_log(path: str) -> tuple[LogHeader, list[dict]]:
    """Parse a log file; raises LogError with the offending line number."""
    records: list[dict] = []
    header: Optional[LogHeader] = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise LogError(f"unparseable record: {e.msg}", lineno) from e
            if lineno == 1:
                if doc.get("format") != LOG_FORMAT:
                    raise LogError(
                        f"not an event log (format {doc.get('format')!r})", 1)
                header = LogHeader(doc["scenario"], doc["digest"],
                                   doc["seed"], doc["ticks"])
                continue
            if "r" not in doc:
                raise LogError("record without a kind tag", lineno)
            records.append(doc)
    if header is None:
        raise LogError("empty file: missing header", 1)
    return header, records


def action_events(records: list[dict]) -> list[ActionEvent]:
    out = []
    for rec in records:
        if rec.get("r") != "a":
            continue
        x, y, z = rec["p"]
        out.append(ActionEvent(rec["t"], rec["c"], x, y, z, rec["i"],
                               rec["n"], rec["l"], rec["k"], rec.get("g")))
    return out


def replay(path: str) -> str:
    """Re-execute a log's run and verify the recorded final hash.

    Returns the reproduced hash; raises LogError on digest mismatch, hash
    mismatch, or a truncated log (missing trailer).
    """
    from .runner import Runner
    from .scenario import Scenario, scenario_digest, parse_scenario
    import json as _json

    header, records = read_log(path)
    scenario = parse_scenario(_json.dumps(header.scenario_doc))
    if scenario_digest(scenario) != header.digest:
        raise LogError("scenario digest mismatch: log header is inconsistent", 1)
    trailer = [r for r in records if r.get("r") == "end"]
    if not trailer:
        raise LogError("truncated log: missing final-hash trailer",
                       len(records) + 2)
    target_tick = trailer[-1]["t"]
    live = [r for r in records
            if r.get("r") == "i" and r.get("live") and r["t"] <= target_tick]
    runner = Runner(scenario, header.seed)
    for rec in live:
        runner.run_to(rec["t"])
        placement = tuple(rec["pl"])
        runner.inject(rec["c"], rec["a"], placement, rec["n"], live=True)
    runner.run_to(target_tick)
    got = runner.world.state_hash()
    want = trailer[-1]["hash"]
    if got != want:
        raise LogError(f"replay hash mismatch: got {got[:12]}, "
                       f"log says {want[:12]}")
    return got
