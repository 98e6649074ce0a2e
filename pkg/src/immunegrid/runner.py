"""Headless run orchestration shared by the CLI and the service.

A Runner owns one world and its engine, applies the scenario's injection
schedule between ticks, collects the census history, and (optionally)
streams events to a log file.  Both the batch CLI and the HTTP service
drive runs through this class, which is what makes their outputs
byte-identical for the same scenario and seed.
"""
from __future__ import annotations

import io
from typing import Callable, Optional

import numpy as np

from .engine import Engine
from .events import TickReport
from .eventlog import LogWriter
from .lattice import World
from .scenario import Scenario, scenario_digest, scenario_doc, validate_scenario


def build_world(scenario: Scenario, seed: int) -> World:
    """World at tick 0 with initial concentrations sampled per site."""
    world = World(scenario.affinity, scenario.molecules, scenario.cells,
                  scenario.compartments, scenario.transfers, seed=seed)
    for spec in scenario.compartments:
        comp = world.compartments[spec.name]
        for type_name, conc in spec.initial_cells.items():
            if conc <= 0:
                continue
            mask = world.rng.random(comp.nsites) < conc
            for site in np.nonzero(mask)[0]:
                if comp.cell_grid[site] == -1:
                    world.spawn_cell(type_name, spec.name, int(site))
        for type_name, conc in spec.initial_molecules.items():
            if conc <= 0:
                continue
            counts = world.rng.poisson(conc, comp.nsites)
            for site in np.nonzero(counts)[0]:
                world.spawn_soluble(type_name, spec.name, int(site),
                                    int(counts[site]))
    return world


class Runner:
    def __init__(self, scenario: Scenario, seed: int,
                 log_stream: Optional[io.TextIOBase] = None,
                 collect_bond_events: bool = False,
                 tick_callback: Optional[Callable[[TickReport], None]] = None):
        report = validate_scenario(scenario)
        report.raise_if_failed()
        self.scenario = scenario
        self.seed = seed
        self.digest = scenario_digest(scenario)
        self.world = build_world(scenario, seed)
        self.engine = Engine(self.world, collect_bond_events=collect_bond_events)
        self.tick_callback = tick_callback
        self._schedule = sorted(scenario.schedule, key=lambda i: i.tick)
        self._writer: Optional[LogWriter] = None
        if log_stream is not None:
            self._writer = LogWriter(log_stream, scenario_doc(scenario),
                                     self.digest, seed, scenario.ticks)
        self.census_history: list[tuple[int, dict]] = [(0, self.world.census())]
        self.reports: list[TickReport] = []
        self.keep_reports = False
        self._finalized = False

    @property
    def tick(self) -> int:
        return self.world.tick

    @property
    def finished(self) -> bool:
        return self.world.tick >= self.scenario.ticks

    def inject(self, compartment: str, agent: str, placement: tuple,
               count: int, live: bool = False) -> int:
        if self.finished and live:
            raise RuntimeError("run is finished; no further injections")
        placed = self.world.inject(compartment, agent, placement, count)
        if self._writer is not None:
            self._writer.injection(self.world.tick, compartment, agent,
                                   placement, count, placed, live)
        return placed

    def _apply_schedule(self) -> None:
        for inj in self._schedule:
            if inj.tick == self.world.tick:
                self.inject(inj.compartment, inj.agent, inj.placement,
                            inj.count, live=False)
        self._schedule = [i for i in self._schedule if i.tick > self.world.tick]

    def step(self) -> TickReport:
        if self.finished:
            raise RuntimeError("run already finished")
        self._apply_schedule()
        report = self.engine.step()
        if self._writer is not None:
            for e in report.events:
                self._writer.action(e)
            for e in report.bond_events:
                self._writer.bond(e)
        self.census_history.append((report.tick, report.census))
        if self.keep_reports:
            self.reports.append(report)
        if self.tick_callback is not None:
            self.tick_callback(report)
        return report

    def advance(self, n: int) -> int:
        """Step up to n ticks, clipped at the scenario run length."""
        done = 0
        while done < n and not self.finished:
            self.step()
            done += 1
        return done

    def run_to(self, tick: int) -> None:
        while self.world.tick < min(tick, self.scenario.ticks):
            self.step()

    def finalize(self) -> str:
        """Write the final-hash trailer (idempotent); returns the hash."""
        h = self.world.state_hash()
        if self._writer is not None and not self._finalized:
            self._writer.final(self.world.tick, h)
            self._finalized = True
        return h

    # -- table output -------------------------------------------------------

    def census_columns(self, compartment: str) -> tuple[list[str], list[list[int]]]:
        """Wide census table for one compartment: header plus one row per tick."""
        agents: list[str] = []
        seen = set()
        for _, census in self.census_history:
            for agent in census.get(compartment, {}):
                if agent not in seen:
                    seen.add(agent)
                    agents.append(agent)
        header = ["tick"] + agents
        rows = []
        for tick, census in self.census_history:
            entry = census.get(compartment, {})
            rows.append([tick] + [entry.get(a, 0) for a in agents])
        return header, rows
