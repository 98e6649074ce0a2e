from collections import Counter

import numpy as np
import pytest

from immunegrid.chemistry import enumerate_surface_complexes
from immunegrid.core import (
    Action, AffinityTable, CellType, Condition, Mechanism, MoleculeType,
)
from immunegrid.engine import CellSnapshot, Engine, evaluate_condition, evaluate_mechanism
from immunegrid.lattice import CompartmentSpec, World


def build(molecules=(), cells=(), pairs=(), dims=(4, 4, 4), seed=17,
          universe=4, **world_kw):
    table = AffinityTable(universe)
    for a, b, on, off in pairs:
        table.add_pair(a, b, on, off)
    mt = {m.name: m for m in molecules}
    ct = {c.name: c for c in cells}
    return World(table, mt, ct, [CompartmentSpec("box", dims, **world_kw)],
                 seed=seed)


B = MoleculeType("B", epitopes=(0,))
C = MoleculeType("C", epitopes=(1,))
D = MoleculeType("D", epitopes=(2,))


class TestConditions:
    def _cell_with_bc_d(self):
        w = build([B, C, D], [CellType("X")], pairs=[(0, 1, 1, 0)])
        cell = w.spawn_cell("X", "box", 21)
        b = w.spawn_membrane(cell, "B", 0)
        c = w.spawn_membrane(cell, "C", 0)
        w.spawn_membrane(cell, "D", 2)
        w.form_bond(((b.id, 0, c.id, 0),), 0.0)
        return w, cell

    def test_conjunction_over_complex_and_molecule(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        both = Mechanism("m", conditions=(
            Condition("surface_complex", pattern="B:C"),
            Condition("surface_complex", pattern="D"),
        ), actions=(Action("divide"),))
        assert evaluate_mechanism(snap, both) is not None

    def test_and_not_flips(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        m = Mechanism("m", conditions=(
            Condition("surface_complex", pattern="B:C"),
            Condition("surface_complex", pattern="D", negated=True),
        ), actions=(Action("divide"),))
        assert evaluate_mechanism(snap, m) is None

    def test_one_failed_conjunct_blocks(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        m = Mechanism("m", conditions=(
            Condition("surface_complex", pattern="B:C"),
            Condition("surface_complex", pattern="B"),     # all B are bound
        ), actions=(Action("divide"),))
        assert evaluate_mechanism(snap, m) is None

    def test_constitutive_always_fires(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        m = Mechanism("m", actions=(Action("divide"),))
        assert evaluate_mechanism(snap, m) == (m.actions, None)

    def test_threshold_counts_whole_membrane(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        ok, _ = evaluate_condition(
            snap, Condition("surface_count_at_least", pattern="D", threshold=1))
        assert ok
        ok, _ = evaluate_condition(
            snap, Condition("surface_count_at_most", pattern="D", threshold=1))
        assert ok

    def test_side_scoped_matching(self):
        w, cell = self._cell_with_bc_d()
        snap = CellSnapshot(w, cell)
        ok, sides = evaluate_condition(
            snap, Condition("surface_count_at_least", pattern="D", threshold=1,
                            side_scoped=True))
        assert ok and sides == {2}
        ok, sides = evaluate_condition(
            snap, Condition("surface_count_at_least", pattern="D", threshold=1,
                            side_scoped=True, negated=True))
        assert ok and sides == {0, 1, 3, 4, 5}

    def test_contact_and_site_conditions(self):
        w = build([B], [CellType("X"), CellType("Y")])
        x = w.spawn_cell("X", "box", 21)
        w.spawn_cell("Y", "box", 22)
        w.spawn_soluble("B", "box", 21, 2)
        snap = CellSnapshot(w, x)
        assert evaluate_condition(snap, Condition("contact_cell_type",
                                                  labels=("Y",)))[0]
        assert not evaluate_condition(snap, Condition("contact_cell_type",
                                                      labels=("Z",)))[0]
        assert evaluate_condition(snap, Condition("site_molecule_at_least",
                                                  pattern="B", threshold=2))[0]
        assert not evaluate_condition(snap, Condition("site_molecule_at_least",
                                                      pattern="B", threshold=3))[0]


def run_ticks(world, n, **engine_kw):
    eng = Engine(world, **engine_kw)
    reports = [eng.step() for _ in range(n)]
    return eng, reports


class TestActions:
    def test_kill_contact_removes_neighbor(self):
        killer_type = CellType("K", mechanisms=(
            Mechanism("kill", conditions=(Condition("contact_cell_type",
                                                    labels=("T",)),),
                      actions=(Action("kill_contact", target=("T",)),)),
        ))
        w = build([], [killer_type, CellType("T")])
        w.spawn_cell("K", "box", 21)
        w.spawn_cell("T", "box", 22)
        _, reports = run_ticks(w, 1)
        assert w.census()["box"].get("T", 0) == 0
        kinds = [(e.kind, e.label, e.target) for e in reports[0].events]
        assert ("kill", "K", "T") in kinds
        assert ("die", "T", "killed") in kinds

    def test_contested_division_one_winner(self):
        divider = CellType("P", mechanisms=(
            Mechanism("go", actions=(Action("divide"),)),
        ))
        w = build([], [divider], dims=(3, 1, 1))
        w.spawn_cell("P", "box", 0)
        w.spawn_cell("P", "box", 2)   # both must target site 1
        _, reports = run_ticks(w, 1)
        assert w.census()["box"]["P"] == 3
        counts = reports[0].action_counts
        assert counts["divide"] == 1
        assert counts["division_blocked"] == 1

    def test_division_blocked_when_no_free_neighbor(self):
        divider = CellType("P", mechanisms=(
            Mechanism("go", actions=(Action("divide"),)),
        ))
        w = build([], [divider], dims=(1, 1, 1))
        w.spawn_cell("P", "box", 0)
        _, reports = run_ticks(w, 1)
        assert reports[0].action_counts["division_blocked"] == 1

    def test_burst_releases_internal_content(self):
        v = MoleculeType("V", epitopes=(0,))
        burster = CellType("I", mechanisms=(
            Mechanism("fill", actions=(
                Action("secrete", molecule="V", where="internal"),), log=False),
            Mechanism("burst", conditions=(
                Condition("internal_molecule_at_least", pattern="V", threshold=3),),
                actions=(Action("die", release_internal=True),)),
        ))
        w = build([v], [burster])
        w.spawn_cell("I", "box", 21)
        _, reports = run_ticks(w, 4)
        assert w.census()["box"].get("I", 0) == 0
        assert w.census()["box"]["V"] == 3
        all_events = [e for r in reports for e in r.events]
        assert any(e.kind == "die" and e.target == "burst" for e in all_events)

    def test_differentiate_preserves_clone_identity(self):
        t2 = CellType("T2", random_epitopes=2)
        t1 = CellType("T1", random_epitopes=2, mechanisms=(
            Mechanism("go", actions=(Action("differentiate", cell_type="T2"),)),
        ))
        w = build([], [t1, t2])
        cell = w.spawn_cell("T1", "box", 21)
        clone, eps = cell.clone_id, cell.random_epitopes
        run_ticks(w, 1)
        assert cell.ctype.name == "T2" and cell.label == "T2"
        assert cell.clone_id == clone and cell.random_epitopes == eps

    def test_clone_heredity_through_lineage(self):
        # divide + differentiate across generations: every descendant keeps
        # the founder's clone id and receptor draw
        t2 = CellType("T2", random_epitopes=2, mechanisms=(
            Mechanism("grow", actions=(Action("divide"),), prob=0.5),
        ))
        t1 = CellType("T1", random_epitopes=2, mechanisms=(
            Mechanism("grow", actions=(Action("divide"),), prob=0.5),
            Mechanism("go", actions=(Action("differentiate", cell_type="T2"),),
                      prob=0.3),
        ))
        w = build([], [t1, t2], dims=(6, 6, 6), seed=3)
        founder = w.spawn_cell("T1", "box", 0)
        clone, eps = founder.clone_id, founder.random_epitopes
        run_ticks(w, 30)
        assert len(w.cells) > 5
        for cell in w.cells.values():
            assert cell.clone_id == clone
            assert cell.random_epitopes == eps

    def test_add_remove_mechanism_and_relabel(self):
        extra = Mechanism("extra", actions=(Action("divide"),), prob=0.001)
        t = CellType("T", mechanisms=(
            Mechanism("edit", actions=(
                Action("add_mechanism", mechanisms=(extra,), relabel="T*",
                       names=("edit",)),)),
        ))
        w = build([], [t])
        cell = w.spawn_cell("T", "box", 21)
        _, reports = run_ticks(w, 1)
        assert cell.label == "T*"
        assert [m.name for m in cell.mechanisms] == ["extra"]
        assert w.census()["box"] == {"T*": 1}
        assert any(e.kind == "relabel" and e.label == "T*" and e.target == "T"
                   for e in reports[0].events)
        # type mechanism list untouched
        assert [m.name for m in t.mechanisms] == ["edit"]

    def test_express_matched_side_homeostasis(self):
        r = MoleculeType("R", epitopes=(0,))
        t = CellType("T", mechanisms=(
            Mechanism("homeo", conditions=(
                Condition("surface_count_at_least", pattern="R", threshold=1,
                          side_scoped=True, negated=True),),
                actions=(Action("express", molecule="R", side="matched"),),
                log=False),
        ))
        w = build([r], [t])
        cell = w.spawn_cell("T", "box", 21)
        run_ticks(w, 3)
        assert all(len(side) == 1 for side in cell.membrane)

    def test_present_loads_internal_epitope(self):
        v = MoleculeType("V", epitopes=(3,))
        mhc = MoleculeType("MHC", epitopes=(0,), presentation_slot=True)
        t = CellType("T", mechanisms=(
            Mechanism("show", conditions=(
                Condition("internal_molecule_at_least", pattern="V"),),
                actions=(Action("present", molecule="MHC", source="V",
                                side=0),)),
        ))
        w = build([v, mhc], [t])
        cell = w.spawn_cell("T", "box", 21)
        cell.add_internal("V", (3,))
        run_ticks(w, 1)
        inst = w.instances[cell.membrane[0][0]]
        assert inst.mtype.name == "MHC"
        assert inst.presented_epitope == 3
        assert cell.internal_count("V") == 1   # presentation does not consume


class TestSnapshotSemantics:
    def test_actions_invisible_within_their_tick(self):
        # the probe mechanism conditions on state its sibling creates: the
        # effect must only be visible one tick later
        x = MoleculeType("X", epitopes=(0,))
        t = CellType("T", mechanisms=(
            Mechanism("make", actions=(
                Action("secrete", molecule="X", where="internal"),)),
            Mechanism("react", conditions=(
                Condition("internal_molecule_at_least", pattern="X"),),
                actions=(Action("die"),)),
        ))
        w = build([x], [t])
        w.spawn_cell("T", "box", 21)
        eng = Engine(w)
        eng.step()
        assert w.census()["box"].get("T", 0) == 1   # alive: no self-trigger
        eng.step()
        assert w.census()["box"].get("T", 0) == 0   # reacts to last tick's state


class TestBookkeeping:
    def _busy_world(self, seed=29):
        prey = CellType("P", mean_lifetime=40, mechanisms=(
            Mechanism("grow", actions=(Action("divide"),), prob=0.2),
        ))
        hunter = CellType("H", mechanisms=(
            Mechanism("kill", conditions=(Condition("contact_cell_type",
                                                    labels=("P",)),),
                      actions=(Action("kill_contact", target=("P",)),),
                      prob=0.5),
            Mechanism("roam", actions=(Action("move_random"),), prob=0.8),
        ))
        w = build([], [prey, hunter], dims=(6, 6, 6), seed=seed,
                  cellular_diffusion={"P": 0.05})
        for s in range(0, 200, 17):
            w.spawn_cell("P", "box", s)
        for s in range(5, 200, 41):
            w.spawn_cell("H", "box", s)
        return w

    def test_every_removed_cell_reported_once_with_cause(self):
        w = self._busy_world()
        before = set(w.cells)
        eng = Engine(w)
        deaths = []
        for _ in range(60):
            deaths.extend(e for e in eng.step().events if e.kind == "die")
        after = set(w.cells)
        removed = before - after
        died_ids = [e.cell_id for e in deaths if e.cell_id in before]
        assert len(died_ids) == len(set(died_ids))
        assert set(died_ids) >= removed
        assert all(e.target in ("killed", "suicide", "natural", "burst")
                   for e in deaths)

    def test_census_matches_birth_death_ledger(self):
        w = self._busy_world(seed=31)
        eng = Engine(w)
        prev = Counter({k: v for k, v in w.census()["box"].items()})
        for _ in range(40):
            report = eng.step()
            cur = Counter({k: v for k, v in report.census["box"].items()})
            delta = Counter()
            for e in report.events:
                if e.kind == "born":
                    delta[e.label] += 1
                elif e.kind == "die":
                    delta[e.label] -= 1
                elif e.kind in ("relabel",):
                    delta[e.label] += 1
                    delta[e.target] -= 1
                elif e.kind == "differentiate":
                    delta[e.label] -= 1
                    delta[e.target] += 1
            for label in set(prev) | set(cur) | set(delta):
                assert cur.get(label, 0) - prev.get(label, 0) == delta.get(label, 0), label
            prev = cur

    def test_occupancy_and_structure_after_adversarial_run(self):
        w = self._busy_world(seed=37)
        eng = Engine(w)
        for _ in range(50):
            eng.step()
            w.validate()

    def test_determinism_of_tick_reports(self):
        def run(seed):
            w = self._busy_world(seed=seed)
            eng = Engine(w)
            return [(r.tick, tuple(sorted(r.action_counts.items())),
                     tuple(sorted(r.census["box"].items())))
                    for r in (eng.step() for _ in range(50))], w.state_hash()

        assert run(43) == run(43)
        assert run(43) != run(44)

    def test_natural_death_hazard(self):
        t = CellType("T", mean_lifetime=50)
        w = build([], [t], dims=(20, 20, 10), seed=8)
        for s in range(2000):
            w.spawn_cell("T", "box", s)
        eng = Engine(w)
        eng.step()
        deaths = 2000 - w.census()["box"]["T"]
        # Binomial(2000, 0.02): mean 40, sigma 6.26
        assert abs(deaths - 40) < 19


class TestMassLedger:
    def test_chemistry_rich_run_balances(self):
        v = MoleculeType("V", epitopes=(1,), mean_lifetime=30, fragments=("F",))
        f = MoleculeType("F", mean_lifetime=20)
        r = MoleculeType("R", epitopes=(0,))
        eater = CellType("E", mechanisms=(
            Mechanism("homeo", conditions=(
                Condition("surface_count_at_least", pattern="R", threshold=1,
                          side_scoped=True, negated=True),),
                actions=(Action("express", molecule="R", side="matched"),),
                log=False),
            Mechanism("eat", conditions=(
                Condition("surface_complex", pattern="R:V"),),
                actions=(Action("ingest", pattern="R:V"),)),
            Mechanism("spit", actions=(
                Action("secrete", molecule="F", count=2),), prob=0.3),
        ))
        w = build([v, f, r], [eater], dims=(5, 5, 5), seed=51,
                  pairs=[(0, 1, 0.4, 0.1)],
                  molecular_diffusion={"V": 0.3, "F": 0.2})
        for s in range(0, 125, 30):
            w.spawn_cell("E", "box", s)
        w.spawn_soluble("V", "box", 62, 80)
        eng = Engine(w, track_ledger=True)
        for _ in range(40):
            report = eng.step()
            assert report.ledger["balanced"], report.ledger
