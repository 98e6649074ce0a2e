"""The tick engine: evaluates cell mechanisms against start-of-tick state and
executes the resulting actions with deterministic conflict resolution.

Phase order inside one tick:

  1. molecular + cellular diffusion
  2. bond chemistry (unbind, then bind)
  3/4. evaluate every cell's mechanisms in seeded-random order against the
       post-chemistry state; nothing mutates during evaluation, so the
       evaluated state is a true snapshot
  5. commit proposals in kind phases: deaths/kills first (freeing sites),
     then local state changes, then moves, then divisions; within a phase
     proposals apply in evaluation order, which is the seeded lottery
  6. molecule decay and natural cell death (hazard 1/mean_lifetime)
  7. compartment transfers
  8. census and event emission
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Action, Cell, Condition, Mechanism, N_SIDES
from .chemistry import (
    chemistry_step, decay_step, enumerate_surface_complexes,
    surface_complex_objects, surface_type_counts,
)
from .events import ActionEvent, BondEvent, TickReport
from .lattice import World


class CellSnapshot:
    """Frozen view of one cell used by condition evaluation.

    Values are pulled lazily from the world, which is safe because the
    engine performs no mutation between snapshot time and commit time.
    """

    __slots__ = ("world", "cell", "_neighbor_labels")

    def __init__(self, world: World, cell: Cell):
        self.world = world
        self.cell = cell
        self._neighbor_labels: Optional[list[Optional[str]]] = None

    def side_complexes(self) -> list[Counter]:
        return enumerate_surface_complexes(self.world, self.cell)

    def neighbor_labels(self) -> list[Optional[str]]:
        if self._neighbor_labels is None:
            comp = self.world.compartments[self.cell.compartment]
            grid = comp.cell_grid
            cells = self.world.cells
            out = []
            for nb in comp.neighbor_rows[self.cell.site]:
                if nb < 0:
                    out.append(None)
                    continue
                cid = grid[nb]
                out.append(cells[cid].label if cid != -1 else None)
            self._neighbor_labels = out
        return self._neighbor_labels

    def site_molecule_count(self, type_name: str) -> int:
        comp = self.world.compartments[self.cell.compartment]
        return self.world.molecule_count_at(comp, type_name, self.cell.site)

    def surface_type_counts(self, type_name: str) -> list[int]:
        return surface_type_counts(self.world, self.cell, type_name)


def evaluate_condition(snapshot: CellSnapshot, cond: Condition
                       ) -> tuple[bool, Optional[set[int]]]:
    """Returns (holds, matched_sides); matched_sides is None unless the
    condition is side-scoped, in which case it holds iff the set is non-empty."""
    kind = cond.kind
    if kind in Condition.SURFACE_KINDS:
        if kind == "surface_complex":
            per_side = [c.get(cond.pattern, 0) for c in snapshot.side_complexes()]
        else:
            per_side = snapshot.surface_type_counts(cond.pattern)
        if kind == "surface_count_at_most":
            raw_sides = [n <= cond.threshold for n in per_side]
            raw_total = sum(per_side) <= cond.threshold
        else:
            raw_sides = [n >= cond.threshold for n in per_side]
            raw_total = sum(per_side) >= cond.threshold
        if cond.side_scoped:
            matched = {s for s in range(N_SIDES) if raw_sides[s] != cond.negated}
            return bool(matched), matched
        return raw_total != cond.negated, None
    if kind == "contact_cell_type":
        labels = snapshot.neighbor_labels()
        raw = any(lbl in cond.labels for lbl in labels if lbl is not None)
    elif kind == "site_molecule_at_least":
        raw = snapshot.site_molecule_count(cond.pattern) >= cond.threshold
    elif kind == "internal_molecule_at_least":
        raw = snapshot.cell.internal_count(cond.pattern) >= cond.threshold
    else:  # pragma: no cover - guarded by Condition validation
        raise ValueError(f"unhandled condition kind {kind}")
    return raw != cond.negated, None


def evaluate_mechanism(snapshot: CellSnapshot, mech: Mechanism
                       ) -> Optional[tuple[tuple[Action, ...], Optional[set[int]]]]:
    """Action list plus matched sides iff all conditions hold.

    An empty condition list always fires.  The matched side set is the
    intersection over side-scoped conditions; None means unrestricted.
    """
    matched: Optional[set[int]] = None
    for cond in mech.conditions:
        ok, sides = evaluate_condition(snapshot, cond)
        if not ok:
            return None
        if sides is not None:
            matched = sides if matched is None else matched & sides
            if not matched:
                return None
    return mech.actions, matched


@dataclass
class ActionProposal:
    cell_id: int
    action: Action
    matched_sides: Optional[tuple[int, ...]]
    mechanism: Mechanism
    # resolved at proposal time
    target_cells: tuple[int, ...] = ()
    target_site: Optional[int] = None


class Engine:
    """Owns a world exclusively and advances it tick by tick."""

    def __init__(self, world: World, params: Optional[dict] = None,
                 collect_bond_events: bool = False, track_ledger: bool = False):
        self.world = world
        self.params = params or {}
        self.collect_bond_events = collect_bond_events
        self.track_ledger = track_ledger

    # -- evaluation ------------------------------------------------------

    def _propose(self) -> list[ActionProposal]:
        world = self.world
        rng = world.rng
        ids = np.fromiter(world.cells.keys(), dtype=np.int64, count=len(world.cells))
        order = rng.permutation(len(ids))
        proposals: list[ActionProposal] = []
        for k in order:
            cell = world.cells[int(ids[k])]
            if not cell.mechanisms:
                continue
            snapshot = CellSnapshot(world, cell)
            for mech in cell.mechanisms:
                fired = evaluate_mechanism(snapshot, mech)
                if fired is None:
                    continue
                if mech.prob < 1.0 and rng.random() >= mech.prob:
                    continue
                actions, matched = fired
                sides = tuple(sorted(matched)) if matched is not None else None
                for action in actions:
                    proposals.append(self._resolve(cell, action, sides, mech))
        return proposals

    def _resolve(self, cell: Cell, action: Action,
                 sides: Optional[tuple[int, ...]], mech: Mechanism) -> ActionProposal:
        world = self.world
        comp = world.compartments[cell.compartment]
        prop = ActionProposal(cell.id, action, sides, mech)
        row = comp.neighbor_rows[cell.site]
        if action.kind == "kill_contact":
            targets = []
            scan = sides if sides is not None else range(N_SIDES)
            for side in scan:
                nb = row[side]
                if nb < 0:
                    continue
                cid = comp.cell_grid[nb]
                if cid == -1:
                    continue
                victim = world.cells[cid]
                if not action.target or victim.label in action.target:
                    targets.append(victim.id)
            prop.target_cells = tuple(targets)
        elif action.kind == "divide":
            free = [nb for nb in row if nb >= 0 and comp.cell_grid[nb] == -1]
            if free:
                prop.target_site = free[int(world.rng.integers(0, len(free)))]
        return prop

    # -- commit ----------------------------------------------------------

    def _emit(self, events: list, cell: Cell, kind: str,
              target: Optional[str], log: bool) -> None:
        if not log:
            return
        comp = self.world.compartments[cell.compartment]
        x, y, z = comp.xyz(cell.site)
        events.append(ActionEvent(self.world.tick, cell.compartment, x, y, z,
                                  cell.id, cell.clone_id, cell.label, kind, target))

    def _remove_cell(self, cell: Cell, cause: str, events: list,
                     ledger: Optional[Counter]) -> None:
        self._emit(events, cell, "die", cause, True)
        released = self._census_visible_internal(cell) if cause == "burst" else Counter()
        discarded = self._census_visible_bound(cell)
        self.world.remove_cell(cell, release_internal=(cause == "burst"))
        if ledger is not None:
            for t, n in released.items():
                ledger[t] += n
            for t, n in discarded.items():
                ledger[t] -= n

    def _census_visible_bound(self, cell: Cell) -> Counter:
        out: Counter = Counter()
        for side_ids in cell.bound:
            for iid in side_ids:
                out[self.world.instances[iid].mtype.name] += 1
        return out

    def _census_visible_internal(self, cell: Cell) -> Counter:
        return Counter({t: len(v) for t, v in cell.internal.items() if v})

    def _commit(self, proposals: list[ActionProposal], events: list,
                ledger: Optional[Counter]) -> Counter:
        world = self.world
        rng = world.rng
        counts: Counter = Counter()
        differentiated: set[int] = set()

        def alive(cid: int) -> Optional[Cell]:
            return world.cells.get(cid)

        # phase: deaths and kills
        for prop in proposals:
            kind = prop.action.kind
            if kind == "die":
                cell = alive(prop.cell_id)
                if cell is None:
                    continue
                counts["die"] += 1
                cause = "burst" if prop.action.release_internal else "suicide"
                self._remove_cell(cell, cause, events, ledger)
            elif kind == "kill_contact":
                cell = alive(prop.cell_id)
                if cell is None:
                    continue
                for victim_id in prop.target_cells:
                    victim = alive(victim_id)
                    if victim is None:
                        continue
                    counts["kill"] += 1
                    self._emit(events, cell, "kill", victim.label, prop.mechanism.log)
                    self._remove_cell(victim, "killed", events, ledger)

        # phase: local state changes
        local = ("differentiate", "add_mechanism", "remove_mechanism",
                 "express", "secrete", "ingest", "present")
        diff_props: dict[int, list[ActionProposal]] = {}
        for prop in proposals:
            if prop.action.kind == "differentiate" and alive(prop.cell_id):
                diff_props.setdefault(prop.cell_id, []).append(prop)
        chosen_diff = {
            cid: (props[0] if len(props) == 1
                  else props[int(rng.integers(0, len(props)))])
            for cid, props in diff_props.items()
        }
        for prop in proposals:
            if prop.action.kind not in local:
                continue
            cell = alive(prop.cell_id)
            if cell is None:
                continue
            action = prop.action
            counts[action.kind] += 1
            if action.kind == "differentiate":
                if cell.id in differentiated or chosen_diff.get(cell.id) is not prop:
                    continue
                differentiated.add(cell.id)
                self._emit(events, cell, "differentiate", action.cell_type,
                           prop.mechanism.log)
                new_type = world.cell_types[action.cell_type]
                cell.ctype = new_type
                cell.mechanisms = list(new_type.mechanisms)
                world.relabel_cell(cell, new_type.name)
            elif action.kind == "add_mechanism":
                for m in action.mechanisms:
                    if all(existing.name != m.name for existing in cell.mechanisms):
                        cell.mechanisms.append(m)
                if action.names:
                    cell.mechanisms = [m for m in cell.mechanisms
                                       if m.name not in action.names]
                self._emit(events, cell, "add_mechanism",
                           ",".join(m.name for m in action.mechanisms),
                           prop.mechanism.log)
                if action.relabel and cell.label != action.relabel:
                    old = cell.label
                    world.relabel_cell(cell, action.relabel)
                    self._emit(events, cell, "relabel", old, True)
            elif action.kind == "remove_mechanism":
                cell.mechanisms = [m for m in cell.mechanisms
                                   if m.name not in action.names]
                self._emit(events, cell, "remove_mechanism",
                           ",".join(action.names), prop.mechanism.log)
            elif action.kind == "express":
                for side in self._sides_for(action, prop, rng):
                    for _ in range(action.count):
                        world.spawn_membrane(cell, action.molecule, side)
                self._emit(events, cell, "express", action.molecule,
                           prop.mechanism.log)
            elif action.kind == "secrete":
                mtype = world.molecule_types[action.molecule]
                if action.where == "internal":
                    eps = world.realized_epitopes(mtype, cell.random_epitopes)
                    for _ in range(action.count):
                        cell.add_internal(action.molecule, eps)
                else:
                    world.spawn_soluble(action.molecule, cell.compartment,
                                        cell.site, action.count,
                                        clonal=cell.random_epitopes)
                    if ledger is not None:
                        ledger[action.molecule] += action.count
                self._emit(events, cell, "secrete", action.molecule,
                           prop.mechanism.log)
            elif action.kind == "ingest":
                taken = self._ingest(cell, action.pattern, prop.matched_sides)
                if taken:
                    if ledger is not None:
                        for t, n in taken.items():
                            ledger[t] -= n
                    self._emit(events, cell, "ingest", action.pattern,
                               prop.mechanism.log)
            elif action.kind == "present":
                presented = self._pick_internal_epitope(cell, action.source)
                if presented is not None:
                    for side in self._sides_for(action, prop, rng):
                        for _ in range(action.count):
                            world.spawn_membrane(cell, action.molecule, side,
                                                 presented=presented)
                    self._emit(events, cell, "present", action.molecule,
                               prop.mechanism.log)

        # phase: movement
        for prop in proposals:
            kind = prop.action.kind
            if kind not in ("move_random", "move_gradient"):
                continue
            cell = alive(prop.cell_id)
            if cell is None:
                continue
            counts[kind] += 1
            if kind == "move_random":
                comp = world.compartments[cell.compartment]
                free = [nb for nb in comp.neighbor_rows[cell.site]
                        if nb >= 0 and comp.cell_grid[nb] == -1]
                if free:
                    world.relocate_cell(cell, free[int(rng.integers(0, len(free)))])
                    self._emit(events, cell, "move", None, prop.mechanism.log)
            else:
                moved = world.move_cell(
                    cell, ("gradient", prop.action.molecule, prop.action.gradient_up))
                if moved:
                    self._emit(events, cell, "move", prop.action.molecule,
                               prop.mechanism.log)

        # phase: division
        for prop in proposals:
            if prop.action.kind != "divide":
                continue
            cell = alive(prop.cell_id)
            if cell is None:
                continue
            comp = world.compartments[cell.compartment]
            target = prop.target_site
            if target is None or comp.cell_grid[target] != -1:
                counts["division_blocked"] += 1
                self._emit(events, cell, "division_blocked", None,
                           prop.mechanism.log)
                continue
            counts["divide"] += 1
            daughter = world.spawn_cell(cell.ctype.name, cell.compartment, target,
                                        clone_id=cell.clone_id,
                                        random_epitopes=cell.random_epitopes)
            if daughter.label != cell.label:
                world.relabel_cell(daughter, cell.label)
            daughter.mechanisms = list(cell.mechanisms)
            self._emit(events, cell, "divide", daughter.label, prop.mechanism.log)
            self._emit(events, daughter, "born", "divide", True)
        return counts

    def _sides_for(self, action: Action, prop: ActionProposal, rng) -> list[int]:
        if isinstance(action.side, int):
            return [action.side]
        if action.side == "all":
            return list(range(N_SIDES))
        if action.side == "matched" and prop.matched_sides:
            return list(prop.matched_sides)
        return [int(rng.integers(0, N_SIDES))]

    def _ingest(self, cell: Cell, pattern: str,
                sides: Optional[tuple[int, ...]]) -> Counter:
        world = self.world
        for side in (sides if sides is not None else range(N_SIDES)):
            for pat, members in surface_complex_objects(world, cell, side):
                if pat != pattern:
                    continue
                taken: Counter = Counter()
                for inst in members:
                    if inst.place[0] == "membrane":
                        continue
                    for bid in list(inst.bond_ids):
                        if bid in world.bonds:
                            world.break_bond(world.bonds[bid])
                    # anchoring updates may have moved it back to the site
                    taken[inst.mtype.name] += 1
                    world.remove_instance(inst)
                    cell.add_internal(inst.mtype.name, inst.epitopes)
                if taken:
                    return taken
        return Counter()

    def _pick_internal_epitope(self, cell: Cell, source: Optional[str]) -> Optional[int]:
        names = [source] if source else sorted(cell.internal)
        for name in names:
            for eps in cell.internal.get(name, ()):
                if eps:
                    return eps[0]
        return None

    # -- natural death -----------------------------------------------------

    def _natural_death(self, events: list, ledger: Optional[Counter]) -> int:
        world = self.world
        cells = list(world.cells.values())
        if not cells:
            return 0
        probs = np.fromiter((c.ctype.death_prob for c in cells), dtype=float,
                            count=len(cells))
        draws = world.rng.random(len(cells))
        dead = 0
        dying = draws < probs
        for i, cell in enumerate(cells):
            cell.age += 1
            if dying[i] and cell.id in world.cells:
                dead += 1
                self._remove_cell(cell, "natural", events, ledger)
        return dead

    # -- the tick ----------------------------------------------------------

    def step(self) -> TickReport:
        world = self.world
        events: list[ActionEvent] = []
        bond_events: list[BondEvent] = []
        ledger: Optional[Counter] = Counter() if self.track_ledger else None
        before = {name: dict(comp.mol_census)
                  for name, comp in world.compartments.items()} if self.track_ledger else None

        world.diffuse()
        bond_events.extend(chemistry_step(world, self.collect_bond_events))
        proposals = self._propose()
        counts = self._commit(proposals, events, ledger)
        decay_events, decay_summary = decay_step(world, self.collect_bond_events)
        bond_events.extend(decay_events)
        if ledger is not None:
            ledger.update(decay_summary)
        counts["natural_death"] = self._natural_death(events, ledger)
        transfers = world.transfer_step()
        for agent, src, dst, n in transfers:
            counts["transfer"] += n
        world.tick += 1

        report = TickReport(world.tick, dict(counts), world.census(), events,
                            bond_events)
        if self.track_ledger:
            report.ledger = self._check_ledger(before, ledger)
        return report

    def _check_ledger(self, before, ledger: Counter) -> dict:
        """World-total census delta per molecule type vs. recorded causes.

        Diffusion and bind/unbind never change census counts and transfers
        cancel in the world total, so the recorded secrete/ingest/decay/
        death/burst deltas must explain the census change exactly.
        """
        after = {name: dict(comp.mol_census)
                 for name, comp in self.world.compartments.items()}
        total_delta: Counter = Counter()
        for name in after:
            for t in set(after[name]) | set(before.get(name, {})):
                d = after[name].get(t, 0) - before.get(name, {}).get(t, 0)
                if d:
                    total_delta[t] += d
        recorded = {t: n for t, n in ledger.items() if n}
        return {
            "recorded": recorded,
            "delta": dict(total_delta),
            "balanced": recorded == dict(total_delta),
        }
