"""Stochastic bond chemistry on the lattice.

Per tick every existing bond breaks with its unbind probability, then every
pair opportunity among co-located visible epitopes binds with the pair's
bind probability.  Opportunities exist between free solubles at one site,
between a site's solubles and the resident cell's membrane (each free
soluble is assigned one membrane side per tick, uniformly), and between the
facing membrane sides of adjacent cells.

The full randomized sequential scan over opportunities is sampled exactly
but lazily: for each opportunity group of size n*m with probability p we
draw the Binomial(n*m, p) subset that would succeed, merge all groups,
shuffle once, and commit in that order subject to epitope availability.
"""
from __future__ import annotations

from collections import Counter
from typing import Optional

import numpy as np

from .core import Cell, MoleculeInstance, N_SIDES, opposite_side
from .events import BondEvent
from .lattice import World


def _bond_event(world: World, kind: str, inst: MoleculeInstance,
                participants) -> BondEvent:
    comp_name, site = world.instance_compartment_site(inst)
    comp = world.compartments[comp_name]
    x, y, z = comp.xyz(site)
    return BondEvent(world.tick, comp_name, x, y, z, kind, tuple(participants),
                     inst.mtype.name)


def unbind_phase(world: World, collect: bool = False
                 ) -> tuple[list[BondEvent], set[tuple[int, int]]]:
    """Break existing bonds independently with their unbind probabilities.

    Returns the events plus the set of (instance, epitope index) slots freed
    this tick: those only become visible to binding on the next tick, which
    keeps the single-pair on/off process a plain two-state chain.
    """
    events: list[BondEvent] = []
    freed: set[tuple[int, int]] = set()
    bond_ids = list(world.bonds)
    if not bond_ids:
        return events, freed
    probs = np.array([world.bonds[b].unbind_prob for b in bond_ids])
    draws = world.rng.random(len(bond_ids))
    for i in np.nonzero(draws < probs)[0]:
        bond = world.bonds[bond_ids[i]]
        for ia, ea, ib, eb in bond.pairs:
            freed.add((ia, ea))
            freed.add((ib, eb))
        if collect:
            inst = world.instances[bond.pairs[0][0]]
            parts = tuple((ia, ea) for ia, ea, _, _ in bond.pairs) + tuple(
                (ib, eb) for _, _, ib, eb in bond.pairs)
            events.append(_bond_event(world, "unbind", inst, parts))
        world.break_bond(bond)
    return events, freed


def _free_singles(world: World, inst: MoleculeInstance) -> list[tuple[int, int]]:
    """(epitope value, index) pairs available for single-epitope bonds."""
    blocked = set()
    for site_def in inst.mtype.binding_sites:
        if site_def.arity == 2:
            blocked.update(site_def.epitopes)
    return [
        (inst.epitopes[i], i)
        for i in range(len(inst.epitopes))
        if not inst.occupied[i] and i not in blocked
    ]


def _free_pair_sites(inst: MoleculeInstance) -> list[tuple[int, int]]:
    """Index pairs of fully free 2-epitope binding sites."""
    out = []
    for site_def in inst.mtype.binding_sites:
        if site_def.arity == 2:
            i, j = site_def.epitopes
            if not inst.occupied[i] and not inst.occupied[j]:
                out.append((i, j))
    return out


class _Candidates:
    """Collects thinned bind opportunities for one tick."""

    def __init__(self, world: World):
        self.world = world
        self.rng = world.rng
        self.pairs = world.affinity._pairs
        # (inst_a, idx_a, inst_b, idx_b, unbind, is_pair_site)
        self.hits: list[tuple] = []

    def group(self, slots_a: list[tuple[MoleculeInstance, int, int]],
              slots_b: list[tuple[MoleculeInstance, int, int]],
              same_pool: bool = False) -> None:
        """Cross slots_a x slots_b grouped by epitope-value pair.

        Slots are (instance, epitope_index, epitope_value).  With
        ``same_pool`` the two lists are the same collection and unordered
        distinct pairs are enumerated.
        """
        if not slots_a or not slots_b:
            return
        by_val_a: dict[int, list] = {}
        for slot in slots_a:
            by_val_a.setdefault(slot[2], []).append(slot)
        by_val_b: dict[int, list] = {}
        for slot in slots_b:
            by_val_b.setdefault(slot[2], []).append(slot)
        for va in sorted(by_val_a):
            for vb in sorted(by_val_b):
                if same_pool and vb < va:
                    continue
                rate = self.pairs.get((va, vb) if va <= vb else (vb, va))
                if rate is None or rate.bind <= 0.0:
                    continue
                a_slots = by_val_a[va]
                b_slots = by_val_b[vb]
                if same_pool and va == vb:
                    self._sample_triangle(a_slots, rate)
                else:
                    self._sample_cross(a_slots, b_slots, rate)

    def _sample_cross(self, a_slots, b_slots, rate) -> None:
        n, m = len(a_slots), len(b_slots)
        k = self.rng.binomial(n * m, rate.bind)
        if k == 0:
            return
        chosen = self.rng.choice(n * m, size=min(k, n * m), replace=False)
        for flat in chosen:
            ia, ib = divmod(int(flat), m)
            a, b = a_slots[ia], b_slots[ib]
            if a[0] is b[0]:
                continue  # an instance never binds itself
            self.hits.append((a[0], a[1], b[0], b[1], rate.unbind, False))

    def _sample_triangle(self, slots, rate) -> None:
        n = len(slots)
        total = n * (n - 1) // 2
        if total == 0:
            return
        k = self.rng.binomial(total, rate.bind)
        if k == 0:
            return
        chosen = self.rng.choice(total, size=min(k, total), replace=False)
        for flat in chosen:
            # unrank the (i, j) pair, i < j
            i = int((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8 * flat)) // 2)
            j = int(flat - i * (2 * n - 1 - i) // 2 + i + 1)
            a, b = slots[i], slots[j]
            if a[0] is b[0]:
                continue
            self.hits.append((a[0], a[1], b[0], b[1], rate.unbind, False))

    def pair_site(self, holder: MoleculeInstance, site_idx: tuple[int, int],
                  target: MoleculeInstance) -> None:
        """A free 2-epitope site against a presenting molecule."""
        own_idx = 0
        pres_idx = len(target.epitopes) - 1
        if target.occupied[own_idx] or target.occupied[pres_idx]:
            return
        i, j = site_idx
        r1 = self.pairs.get(self._key(holder.epitopes[i], target.epitopes[own_idx]))
        r2 = self.pairs.get(self._key(holder.epitopes[j], target.epitopes[pres_idx]))
        if r1 is None or r2 is None:
            return
        p = r1.bind * r2.bind
        if p <= 0.0 or self.rng.random() >= p:
            return
        unbind = 1.0 - (1.0 - r1.unbind) * (1.0 - r2.unbind)
        self.hits.append((holder, site_idx, target, (own_idx, pres_idx), unbind, True))

    @staticmethod
    def _key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a <= b else (b, a)

    def commit(self, freed: set[tuple[int, int]],
               collect: bool = False) -> list[BondEvent]:
        events = []
        if not self.hits:
            return events
        order = self.rng.permutation(len(self.hits))
        for hi in order:
            a, idx_a, b, idx_b, unbind, is_pair = self.hits[hi]
            if a.id not in self.world.instances or b.id not in self.world.instances:
                continue
            if is_pair:
                i, j = idx_a
                oi, pj = idx_b
                if a.occupied[i] or a.occupied[j] or b.occupied[oi] or b.occupied[pj]:
                    continue
                if freed and ((a.id, i) in freed or (a.id, j) in freed
                              or (b.id, oi) in freed or (b.id, pj) in freed):
                    continue
                bond = self.world.form_bond(
                    ((a.id, i, b.id, oi), (a.id, j, b.id, pj)), unbind)
            else:
                if a.occupied[idx_a] or b.occupied[idx_b]:
                    continue
                if freed and ((a.id, idx_a) in freed or (b.id, idx_b) in freed):
                    continue
                bond = self.world.form_bond(((a.id, idx_a, b.id, idx_b),), unbind)
            if collect:
                parts = tuple((ia, ea) for ia, ea, _, _ in bond.pairs) + tuple(
                    (ib, eb) for _, _, ib, eb in bond.pairs)
                events.append(_bond_event(self.world, "bind", a, parts))
        return events


def _membrane_slots(world: World, cell: Cell, side: int):
    """(free single slots, free 2-sites, presenting targets, value set).

    Cached per (cell, side) alongside the complex counters: the cache is
    invalidated by exactly the events that change slot availability (bond
    formation/release, membrane composition changes).
    """
    state = _side_state(world, cell, side)
    return state[2]


def _partner_map(world: World) -> dict[int, set[int]]:
    partners: dict[int, set[int]] = {}
    for (a, b) in world.affinity._pairs:
        partners.setdefault(a, set()).add(b)
        partners.setdefault(b, set()).add(a)
    return partners


def bind_phase(world: World, freed: set[tuple[int, int]] = frozenset(),
               collect: bool = False) -> list[BondEvent]:
    if not world.affinity._pairs:
        return []
    cands = _Candidates(world)
    rng = world.rng
    partners = _partner_map(world)

    def pairable(vals_a: set, vals_b: set) -> bool:
        for v in vals_a:
            if partners.get(v) and not partners[v].isdisjoint(vals_b):
                return True
        return False

    mem_slots = lambda cell, side: _membrane_slots(world, cell, side)  # noqa: E731

    for comp_name in sorted(world.compartments):
        comp = world.compartments[comp_name]
        # soluble-soluble and soluble-membrane, per occupied site
        for site in list(comp.solubles):
            ids = comp.solubles[site]
            sol_slots = []
            sol_values: set[int] = set()
            sol_by_side: list[list] = [[] for _ in range(N_SIDES)]
            cell_id = comp.cell_grid[site]
            cell = world.cells[cell_id] if cell_id != -1 else None
            sides = rng.integers(0, N_SIDES, size=len(ids)) if cell is not None else None
            sol_presenters = []
            for k, iid in enumerate(ids):
                inst = world.instances[iid]
                slots = [(inst, idx, val) for val, idx in _free_singles(world, inst)]
                sol_slots.extend(slots)
                sol_values.update(s[2] for s in slots)
                if cell is not None:
                    sol_by_side[int(sides[k])].extend(slots)
                if inst.presented_epitope is not None:
                    sol_presenters.append(inst)
            if len(ids) > 1 and pairable(sol_values, sol_values):
                cands.group(sol_slots, sol_slots, same_pool=True)
            if cell is not None:
                for side in range(N_SIDES):
                    side_slots = sol_by_side[side]
                    if not side_slots and not sol_presenters:
                        continue
                    mem_singles, mem_pairs, _, mem_vals, held = mem_slots(cell, side)
                    if side_slots:
                        sv = {s[2] for s in side_slots}
                        if pairable(mem_vals, sv):
                            cands.group(side_slots, mem_singles)
                        if held and pairable({h[2] for h in held}, sv):
                            cands.group(side_slots, held)
                    for holder, idx_pair in mem_pairs:
                        for target in sol_presenters:
                            cands.pair_site(holder, idx_pair, target)
        # held-soluble vs own membrane and held vs held, per occupied side
        for cid in list(world.cells):
            cell = world.cells.get(cid)
            if cell is None or cell.compartment != comp_name:
                continue
            if not any(cell.bound):
                continue
            for side in range(N_SIDES):
                if not cell.bound[side]:
                    continue
                mem_singles, _, _, mem_vals, held = mem_slots(cell, side)
                if not held:
                    continue
                hv = {h[2] for h in held}
                if pairable(hv, mem_vals):
                    cands.group(held, mem_singles)
                if len(held) > 1 and pairable(hv, hv):
                    cands.group(held, held, same_pool=True)
        # membrane-membrane across facing sides (positive directions only)
        for cid in list(world.cells):
            cell = world.cells.get(cid)
            if cell is None or cell.compartment != comp_name:
                continue
            if not any(cell.membrane):
                continue
            for side in (0, 2, 4):
                nb = comp.neighbor_rows[cell.site][side]
                if nb < 0:
                    continue
                other_id = comp.cell_grid[nb]
                if other_id == -1:
                    continue
                other = world.cells[other_id]
                facing = opposite_side(side)
                s_a, p_a, pr_a, v_a, _ = mem_slots(cell, side)
                s_b, p_b, pr_b, v_b, _ = mem_slots(other, facing)
                if s_a and s_b and pairable(v_a, v_b):
                    cands.group(s_a, s_b)
                for holder, idx_pair in p_a:
                    for target in pr_b:
                        cands.pair_site(holder, idx_pair, target)
                for holder, idx_pair in p_b:
                    for target in pr_a:
                        cands.pair_site(holder, idx_pair, target)
    return cands.commit(freed, collect)


def chemistry_step(world: World, collect: bool = False) -> list[BondEvent]:
    """One unbind+bind sweep over the whole world."""
    events, freed = unbind_phase(world, collect)
    events.extend(bind_phase(world, freed, collect))
    return events


def decay_step(world: World, collect: bool = False
               ) -> tuple[list[BondEvent], Counter]:
    """Molecule decay: each instance dies with 1/mean_lifetime per tick;
    bonds are released and declared fragments appear in place.

    Returns the events plus a per-type Counter of census-visible deltas
    (soluble removals negative, spawned fragments positive).
    """
    events: list[BondEvent] = []
    summary: Counter = Counter()
    rng = world.rng
    # instance tier
    ids = list(world.mortal)
    if ids:
        probs = np.fromiter((world.mortal[i] for i in ids), dtype=float, count=len(ids))
        draws = rng.random(len(ids))
        for i in np.nonzero(draws < probs)[0]:
            inst = world.instances.get(ids[i])
            if inst is None:
                continue
            comp_name, site = world.instance_compartment_site(inst)
            if collect:
                events.append(_bond_event(world, "decay", inst, ((inst.id, -1),)))
            for bid in list(inst.bond_ids):
                if bid in world.bonds:
                    world.break_bond(world.bonds[bid])
            if inst.place[0] != "membrane":
                summary[inst.mtype.name] -= 1
            world.remove_instance(inst)
            for frag in inst.mtype.fragments:
                # fragments of membrane molecules shed to the cell's site
                world.spawn_soluble(frag, comp_name, site, 1)
                summary[frag] += 1
    # count tier
    for comp_name in sorted(world.compartments):
        comp = world.compartments[comp_name]
        for tname in sorted(comp.counts):
            mtype = world.molecule_types[tname]
            p = mtype.decay_prob
            total = comp.mol_census.get(tname, 0)
            if p <= 0.0 or total <= 0:
                continue
            k = rng.binomial(total, p)
            if k == 0:
                continue
            dead = rng.multivariate_hypergeometric(comp.counts[tname], k)
            sites = np.nonzero(dead)[0]
            summary[tname] -= int(k)
            for s in sites:
                n = int(dead[s])
                comp.add_count(tname, int(s), -n)
                for frag in mtype.fragments:
                    world.spawn_soluble(frag, comp_name, int(s), n)
                    summary[frag] += n
    return events, summary


# -- surface complexes -------------------------------------------------------

def _component(world: World, start: MoleculeInstance) -> list[MoleculeInstance]:
    seen = {start.id}
    stack = [start]
    members = [start]
    while stack:
        cur = stack.pop()
        for bid in cur.bond_ids:
            for ia, _, ib, _ in world.bonds[bid].pairs:
                for nid in (ia, ib):
                    if nid not in seen:
                        seen.add(nid)
                        inst = world.instances[nid]
                        members.append(inst)
                        stack.append(inst)
    return members


def surface_complex_objects(world: World, cell: Cell, side: int):
    """Maximal complexes anchored on one membrane side, each reported once.

    A complex is anchored on the side if it contains a membrane molecule of
    this cell on that side or a soluble molecule held on that side.
    Returns (pattern, members) tuples.
    """
    out = []
    visited: set[int] = set()
    for iid in cell.membrane[side] + cell.bound[side]:
        if iid in visited:
            continue
        members = _component(world, world.instances[iid])
        visited.update(m.id for m in members)
        pattern = ":".join(sorted(m.mtype.name for m in members))
        out.append((pattern, members))
    return out


def _side_state(world: World, cell: Cell, side: int):
    """(complex-pattern counts, membrane type counts, bind slots) for one
    side, cached until a bond or membrane change touches the side.

    Bind slots cover the membrane molecules plus the free epitopes of
    solubles already held on the side: a half-bound multivalent antigen can
    still capture further receptors there.
    """
    cached = cell._side_cache[side]
    if cached is None:
        patterns = Counter(p for p, _ in surface_complex_objects(world, cell, side))
        types = Counter(world.instances[i].mtype.name for i in cell.membrane[side])
        singles = []
        pair_sites = []
        presenters = []
        values = set()
        held_singles = []
        for iid in cell.membrane[side]:
            inst = world.instances[iid]
            for val, idx in _free_singles(world, inst):
                singles.append((inst, idx, val))
                values.add(val)
            for idx_pair in _free_pair_sites(inst):
                pair_sites.append((inst, idx_pair))
            if inst.presented_epitope is not None:
                presenters.append(inst)
        for iid in cell.bound[side]:
            inst = world.instances[iid]
            for val, idx in _free_singles(world, inst):
                held_singles.append((inst, idx, val))
        cached = (patterns, types,
                  (singles, pair_sites, presenters, values, held_singles))
        cell._side_cache[side] = cached
    return cached


def enumerate_surface_complexes(world: World, cell: Cell) -> list[Counter]:
    """Per-side multiset of canonical complex patterns (cached per tick)."""
    return [_side_state(world, cell, side)[0] for side in range(N_SIDES)]


def surface_type_counts(world: World, cell: Cell, type_name: str) -> list[int]:
    return [_side_state(world, cell, side)[1].get(type_name, 0)
            for side in range(N_SIDES)]


def detect_crosslinks(world: World, cell: Cell, receptor_type: str, side: int) -> int:
    """Distinct soluble molecules on a side bound to >= 2 receptors of the type."""
    crosslinked = 0
    for iid in cell.bound[side]:
        inst = world.instances[iid]
        receptors = set()
        for bid in inst.bond_ids:
            for ia, _, ib, _ in world.bonds[bid].pairs:
                for other_id in (ia, ib):
                    if other_id == inst.id:
                        continue
                    other = world.instances[other_id]
                    if (other.place[:2] == ("membrane", cell.id)
                            and other.mtype.name == receptor_type):
                        receptors.add(other_id)
        if len(receptors) >= 2:
            crosslinked += 1
    return crosslinked
