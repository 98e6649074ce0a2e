"""3D lattice compartments: occupancy, diffusion, movement, transfer, injection.

Sites are flat indices ``x + nx*(y + ny*z)``.  Each site holds at most one
cell plus any number of soluble molecules.  Molecule types without epitopes
("plain" types) are stored as per-site count arrays; types with epitopes
are individual instances so bonds can be tracked.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import (
    AffinityTable, Bond, Cell, CellType, DIRECTIONS, MoleculeInstance,
    MoleculeType, N_SIDES, opposite_side,
)


@dataclass(frozen=True)
class CompartmentSpec:
    name: str
    dims: tuple[int, int, int]
    molecular_diffusion: dict[str, float] = field(default_factory=dict)
    cellular_diffusion: dict[str, float] = field(default_factory=dict)
    initial_cells: dict[str, float] = field(default_factory=dict)
    initial_molecules: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"compartment {self.name}: dims must be three values >= 1")
        for src in (self.molecular_diffusion, self.cellular_diffusion):
            for k, v in src.items():
                if not (0.0 <= v <= 1.0):
                    raise ValueError(
                        f"compartment {self.name}: diffusion rate for {k} outside [0,1]"
                    )


@dataclass(frozen=True)
class TransferRule:
    source: str
    dest: str
    agent: str
    rate: float

    def __post_init__(self):
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError("transfer rate must be in [0,1]")


class Compartment:
    def __init__(self, spec: CompartmentSpec):
        self.spec = spec
        nx, ny, nz = spec.dims
        self.nsites = nx * ny * nz
        # occupancy as a plain list: scalar indexing dominates hot paths
        self.cell_grid: list[int] = [-1] * self.nsites
        # plain molecule types: dense per-site counts
        self.counts: dict[str, np.ndarray] = {}
        # instance-tier: site -> list of free soluble instance ids
        self.solubles: dict[int, list[int]] = {}
        self.neighbors = self._neighbor_table(spec.dims)
        # row tuples for scalar lookups (numpy scalar indexing is slow)
        self.neighbor_rows: list[tuple[int, ...]] = [
            tuple(int(v) for v in row) for row in self.neighbors
        ]
        self.cell_census: dict[str, int] = {}
        self.mol_census: dict[str, int] = {}

    @staticmethod
    def _neighbor_table(dims: tuple[int, int, int]) -> np.ndarray:
        nx, ny, nz = dims
        n = nx * ny * nz
        idx = np.arange(n)
        x = idx % nx
        y = (idx // nx) % ny
        z = idx // (nx * ny)
        table = np.full((n, N_SIDES), -1, dtype=np.int64)
        for side, (dx, dy, dz) in enumerate(DIRECTIONS):
            tx, ty, tz = x + dx, y + dy, z + dz
            ok = (tx >= 0) & (tx < nx) & (ty >= 0) & (ty < ny) & (tz >= 0) & (tz < nz)
            table[ok, side] = tx[ok] + nx * (ty[ok] + ny * tz[ok])
        return table

    def xyz(self, site: int) -> tuple[int, int, int]:
        nx, ny, _ = self.spec.dims
        return (site % nx, (site // nx) % self.spec.dims[1], site // (nx * self.spec.dims[1]))

    def site_index(self, x: int, y: int, z: int) -> int:
        nx, ny, nz = self.spec.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise IndexError(f"({x},{y},{z}) outside {self.spec.dims}")
        return x + nx * (y + ny * z)

    def add_count(self, type_name: str, site: int, delta: int) -> None:
        arr = self.counts.get(type_name)
        if arr is None:
            arr = np.zeros(self.nsites, dtype=np.int64)
            self.counts[type_name] = arr
        arr[site] += delta
        self.mol_census[type_name] = self.mol_census.get(type_name, 0) + delta

    def free_soluble_ids(self, site: int) -> list[int]:
        return self.solubles.get(site, [])

    def add_free(self, site: int, instance_id: int) -> None:
        self.solubles.setdefault(site, []).append(instance_id)

    def remove_free(self, site: int, instance_id: int) -> None:
        lst = self.solubles[site]
        lst.remove(instance_id)
        if not lst:
            del self.solubles[site]


class World:
    """All compartments plus the registries for cells, instances and bonds.

    The world owns a single seeded RNG; everything stochastic inside a tick
    draws from it in a fixed order, which is what makes runs replayable.
    """

    def __init__(self, affinity: AffinityTable,
                 molecule_types: dict[str, MoleculeType],
                 cell_types: dict[str, CellType],
                 compartments: Iterable[CompartmentSpec],
                 transfer_rules: Iterable[TransferRule] = (),
                 seed: int = 0):
        self.affinity = affinity
        self.molecule_types = dict(molecule_types)
        self.cell_types = dict(cell_types)
        self.compartments: dict[str, Compartment] = {
            spec.name: Compartment(spec) for spec in compartments
        }
        if not self.compartments:
            raise ValueError("at least one compartment is required")
        self.transfer_rules = list(transfer_rules)
        for rule in self.transfer_rules:
            if rule.source not in self.compartments or rule.dest not in self.compartments:
                raise ValueError(f"transfer rule references unknown compartment: {rule}")
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.seed = seed
        self.tick = 0
        self.cells: dict[int, Cell] = {}
        self.instances: dict[int, MoleculeInstance] = {}
        self.bonds: dict[int, Bond] = {}
        # instances of types with finite lifetime, id -> decay probability
        self.mortal: dict[int, float] = {}
        self._next_cell = 0
        self._next_instance = 0
        self._next_bond = 0
        self._next_clone = 0

    # -- creation / removal -------------------------------------------------

    def new_clone_id(self) -> int:
        self._next_clone += 1
        return self._next_clone

    def spawn_cell(self, type_name: str, compartment: str, site: int,
                   clone_id: Optional[int] = None,
                   random_epitopes: Optional[tuple[int, ...]] = None) -> Cell:
        ctype = self.cell_types[type_name]
        comp = self.compartments[compartment]
        if comp.cell_grid[site] != -1:
            raise ValueError(f"site {site} in {compartment} already occupied")
        if clone_id is None:
            clone_id = self.new_clone_id()
        if random_epitopes is None:
            u = self.affinity.universe_size
            random_epitopes = tuple(
                int(self.rng.integers(0, u)) for _ in range(ctype.random_epitopes)
            )
        cell = Cell(self._next_cell, ctype, clone_id, random_epitopes, compartment, site)
        self._next_cell += 1
        self.cells[cell.id] = cell
        comp.cell_grid[site] = cell.id
        comp.cell_census[cell.label] = comp.cell_census.get(cell.label, 0) + 1
        return cell

    def realized_epitopes(self, mtype: MoleculeType,
                          clonal: tuple[int, ...] = ()) -> tuple[int, ...]:
        if len(clonal) < mtype.clonal_epitopes:
            raise ValueError(
                f"{mtype.name} needs {mtype.clonal_epitopes} clonal epitopes, got {len(clonal)}"
            )
        return mtype.epitopes + tuple(clonal[: mtype.clonal_epitopes])

    def spawn_soluble(self, type_name: str, compartment: str, site: int,
                      count: int = 1, clonal: tuple[int, ...] = ()) -> None:
        """Add soluble molecules at a site (count tier for plain types)."""
        mtype = self.molecule_types[type_name]
        comp = self.compartments[compartment]
        if mtype.is_plain:
            comp.add_count(type_name, site, count)
            return
        eps = self.realized_epitopes(mtype, clonal)
        for _ in range(count):
            inst = MoleculeInstance(self._next_instance, mtype, eps,
                                    ("site", compartment, site))
            self._next_instance += 1
            self.instances[inst.id] = inst
            comp.add_free(site, inst.id)
            comp.mol_census[type_name] = comp.mol_census.get(type_name, 0) + 1
            if mtype.decay_prob > 0:
                self.mortal[inst.id] = mtype.decay_prob

    def spawn_membrane(self, cell: Cell, type_name: str, side: int,
                       presented: Optional[int] = None) -> MoleculeInstance:
        mtype = self.molecule_types[type_name]
        eps = self.realized_epitopes(mtype, cell.random_epitopes)
        if presented is not None:
            if not mtype.presentation_slot:
                raise ValueError(f"{type_name} has no presentation slot")
            eps = eps + (presented,)
        inst = MoleculeInstance(self._next_instance, mtype, eps,
                                ("membrane", cell.id, side))
        self._next_instance += 1
        self.instances[inst.id] = inst
        cell.membrane[side].append(inst.id)
        cell.invalidate_side(side)
        if mtype.decay_prob > 0:
            self.mortal[inst.id] = mtype.decay_prob
        return inst

    def instance_compartment_site(self, inst: MoleculeInstance) -> tuple[str, int]:
        kind = inst.place[0]
        if kind == "site":
            return inst.place[1], inst.place[2]
        cell = self.cells[inst.place[1]]
        return cell.compartment, cell.site

    def remove_instance(self, inst: MoleculeInstance) -> None:
        """Drop an instance from every registry; bonds must be gone already."""
        if inst.bond_ids:
            raise RuntimeError(f"removing {inst} with live bonds")
        kind = inst.place[0]
        if kind == "site":
            comp = self.compartments[inst.place[1]]
            comp.remove_free(inst.place[2], inst.id)
            comp.mol_census[inst.mtype.name] -= 1
        elif kind == "membrane":
            cell = self.cells[inst.place[1]]
            cell.membrane[inst.place[2]].remove(inst.id)
            cell.invalidate_side(inst.place[2])
        elif kind == "bound":
            cell = self.cells[inst.place[1]]
            cell.bound[inst.place[2]].remove(inst.id)
            comp = self.compartments[cell.compartment]
            comp.mol_census[inst.mtype.name] -= 1
            cell.invalidate_side(inst.place[2])
        del self.instances[inst.id]
        self.mortal.pop(inst.id, None)

    # -- bonds ---------------------------------------------------------------

    def form_bond(self, pairs, unbind_prob: float) -> Bond:
        bond = Bond(self._next_bond, tuple(pairs), unbind_prob)
        self._next_bond += 1
        self.bonds[bond.id] = bond
        for ia, ea, ib, eb in bond.pairs:
            a, b = self.instances[ia], self.instances[ib]
            a.occupied[ea] = True
            b.occupied[eb] = True
            a.bond_ids.append(bond.id)
            b.bond_ids.append(bond.id)
        self._update_anchoring(bond.pairs[0][0])
        self._invalidate_bond_sides(bond)
        return bond

    def break_bond(self, bond: Bond) -> None:
        self._invalidate_bond_sides(bond)
        del self.bonds[bond.id]
        for ia, ea, ib, eb in bond.pairs:
            a, b = self.instances[ia], self.instances[ib]
            a.occupied[ea] = False
            b.occupied[eb] = False
            a.bond_ids.remove(bond.id)
            b.bond_ids.remove(bond.id)
        self._update_anchoring(bond.pairs[0][0])
        self._update_anchoring(bond.pairs[0][2])

    def _invalidate_bond_sides(self, bond: Bond) -> None:
        for inst_id in (bond.pairs[0][0], bond.pairs[0][2]):
            place = self.instances[inst_id].place
            if place[0] in ("membrane", "bound"):
                self.cells[place[1]].invalidate_side(place[2])

    def soluble_component(self, inst: MoleculeInstance) -> tuple[list[MoleculeInstance], Optional[tuple[int, int]]]:
        """Soluble instances bond-connected to ``inst`` plus the membrane
        anchor (cell_id, side) if the component touches one."""
        seen = {inst.id}
        stack = [inst]
        members = []
        anchor = None
        while stack:
            cur = stack.pop()
            if cur.place[0] == "membrane":
                if anchor is None:
                    anchor = (cur.place[1], cur.place[2])
                continue
            members.append(cur)
            for bid in cur.bond_ids:
                for ia, _, ib, _ in self.bonds[bid].pairs:
                    for nid in (ia, ib):
                        if nid not in seen:
                            seen.add(nid)
                            stack.append(self.instances[nid])
        return members, anchor

    def _set_place(self, inst: MoleculeInstance, place: tuple) -> None:
        """Move a soluble instance between free-at-site and membrane-held."""
        if inst.place == place:
            return
        if inst.place[0] == "site":
            self.compartments[inst.place[1]].remove_free(inst.place[2], inst.id)
        elif inst.place[0] == "bound":
            holder = self.cells[inst.place[1]]
            holder.bound[inst.place[2]].remove(inst.id)
            holder.invalidate_side(inst.place[2])
        inst.place = place
        if place[0] == "site":
            self.compartments[place[1]].add_free(place[2], inst.id)
        elif place[0] == "bound":
            holder = self.cells[place[1]]
            holder.bound[place[2]].append(inst.id)
            holder.invalidate_side(place[2])

    def _update_anchoring(self, inst_id: int) -> None:
        """Re-derive site/bound placement for the soluble component of an instance."""
        inst = self.instances[inst_id]
        if inst.place[0] == "membrane":
            # membrane molecule: fix up any soluble partners instead
            for bid in list(inst.bond_ids):
                for ia, _, ib, _ in self.bonds[bid].pairs:
                    other = ib if ia == inst_id else ia
                    if self.instances[other].place[0] != "membrane":
                        self._update_anchoring(other)
                        return
            return
        members, anchor = self.soluble_component(inst)
        for m in members:
            if anchor is not None:
                self._set_place(m, ("bound", anchor[0], anchor[1]))
            elif m.place[0] == "bound":
                cell = self.cells[m.place[1]]
                self._set_place(m, ("site", cell.compartment, cell.site))

    # -- cells ---------------------------------------------------------------

    def break_cross_cell_bonds(self, cell: Cell) -> list[Bond]:
        """Break bonds between this cell's membrane and other cells' membranes."""
        broken = []
        for side in range(N_SIDES):
            for inst_id in list(cell.membrane[side]):
                inst = self.instances[inst_id]
                for bid in list(inst.bond_ids):
                    bond = self.bonds.get(bid)
                    if bond is None:
                        continue
                    other = None
                    for ia, _, ib, _ in bond.pairs:
                        for cand in (ia, ib):
                            p = self.instances[cand].place
                            if p[0] == "membrane" and p[1] != cell.id:
                                other = cand
                    if other is not None:
                        self.break_bond(bond)
                        broken.append(bond)
        return broken

    def relocate_cell(self, cell: Cell, target_site: int) -> None:
        comp = self.compartments[cell.compartment]
        if comp.cell_grid[target_site] != -1:
            raise ValueError("target site occupied")
        self.break_cross_cell_bonds(cell)
        comp.cell_grid[cell.site] = -1
        comp.cell_grid[target_site] = cell.id
        self._invalidate_adjacent(comp, cell.site)
        cell.site = target_site
        cell.invalidate_all_sides()
        self._invalidate_adjacent(comp, target_site)

    def _invalidate_adjacent(self, comp: Compartment, site: int) -> None:
        row = comp.neighbor_rows[site]
        for side in range(N_SIDES):
            nb = row[side]
            if nb >= 0:
                cid = comp.cell_grid[nb]
                if cid != -1:
                    self.cells[cid].invalidate_side(opposite_side(side))

    def remove_cell(self, cell: Cell, release_internal: bool = False) -> None:
        """Take a cell off the lattice; membrane molecules are discarded.

        With ``release_internal`` the internal store spills to the site as
        soluble molecules (burst), otherwise it is discarded with the cell.
        """
        comp = self.compartments[cell.compartment]
        # solubles held by the membrane go down with the cell
        for side in range(N_SIDES):
            for inst_id in list(cell.bound[side]):
                inst = self.instances.get(inst_id)
                if inst is None:
                    continue
                for bid in list(inst.bond_ids):
                    if bid in self.bonds:
                        self.break_bond(self.bonds[bid])
                if inst.id in self.instances:
                    # breaking bonds may have reverted it to free-at-site
                    self.remove_instance(inst)
        for side in range(N_SIDES):
            for inst_id in list(cell.membrane[side]):
                inst = self.instances[inst_id]
                for bid in list(inst.bond_ids):
                    if bid in self.bonds:
                        self.break_bond(self.bonds[bid])
                self.remove_instance(inst)
        if release_internal:
            for type_name in sorted(cell.internal):
                for eps in cell.internal[type_name]:
                    mtype = self.molecule_types[type_name]
                    if mtype.is_plain:
                        comp.add_count(type_name, cell.site, 1)
                    else:
                        inst = MoleculeInstance(self._next_instance, mtype, eps,
                                                ("site", cell.compartment, cell.site))
                        self._next_instance += 1
                        self.instances[inst.id] = inst
                        comp.add_free(cell.site, inst.id)
                        comp.mol_census[type_name] = comp.mol_census.get(type_name, 0) + 1
                        if mtype.decay_prob > 0:
                            self.mortal[inst.id] = mtype.decay_prob
        comp.cell_grid[cell.site] = -1
        comp.cell_census[cell.label] -= 1
        self._invalidate_adjacent(comp, cell.site)
        del self.cells[cell.id]

    def relabel_cell(self, cell: Cell, label: str) -> None:
        comp = self.compartments[cell.compartment]
        comp.cell_census[cell.label] -= 1
        comp.cell_census[label] = comp.cell_census.get(label, 0) + 1
        cell.label = label

    # -- diffusion -----------------------------------------------------------

    def diffuse(self) -> int:
        """One diffusion sweep: plain counts, instance solubles, then cells.

        Boundary hops are rejected (closed walls).  Returns the number of
        moves performed.
        """
        rng = self.rng
        moved = 0
        for comp_name in sorted(self.compartments):
            comp = self.compartments[comp_name]
            spec = comp.spec
            # plain molecule counts
            for tname in sorted(comp.counts):
                p = spec.molecular_diffusion.get(tname, 0.0)
                arr = comp.counts[tname]
                total = comp.mol_census.get(tname, 0)
                if p <= 0.0 or total <= 0:
                    continue
                k = rng.binomial(total, p)
                if k == 0:
                    continue
                movers = rng.multivariate_hypergeometric(arr, k)
                src_sites = np.nonzero(movers)[0]
                src = np.repeat(src_sites, movers[src_sites])
                dirs = rng.integers(0, N_SIDES, size=src.size)
                dst = comp.neighbors[src, dirs]
                ok = dst >= 0
                np.subtract.at(arr, src[ok], 1)
                np.add.at(arr, dst[ok], 1)
                moved += int(ok.sum())
            # instance-tier solubles
            moved += self._diffuse_instances(comp)
            # cells
            moved += self._diffuse_cells(comp)
        return moved

    def _diffuse_instances(self, comp: Compartment) -> int:
        rng = self.rng
        spec = comp.spec
        singles_id: list[int] = []
        singles_site: list[int] = []
        singles_p: list[float] = []
        group_reps: list[MoleculeInstance] = []
        for site in list(comp.solubles):
            for iid in comp.solubles[site]:
                inst = self.instances[iid]
                if inst.bond_ids:
                    group_reps.append(inst)
                    continue
                p = spec.molecular_diffusion.get(inst.mtype.name, 0.0)
                if p > 0.0:
                    singles_id.append(iid)
                    singles_site.append(site)
                    singles_p.append(p)
        moved = 0
        if singles_id:
            u = rng.random(len(singles_id))
            dirs = rng.integers(0, N_SIDES, size=len(singles_id))
            ps = np.asarray(singles_p)
            hop = u < ps
            for i in np.nonzero(hop)[0]:
                iid = singles_id[i]
                inst = self.instances[iid]
                if inst.place[0] != "site":
                    continue
                dst = comp.neighbor_rows[singles_site[i]][dirs[i]]
                if dst < 0:
                    continue
                comp.remove_free(inst.place[2], iid)
                inst.place = ("site", comp.spec.name, int(dst))
                comp.add_free(int(dst), iid)
                moved += 1
        # free-floating complexes hop as a unit at the slowest member rate
        seen: set[int] = set()
        for rep in group_reps:
            if rep.id in seen or rep.place[0] != "site":
                continue
            members, anchor = self.soluble_component(rep)
            seen.update(m.id for m in members)
            if anchor is not None:
                continue
            p = min(spec.molecular_diffusion.get(m.mtype.name, 0.0) for m in members)
            if p <= 0.0 or rng.random() >= p:
                continue
            dst = comp.neighbor_rows[rep.place[2]][int(rng.integers(0, N_SIDES))]
            if dst < 0:
                continue
            for m in members:
                comp.remove_free(m.place[2], m.id)
                m.place = ("site", comp.spec.name, int(dst))
                comp.add_free(int(dst), m.id)
            moved += 1
        return moved

    def _diffuse_cells(self, comp: Compartment) -> int:
        rng = self.rng
        spec = comp.spec
        ids = []
        ps = []
        for cid, cell in self.cells.items():
            if cell.compartment != comp.spec.name:
                continue
            p = spec.cellular_diffusion.get(cell.label,
                                            spec.cellular_diffusion.get(cell.ctype.name, 0.0))
            if p > 0.0:
                ids.append(cid)
                ps.append(p)
        if not ids:
            return 0
        u = rng.random(len(ids))
        dirs = rng.integers(0, N_SIDES, size=len(ids))
        hop = u < np.asarray(ps)
        moved = 0
        for i in np.nonzero(hop)[0]:
            cell = self.cells.get(ids[i])
            if cell is None:
                continue
            dst = comp.neighbor_rows[cell.site][dirs[i]]
            if dst >= 0 and comp.cell_grid[dst] == -1:
                self.relocate_cell(cell, int(dst))
                moved += 1
        return moved

    # -- movement ------------------------------------------------------------

    def molecule_count_at(self, comp: Compartment, type_name: str, site: int) -> int:
        n = 0
        arr = comp.counts.get(type_name)
        if arr is not None:
            n += int(arr[site])
        for iid in comp.solubles.get(site, ()):
            if self.instances[iid].mtype.name == type_name:
                n += 1
        return n

    def move_cell(self, cell: Cell, direction) -> bool:
        """Move one site along an axis direction (0..5) or along a gradient
        ``("gradient", molecule, up)``.  Returns False when blocked."""
        comp = self.compartments[cell.compartment]
        if isinstance(direction, tuple):
            _, molecule, up = direction
            counts = []
            row = comp.neighbor_rows[cell.site]
            for side in range(N_SIDES):
                nb = row[side]
                counts.append(
                    self.molecule_count_at(comp, molecule, nb) if nb >= 0 else None
                )
            valid = [c for c in counts if c is not None]
            if not valid:
                return False
            best = max(valid) if up else min(valid)
            choices = [s for s in range(N_SIDES) if counts[s] == best]
            side = int(choices[self.rng.integers(0, len(choices))])
        else:
            side = int(direction)
            if not (0 <= side < N_SIDES):
                raise ValueError(f"direction must be 0..5, got {direction}")
        dst = comp.neighbor_rows[cell.site][side]
        if dst < 0 or comp.cell_grid[dst] != -1:
            return False
        self.relocate_cell(cell, dst)
        return True

    # -- transfer ------------------------------------------------------------

    def transfer_step(self) -> list[tuple[str, str, str, int]]:
        """Apply transfer rules; returns (agent, source, dest, count) events."""
        rng = self.rng
        events = []
        for rule in self.transfer_rules:
            src = self.compartments[rule.source]
            dst = self.compartments[rule.dest]
            if rule.agent in self.cell_types:
                movers = [c for c in self.cells.values()
                          if c.compartment == rule.source and c.label == rule.agent
                          and rng.random() < rule.rate]
                n = 0
                for cell in movers:
                    free = [i for i, v in enumerate(dst.cell_grid) if v == -1]
                    if not free:
                        continue  # deferred: retry next tick
                    target = free[int(rng.integers(0, len(free)))]
                    self.break_cross_cell_bonds(cell)
                    src.cell_grid[cell.site] = -1
                    self._invalidate_adjacent(src, cell.site)
                    src.cell_census[cell.label] -= 1
                    cell.compartment = rule.dest
                    cell.site = target
                    cell.invalidate_all_sides()
                    dst.cell_grid[target] = cell.id
                    dst.cell_census[cell.label] = dst.cell_census.get(cell.label, 0) + 1
                    self._invalidate_adjacent(dst, target)
                    n += 1
                if n:
                    events.append((rule.agent, rule.source, rule.dest, n))
                continue
            mtype = self.molecule_types.get(rule.agent)
            if mtype is None:
                raise ValueError(f"transfer rule references unknown agent {rule.agent!r}")
            n = 0
            if mtype.is_plain:
                arr = src.counts.get(rule.agent)
                total = src.mol_census.get(rule.agent, 0)
                if arr is None or total <= 0:
                    continue
                k = rng.binomial(total, rule.rate)
                if k == 0:
                    continue
                movers = rng.multivariate_hypergeometric(arr, k)
                sites = np.nonzero(movers)[0]
                for s in sites:
                    src.add_count(rule.agent, int(s), -int(movers[s]))
                targets = rng.integers(0, dst.nsites, size=k)
                for t in targets:
                    dst.add_count(rule.agent, int(t), 1)
                n = int(k)
            else:
                candidates = [self.instances[iid]
                              for site in list(src.solubles)
                              for iid in src.solubles[site]]
                for inst in candidates:
                    if inst.mtype.name != rule.agent or inst.bond_ids:
                        continue
                    if rng.random() >= rule.rate:
                        continue
                    src.remove_free(inst.place[2], inst.id)
                    src.mol_census[rule.agent] -= 1
                    target = int(rng.integers(0, dst.nsites))
                    inst.place = ("site", rule.dest, target)
                    dst.add_free(target, inst.id)
                    dst.mol_census[rule.agent] = dst.mol_census.get(rule.agent, 0) + 1
                    n += 1
            if n:
                events.append((rule.agent, rule.source, rule.dest, n))
        return events

    # -- injection -----------------------------------------------------------

    def _placement_sites(self, comp: Compartment, placement, count: int) -> list[int]:
        mode = placement[0]
        nx, ny, nz = comp.spec.dims
        if mode == "uniform":
            return [int(s) for s in self.rng.integers(0, comp.nsites, size=count)]
        if mode == "wall":
            _, axis, face = placement
            dims = comp.spec.dims
            if not (0 <= axis < 3) or face not in (0, 1):
                raise ValueError("wall placement needs axis 0..2 and face 0|1")
            fixed = 0 if face == 0 else dims[axis] - 1
            other = [d for i, d in enumerate(dims) if i != axis]
            sites = []
            for _ in range(count):
                a = int(self.rng.integers(0, other[0]))
                b = int(self.rng.integers(0, other[1]))
                coords = [0, 0, 0]
                coords[axis] = fixed
                rest = [i for i in range(3) if i != axis]
                coords[rest[0]] = a
                coords[rest[1]] = b
                sites.append(comp.site_index(*coords))
            return sites
        if mode == "point":
            _, x, y, z = placement
            return [comp.site_index(x, y, z)] * count
        raise ValueError(f"unknown placement mode {mode!r}")

    def inject(self, compartment: str, agent: str, placement, count: int) -> int:
        """Place agents; cells only land on free sites (collisions skipped).

        ``placement`` is ``("uniform",)``, ``("wall", axis, face)`` or
        ``("point", x, y, z)``.  Returns the number actually placed.
        """
        if count < 1:
            raise ValueError("count must be >= 1")
        if compartment not in self.compartments:
            raise ValueError(f"unknown compartment {compartment!r}")
        comp = self.compartments[compartment]
        sites = self._placement_sites(comp, placement, count)
        placed = 0
        if agent in self.cell_types:
            for site in sites:
                if comp.cell_grid[site] == -1:
                    self.spawn_cell(agent, compartment, site)
                    placed += 1
            return placed
        if agent not in self.molecule_types:
            raise ValueError(f"unknown agent type {agent!r}")
        for site in sites:
            self.spawn_soluble(agent, compartment, site, 1)
            placed += 1
        return placed

    # -- observation ---------------------------------------------------------

    def site_array(self, compartment: str, agent: str) -> np.ndarray:
        """Dense per-site counts of an agent (cell label or molecule type)."""
        comp = self.compartments[compartment]
        out = np.zeros(comp.nsites, dtype=np.int64)
        if agent in self.cell_types or agent not in self.molecule_types:
            for cell in self.cells.values():
                if cell.compartment == compartment and cell.label == agent:
                    out[cell.site] += 1
            if agent in self.molecule_types:
                pass
            return out
        arr = comp.counts.get(agent)
        if arr is not None:
            out += arr
        for inst in self.instances.values():
            if inst.mtype.name != agent:
                continue
            c, s = self.instance_compartment_site(inst)
            if c == compartment and inst.place[0] != "membrane":
                out[s] += 1
        return out

    def slice_concentration(self, compartment: str, agent: str,
                            axis: int, index: int) -> np.ndarray:
        comp = self.compartments[compartment]
        nx, ny, nz = comp.spec.dims
        if not (0 <= axis < 3):
            raise IndexError("axis must be 0, 1 or 2")
        if not (0 <= index < comp.spec.dims[axis]):
            raise IndexError(f"slice index {index} out of range for axis {axis}")
        grid = self.site_array(compartment, agent).reshape(nz, ny, nx)
        if axis == 0:
            return grid[:, :, index].copy()
        if axis == 1:
            return grid[:, index, :].copy()
        return grid[index, :, :].copy()

    def profile_along(self, compartment: str, agent: str, axis: int) -> np.ndarray:
        """Per-slice agent total divided by the number of cells in the slice."""
        comp = self.compartments[compartment]
        nx, ny, nz = comp.spec.dims
        if not (0 <= axis < 3):
            raise IndexError("axis must be 0, 1 or 2")
        grid = self.site_array(compartment, agent).reshape(nz, ny, nx)
        occ = np.fromiter((1 if v >= 0 else 0 for v in comp.cell_grid),
                          dtype=np.int64, count=comp.nsites).reshape(nz, ny, nx)
        np_axis = {0: (0, 1), 1: (0, 2), 2: (1, 2)}[axis]
        totals = grid.sum(axis=np_axis)
        cells = occ.sum(axis=np_axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(cells > 0, totals / np.maximum(cells, 1), np.nan)

    def census(self) -> dict[str, dict[str, int]]:
        out = {}
        for name in sorted(self.compartments):
            comp = self.compartments[name]
            entry = {k: v for k, v in sorted(comp.cell_census.items()) if v != 0}
            entry.update({k: v for k, v in sorted(comp.mol_census.items()) if v != 0})
            out[name] = entry
        return out

    # -- integrity -----------------------------------------------------------

    def state_hash(self) -> str:
        """Deterministic digest of the observable world state."""
        h = hashlib.sha256()
        h.update(f"tick={self.tick}\n".encode())
        for name in sorted(self.compartments):
            comp = self.compartments[name]
            h.update(name.encode())
            h.update(np.asarray(comp.cell_grid, dtype=np.int64).tobytes())
            for tname in sorted(comp.counts):
                if comp.mol_census.get(tname, 0):
                    h.update(tname.encode())
                    h.update(comp.counts[tname].tobytes())
        for cid in sorted(self.cells):
            c = self.cells[cid]
            membrane = ";".join(
                ",".join(f"{self.instances[i].mtype.name}:{self.instances[i].epitopes}"
                         for i in side)
                for side in c.membrane
            )
            internal = ";".join(f"{k}={len(v)}" for k, v in sorted(c.internal.items()))
            mechs = ",".join(m.name for m in c.mechanisms)
            h.update(
                f"C{cid}|{c.ctype.name}|{c.label}|{c.clone_id}|{c.random_epitopes}|"
                f"{c.age}|{c.compartment}|{c.site}|{membrane}|{internal}|{mechs}\n".encode()
            )
        for iid in sorted(self.instances):
            inst = self.instances[iid]
            h.update(
                f"M{iid}|{inst.mtype.name}|{inst.epitopes}|{inst.place}|"
                f"{inst.occupied}\n".encode()
            )
        for bid in sorted(self.bonds):
            b = self.bonds[bid]
            h.update(f"B{bid}|{b.pairs}\n".encode())
        return h.hexdigest()

    def validate(self) -> None:
        """Assert structural invariants; used by tests and debug runs."""
        for name, comp in self.compartments.items():
            occupied = [i for i, v in enumerate(comp.cell_grid) if v >= 0]
            for site in occupied:
                cid = comp.cell_grid[site]
                cell = self.cells.get(cid)
                assert cell is not None, f"grid points at dead cell {cid}"
                assert cell.site == site and cell.compartment == name
            for site, ids in comp.solubles.items():
                for iid in ids:
                    inst = self.instances[iid]
                    assert inst.place == ("site", name, site), (inst.place, name, site)
        by_label: dict[tuple[str, str], int] = {}
        for cell in self.cells.values():
            key = (cell.compartment, cell.label)
            by_label[key] = by_label.get(key, 0) + 1
        for name, comp in self.compartments.items():
            for label, n in comp.cell_census.items():
                assert by_label.get((name, label), 0) == n, (
                    f"census drift for {label} in {name}"
                )
        for bond in self.bonds.values():
            for ia, ea, ib, eb in bond.pairs:
                assert self.instances[ia].occupied[ea]
                assert self.instances[ib].occupied[eb]
