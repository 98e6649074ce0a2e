"""Spatial statistics over a world's final lattice: connected clusters of
cell labels and enclosure analysis (which free sites are walled in)."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .lattice import World


@dataclass(frozen=True)
class Cluster:
    label: str
    sites: tuple[int, ...]
    diameter: int          # max axis-aligned extent, in sites

    @property
    def size(self) -> int:
        return len(self.sites)


def label_clusters(world: World, compartment: str, labels: set[str]
                   ) -> list[Cluster]:
    """6-neighbor connected components of cells whose label is in the set.

    Components are per-label: two adjacent cells of different labels belong
    to different clusters.
    """
    comp = world.compartments[compartment]
    site_label: dict[int, str] = {}
    for cell in world.cells.values():
        if cell.compartment == compartment and cell.label in labels:
            site_label[cell.site] = cell.label
    seen: set[int] = set()
    clusters = []
    for start in sorted(site_label):
        if start in seen:
            continue
        label = site_label[start]
        queue = deque([start])
        seen.add(start)
        sites = []
        while queue:
            s = queue.popleft()
            sites.append(s)
            for nb in comp.neighbor_rows[s]:
                if nb >= 0 and nb not in seen and site_label.get(nb) == label:
                    seen.add(nb)
                    queue.append(nb)
        coords = np.array([comp.xyz(s) for s in sites])
        diameter = int((coords.max(axis=0) - coords.min(axis=0)).max()) + 1
        clusters.append(Cluster(label, tuple(sites), diameter))
    return clusters


def enclosed_sites(world: World, compartment: str, blocker_labels: set[str]
                   ) -> set[int]:
    """Sites unreachable from the compartment boundary without crossing a
    blocker cell.  Blocked sites themselves are not reported."""
    comp = world.compartments[compartment]
    blocked = {cell.site for cell in world.cells.values()
               if cell.compartment == compartment and cell.label in blocker_labels}
    nx, ny, nz = comp.spec.dims
    outside: set[int] = set()
    queue: deque[int] = deque()
    for s in range(comp.nsites):
        x, y, z = comp.xyz(s)
        on_boundary = (x in (0, nx - 1) or y in (0, ny - 1) or z in (0, nz - 1))
        if on_boundary and s not in blocked:
            outside.add(s)
            queue.append(s)
    while queue:
        s = queue.popleft()
        for nb in comp.neighbor_rows[s]:
            if nb >= 0 and nb not in outside and nb not in blocked:
                outside.add(nb)
                queue.append(nb)
    return {s for s in range(comp.nsites)
            if s not in blocked and s not in outside}


def interior_exclusion(world: World, compartment: str, roamer_label: str,
                       blocker_labels: set[str]) -> dict:
    """Observed vs uniform-placement fraction of roamer cells sitting on
    sites enclosed by blocker clusters.

    The uniform null places the same roamers on any site not occupied by a
    blocker or another cell type; its expected interior fraction is the
    enclosed share of those candidate sites.
    """
    comp = world.compartments[compartment]
    enclosed = enclosed_sites(world, compartment, blocker_labels)
    roamers = [c for c in world.cells.values()
               if c.compartment == compartment and c.label == roamer_label]
    other_cells = {c.site for c in world.cells.values()
                   if c.compartment == compartment
                   and c.label != roamer_label and c.label not in blocker_labels}
    blocked = {c.site for c in world.cells.values()
               if c.compartment == compartment and c.label in blocker_labels}
    candidates = [s for s in range(comp.nsites)
                  if s not in blocked and s not in other_cells]
    observed_interior = sum(1 for c in roamers if c.site in enclosed)
    expected_fraction = (
        len([s for s in candidates if s in enclosed]) / len(candidates)
        if candidates else 0.0
    )
    return {
        "roamers": len(roamers),
        "observed_interior": observed_interior,
        "observed_fraction": observed_interior / len(roamers) if roamers else 0.0,
        "expected_fraction": expected_fraction,
        "enclosed_sites": len(enclosed),
    }
