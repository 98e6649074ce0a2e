"""Domain vocabulary shared by the whole engine.

Epitopes are opaque integer ids in a per-scenario universe ``[0, U)``.
Which epitopes can bind is an explicit symmetric relation (the affinity
table) carrying per-tick bind/unbind probabilities.  Everything else --
molecules, cells, mechanisms -- is plain data built on top of that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

INF = math.inf

#: Neighbor directions, arranged so that ``opposite(k) == k ^ 1``.
DIRECTIONS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
N_SIDES = 6


def opposite_side(side: int) -> int:
    return side ^ 1


class ConfigError(ValueError):
    """A scenario or type definition violates a structural constraint."""


@dataclass(frozen=True)
class BindRate:
    bind: float
    unbind: float


class AffinityTable:
    """Symmetric epitope-pair relation with per-tick bind/unbind probabilities.

    Pairs are unordered; ``(a, a)`` self-pairs are allowed (homotypic
    receptors).  Epitope ids must lie inside the declared universe.
    """

    def __init__(self, universe_size: int):
        if universe_size < 0:
            raise ConfigError("epitope universe size must be >= 0")
        self.universe_size = universe_size
        self._pairs: dict[tuple[int, int], BindRate] = {}

    def _check(self, e: int) -> None:
        if not (0 <= e < self.universe_size):
            raise ConfigError(
                f"epitope {e} outside universe [0, {self.universe_size})"
            )

    @staticmethod
    def _key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a <= b else (b, a)

    def add_pair(self, a: int, b: int, bind: float, unbind: float) -> None:
        self._check(a)
        self._check(b)
        if not (0.0 <= bind <= 1.0 and 0.0 <= unbind <= 1.0):
            raise ConfigError(f"probabilities for pair ({a},{b}) must be in [0,1]")
        self._pairs[self._key(a, b)] = BindRate(bind, unbind)

    def can_bind(self, a: int, b: int) -> bool:
        self._check(a)
        self._check(b)
        return self._key(a, b) in self._pairs

    def rate(self, a: int, b: int) -> Optional[BindRate]:
        self._check(a)
        self._check(b)
        return self._pairs.get(self._key(a, b))

    def pairs(self) -> list[tuple[int, int, BindRate]]:
        return [(a, b, r) for (a, b), r in sorted(self._pairs.items())]

    def partners(self, e: int) -> set[int]:
        self._check(e)
        out = set()
        for a, b in self._pairs:
            if a == e:
                out.add(b)
            if b == e:
                out.add(a)
        return out

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, AffinityTable)
            and other.universe_size == self.universe_size
            and other._pairs == self._pairs
        )

    def __repr__(self) -> str:
        return f"AffinityTable(U={self.universe_size}, pairs={len(self._pairs)})"


@dataclass(frozen=True)
class BindingSite:
    """An ordered group of 1 or 2 epitope ids acting as one binding unit.

    A 2-epitope site only binds a presenting molecule, and only when both
    of its epitopes bind their respective targets (own epitope, presented
    epitope).
    """

    epitopes: tuple[int, ...]

    def __post_init__(self):
        if len(self.epitopes) not in (1, 2):
            raise ConfigError("binding site must hold 1 or 2 epitopes")

    @property
    def arity(self) -> int:
        return len(self.epitopes)


def site_binds_target(table: AffinityTable, site: BindingSite,
                      targets: Iterable[int]) -> bool:
    """True iff every epitope of the site binds its positional target."""
    targets = tuple(targets)
    if len(targets) != site.arity:
        raise ValueError(
            f"target arity {len(targets)} != site arity {site.arity}"
        )
    return all(table.can_bind(e, t) for e, t in zip(site.epitopes, targets))


def sample_random_binding_site(rng, universe_size: int, arity: int) -> BindingSite:
    """Draw ``arity`` epitope ids uniformly (with replacement) from the universe."""
    if arity not in (1, 2):
        raise ValueError("arity must be 1 or 2")
    if universe_size < max(1, arity):
        raise ValueError("epitope universe too small for random site")
    return BindingSite(tuple(int(rng.integers(0, universe_size)) for _ in range(arity)))


def complex_pattern(type_names: Iterable[str]) -> str:
    """Canonical label of a complex: member type names sorted, ':'-joined."""
    names = sorted(type_names)
    if not names:
        raise ValueError("a complex has at least one member")
    return ":".join(names)


@dataclass(frozen=True)
class MoleculeType:
    """A molecule species.

    ``epitopes`` are the fixed epitopes every instance carries.
    ``clonal_epitopes`` instances additionally carry that many epitopes
    copied from the expressing cell's founder draw (receptor/antibody
    idiotypes); they are appended after the fixed ones.  Binding-site
    indices refer to the combined list.  A ``presentation_slot`` type can
    carry one extra presented epitope, appended last when loaded.
    """

    name: str
    epitopes: tuple[int, ...] = ()
    clonal_epitopes: int = 0
    binding_sites: tuple[BindingSite, ...] = ()
    mean_lifetime: float = INF
    fragments: tuple[str, ...] = ()
    presentation_slot: bool = False

    def __post_init__(self):
        if not self.name:
            raise ConfigError("molecule type needs a name")
        if self.mean_lifetime <= 0:
            raise ConfigError(f"molecule {self.name}: mean_lifetime must be > 0")
        if self.clonal_epitopes < 0:
            raise ConfigError(f"molecule {self.name}: clonal_epitopes must be >= 0")
        n = len(self.epitopes) + self.clonal_epitopes
        for site in self.binding_sites:
            for idx in site.epitopes:
                if not (0 <= idx < n):
                    raise ConfigError(
                        f"molecule {self.name}: binding site index {idx} out of range"
                    )
        if self.presentation_slot and len(self.epitopes) < 1:
            raise ConfigError(
                f"molecule {self.name}: a presenting type needs one own epitope"
            )

    @property
    def decay_prob(self) -> float:
        return 0.0 if math.isinf(self.mean_lifetime) else 1.0 / self.mean_lifetime

    @property
    def is_plain(self) -> bool:
        """No epitopes and no presentation slot: the instance has no identity.

        Plain types (cytokines, reporter molecules) are stored as per-site
        counts instead of individual instances.
        """
        return (
            not self.epitopes
            and self.clonal_epitopes == 0
            and not self.presentation_slot
        )


@dataclass(frozen=True)
class Condition:
    """One conjunct of a mechanism's stimulus description.

    kinds:
      surface_complex            pattern count on the membrane >= threshold
      surface_count_at_least     instances of a molecule type >= threshold
      surface_count_at_most      instances of a molecule type <= threshold
      contact_cell_type          some 6-neighbor cell carries one of the labels
      site_molecule_at_least     free soluble count at the own site >= threshold
      internal_molecule_at_least count of a molecule type held inside >= threshold

    ``side_scoped`` surface conditions are evaluated per membrane side and
    record which sides matched; ``negated`` is the AND NOT form.
    """

    kind: str
    pattern: str = ""
    labels: tuple[str, ...] = ()
    threshold: int = 1
    side_scoped: bool = False
    negated: bool = False

    SURFACE_KINDS = ("surface_complex", "surface_count_at_least", "surface_count_at_most")
    KINDS = SURFACE_KINDS + (
        "contact_cell_type", "site_molecule_at_least", "internal_molecule_at_least",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown condition kind {self.kind!r}")
        if self.threshold < 1:
            raise ConfigError(f"{self.kind}: threshold must be >= 1")
        if self.side_scoped and self.kind not in self.SURFACE_KINDS:
            raise ConfigError(f"{self.kind}: side_scoped only applies to surface kinds")
        if self.kind == "contact_cell_type":
            if not self.labels:
                raise ConfigError("contact_cell_type needs at least one label")
        elif not self.pattern:
            raise ConfigError(f"{self.kind}: needs a pattern/type argument")


ACTION_KINDS = (
    "express", "secrete", "ingest", "kill_contact", "move_random",
    "move_gradient", "divide", "differentiate", "die",
    "add_mechanism", "remove_mechanism", "present",
)


@dataclass(frozen=True)
class Action:
    """One effect of a mechanism.  Field use depends on ``kind``:

      express          molecule, count, side ("random"|"matched"|"all"|0..5)
      secrete          molecule, count, where ("site"|"internal")
      ingest           pattern (surface complex whose non-membrane members
                       are taken into the cell)
      kill_contact     target labels (empty = any neighbor on matched sides)
      move_random      --
      move_gradient    molecule, gradient_up
      divide           --
      differentiate    cell_type
      die              release_internal (burst semantics)
      add_mechanism    mechanisms, relabel, remove (names dropped atomically)
      remove_mechanism names
      present          molecule (the presenting type), source (internal type
                       whose epitope is loaded), count, side
    """

    kind: str
    molecule: Optional[str] = None
    count: int = 1
    side: object = "random"
    where: str = "site"
    target: tuple[str, ...] = ()
    cell_type: Optional[str] = None
    pattern: Optional[str] = None
    gradient_up: bool = True
    mechanisms: tuple["Mechanism", ...] = ()
    names: tuple[str, ...] = ()
    relabel: Optional[str] = None
    release_internal: bool = False
    source: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ConfigError(f"unknown action kind {self.kind!r}")
        if self.count < 1:
            raise ConfigError(f"{self.kind}: count must be >= 1")
        if self.kind in ("express", "secrete", "move_gradient", "present") and not self.molecule:
            raise ConfigError(f"{self.kind}: needs a molecule argument")
        if self.kind == "differentiate" and not self.cell_type:
            raise ConfigError("differentiate: needs a cell_type argument")
        if self.kind == "ingest" and not self.pattern:
            raise ConfigError("ingest: needs a complex pattern argument")
        if self.kind == "remove_mechanism" and not self.names:
            raise ConfigError("remove_mechanism: needs mechanism names")
        if self.kind == "add_mechanism" and not self.mechanisms and not self.relabel and not self.names:
            raise ConfigError("add_mechanism: needs mechanisms, names to drop, or a relabel")
        if self.kind == "secrete" and self.where not in ("site", "internal"):
            raise ConfigError("secrete: where must be 'site' or 'internal'")


@dataclass(frozen=True)
class Mechanism:
    """A stimulus-response rule: AND/AND-NOT conditions paired with actions.

    An empty condition list is constitutive (fires every tick).  ``prob``
    thins firing to that per-tick probability once the conditions hold;
    ``log`` controls whether the resulting actions are written to the
    event log.
    """

    name: str
    conditions: tuple[Condition, ...] = ()
    actions: tuple[Action, ...] = ()
    prob: float = 1.0
    log: bool = True

    def __post_init__(self):
        if not self.actions:
            raise ConfigError(f"mechanism {self.name!r}: action list must be non-empty")
        if not (0.0 < self.prob <= 1.0):
            raise ConfigError(f"mechanism {self.name!r}: prob must be in (0,1]")


@dataclass(frozen=True)
class CellType:
    name: str
    mechanisms: tuple[Mechanism, ...] = ()
    mean_lifetime: float = INF
    size: int = 1
    random_epitopes: int = 0

    def __post_init__(self):
        if self.mean_lifetime <= 0:
            raise ConfigError(f"cell type {self.name}: mean_lifetime must be > 0")
        if self.size != 1:
            raise ConfigError("cell size is fixed at 1 lattice site")
        names = [m.name for m in self.mechanisms]
        if len(names) != len(set(names)):
            raise ConfigError(f"cell type {self.name}: duplicate mechanism names")

    @property
    def death_prob(self) -> float:
        return 0.0 if math.isinf(self.mean_lifetime) else 1.0 / self.mean_lifetime


class MoleculeInstance:
    """One identified molecule with realized epitopes and bond state.

    ``epitopes`` is the fixed list, plus any clonal epitopes, plus (for a
    loaded presenting molecule) the presented epitope appended last.
    ``place`` is one of ``("site", compartment, site)``, ``("membrane",
    cell_id, side)`` or ``("bound", cell_id, side)`` for a soluble molecule
    held by a membrane bond.
    """

    __slots__ = ("id", "mtype", "epitopes", "occupied", "bond_ids", "place")

    def __init__(self, instance_id: int, mtype: MoleculeType,
                 epitopes: tuple[int, ...], place: tuple):
        self.id = instance_id
        self.mtype = mtype
        self.epitopes = epitopes
        self.occupied = [False] * len(epitopes)
        self.bond_ids: list[int] = []
        self.place = place

    @property
    def presented_epitope(self) -> Optional[int]:
        if self.mtype.presentation_slot and len(self.epitopes) > len(self.mtype.epitopes) + self.mtype.clonal_epitopes:
            return self.epitopes[-1]
        return None

    @property
    def is_bound(self) -> bool:
        return bool(self.bond_ids)

    def free_epitope_indices(self) -> list[int]:
        return [i for i, occ in enumerate(self.occupied) if not occ]

    def __repr__(self) -> str:
        return f"<{self.mtype.name}#{self.id} at {self.place}>"


@dataclass
class Bond:
    """One chemical bond; a 2-epitope site bond carries two epitope pairs
    that form and break as a unit."""

    id: int
    pairs: tuple[tuple[int, int, int, int], ...]  # (inst_a, idx_a, inst_b, idx_b)
    unbind_prob: float


class Cell:
    """One cell on the lattice.

    The membrane is partitioned into 6 sides matching the 6-neighbor
    directions.  ``mechanisms`` starts as the type's list and is only
    changed by add/remove_mechanism actions.  ``internal`` holds ingested
    or internally produced molecules as epitope tuples per type name.
    """

    __slots__ = ("id", "ctype", "label", "clone_id", "random_epitopes", "age",
                 "compartment", "site", "membrane", "bound", "internal",
                 "mechanisms", "_side_cache")

    def __init__(self, cell_id: int, ctype: CellType, clone_id: int,
                 random_epitopes: tuple[int, ...], compartment: str, site: int):
        self.id = cell_id
        self.ctype = ctype
        self.label = ctype.name
        self.clone_id = clone_id
        self.random_epitopes = random_epitopes
        self.age = 0
        self.compartment = compartment
        self.site = site
        self.membrane: list[list[int]] = [[] for _ in range(N_SIDES)]
        # soluble instances held on each side through membrane bonds
        self.bound: list[list[int]] = [[] for _ in range(N_SIDES)]
        self.internal: dict[str, list[tuple[int, ...]]] = {}
        self.mechanisms: list[Mechanism] = list(ctype.mechanisms)
        # per-side (complex-pattern Counter, molecule-type Counter)
        self._side_cache: list = [None] * N_SIDES

    def invalidate_side(self, side: int) -> None:
        self._side_cache[side] = None

    def invalidate_all_sides(self) -> None:
        self._side_cache = [None] * N_SIDES

    def internal_count(self, type_name: str) -> int:
        return len(self.internal.get(type_name, ()))

    def add_internal(self, type_name: str, epitopes: tuple[int, ...]) -> None:
        self.internal.setdefault(type_name, []).append(epitopes)

    def __repr__(self) -> str:
        return f"<Cell {self.label}#{self.id} @{self.compartment}:{self.site}>"
