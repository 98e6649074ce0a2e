"""Event records emitted by the engine and consumed by logs and analysis."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True, slots=True)
class ActionEvent:
    """One cell action or lifecycle event, timestamped and located.

    ``kind`` is an action kind or a lifecycle kind (``die``, ``born``,
    ``relabel``, ``division_blocked``).  ``target`` carries the action's
    object where one exists (killed label, new type, cause of death).
    """

    tick: int
    compartment: str
    x: int
    y: int
    z: int
    cell_id: int
    clone_id: int
    label: str
    kind: str
    target: Optional[str] = None
    level: int = 0

    @property
    def analysis_label(self) -> str:
        return f"{self.label}.{self.kind}"


@dataclass(frozen=True, slots=True)
class BondEvent:
    tick: int
    compartment: str
    x: int
    y: int
    z: int
    kind: str                     # bind | unbind | decay
    participants: tuple           # ((instance_id, epitope_idx), ...)
    molecule: str = ""


@dataclass
class TickReport:
    tick: int
    action_counts: dict[str, int] = field(default_factory=dict)
    census: dict[str, dict[str, int]] = field(default_factory=dict)
    events: list = field(default_factory=list)
    bond_events: list = field(default_factory=list)
    ledger: Optional[dict] = None
