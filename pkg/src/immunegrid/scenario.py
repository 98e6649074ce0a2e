"""Declarative scenario files: parsing, validation, serialization, builtins.

A scenario is one JSON document with sections for the epitope universe,
affinity pairs, molecule types, cell types, compartments, transfers, an
injection schedule and run settings.  Unknown keys are rejected so typos
fail loudly; all cross-references are resolved at load time.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Optional

from .core import (
    Action, AffinityTable, BindingSite, CellType, Condition, ConfigError,
    Mechanism, MoleculeType,
)
from .kinetics import KineticsParams, KineticsState
from .lattice import CompartmentSpec, TransferRule

FORMAT_VERSION = 1

BUILTIN_NAMES = ("feedback_local", "simple_is", "bcell_crosslink",
                 "kinetics_fig1", "kinetics_fig2")


class ScenarioError(ConfigError):
    """Scenario text failed to parse or resolve."""


@dataclass(frozen=True)
class Injection:
    tick: int
    compartment: str
    agent: str
    placement: tuple
    count: int


@dataclass
class Scenario:
    name: str
    epitope_universe: int
    affinity: AffinityTable
    molecules: dict[str, MoleculeType]
    cells: dict[str, CellType]
    compartments: list[CompartmentSpec]
    transfers: list[TransferRule] = field(default_factory=list)
    schedule: list[Injection] = field(default_factory=list)
    ticks: int = 1000
    seed: Optional[int] = None
    params: dict[str, float] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_failed(self) -> None:
        if self.errors:
            raise ScenarioError("; ".join(self.errors))


# -- strict JSON helpers -----------------------------------------------------

def _take(obj: dict, context: str, known: dict[str, Any]) -> dict[str, Any]:
    """Pull known keys (with defaults); reject anything unexpected."""
    unknown = set(obj) - set(known)
    if unknown:
        raise ScenarioError(f"{context}: unknown key(s) {sorted(unknown)}")
    return {k: obj.get(k, dflt) for k, dflt in known.items()}


def _lifetime(value, context: str) -> float:
    if value is None or value == "inf":
        return math.inf
    if not isinstance(value, (int, float)) or value <= 0:
        raise ScenarioError(f"{context}: mean_lifetime must be positive or null")
    return float(value)


def _condition(obj: dict, context: str) -> Condition:
    got = _take(obj, context, {
        "kind": None, "pattern": "", "labels": [], "threshold": 1,
        "side_scoped": False, "negated": False,
    })
    try:
        return Condition(got["kind"], got["pattern"], tuple(got["labels"]),
                         got["threshold"], got["side_scoped"], got["negated"])
    except ConfigError as e:
        raise ScenarioError(f"{context}: {e}") from e


def _action(obj: dict, context: str) -> Action:
    got = _take(obj, context, {
        "kind": None, "molecule": None, "count": 1, "side": "random",
        "where": "site", "target": [], "cell_type": None, "pattern": None,
        "gradient_up": True, "mechanisms": [], "names": [], "relabel": None,
        "release_internal": False, "source": None,
    })
    mechanisms = tuple(
        _mechanism(m, f"{context}.mechanisms[{i}]")
        for i, m in enumerate(got["mechanisms"])
    )
    try:
        return Action(got["kind"], got["molecule"], got["count"], got["side"],
                      got["where"], tuple(got["target"]), got["cell_type"],
                      got["pattern"], got["gradient_up"], mechanisms,
                      tuple(got["names"]), got["relabel"],
                      got["release_internal"], got["source"])
    except ConfigError as e:
        raise ScenarioError(f"{context}: {e}") from e


def _mechanism(obj: dict, context: str) -> Mechanism:
    got = _take(obj, context, {
        "name": None, "conditions": [], "actions": [], "prob": 1.0, "log": True,
    })
    if not got["name"]:
        raise ScenarioError(f"{context}: mechanism needs a name")
    conditions = tuple(
        _condition(c, f"{context}.conditions[{i}]")
        for i, c in enumerate(got["conditions"])
    )
    actions = tuple(
        _action(a, f"{context}.actions[{i}]")
        for i, a in enumerate(got["actions"])
    )
    try:
        return Mechanism(got["name"], conditions, actions, got["prob"], got["log"])
    except ConfigError as e:
        raise ScenarioError(f"{context}: {e}") from e


def _placement(obj: dict, context: str) -> tuple:
    got = _take(obj, context, {"mode": None, "axis": None, "face": None,
                               "point": None})
    mode = got["mode"]
    if mode == "uniform":
        return ("uniform",)
    if mode == "wall":
        if got["axis"] not in (0, 1, 2) or got["face"] not in (0, 1):
            raise ScenarioError(f"{context}: wall placement needs axis 0..2, face 0|1")
        return ("wall", got["axis"], got["face"])
    if mode == "point":
        pt = got["point"]
        if not (isinstance(pt, list) and len(pt) == 3):
            raise ScenarioError(f"{context}: point placement needs point [x,y,z]")
        return ("point", *pt)
    raise ScenarioError(f"{context}: unknown placement mode {mode!r}")


def parse_scenario(text: str) -> Scenario:
    """Parse scenario JSON; raises ScenarioError with position or name info."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(
            f"syntax error at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    got = _take(doc, "scenario", {
        "format_version": None, "name": None, "notes": {}, "epitope_universe": 0,
        "affinity": [], "molecules": [], "cells": [], "compartments": [],
        "transfers": [], "schedule": [], "run": {}, "params": {},
    })
    if got["format_version"] != FORMAT_VERSION:
        raise ScenarioError(
            f"unsupported format_version {got['format_version']!r} "
            f"(this build reads {FORMAT_VERSION})"
        )
    if not got["name"]:
        raise ScenarioError("scenario needs a name")

    universe = got["epitope_universe"]
    table = AffinityTable(universe)
    for i, pair in enumerate(got["affinity"]):
        p = _take(pair, f"affinity[{i}]", {"a": None, "b": None,
                                           "bind": None, "unbind": None})
        try:
            table.add_pair(p["a"], p["b"], p["bind"], p["unbind"])
        except ConfigError as e:
            raise ScenarioError(f"affinity[{i}]: {e}") from e

    molecules: dict[str, MoleculeType] = {}
    for i, m in enumerate(got["molecules"]):
        got_m = _take(m, f"molecules[{i}]", {
            "name": None, "epitopes": [], "clonal_epitopes": 0,
            "binding_sites": [], "mean_lifetime": None, "fragments": [],
            "presentation_slot": False,
        })
        try:
            mol = MoleculeType(
                got_m["name"], tuple(got_m["epitopes"]), got_m["clonal_epitopes"],
                tuple(BindingSite(tuple(s)) for s in got_m["binding_sites"]),
                _lifetime(got_m["mean_lifetime"], f"molecules[{i}]"),
                tuple(got_m["fragments"]), got_m["presentation_slot"],
            )
        except ConfigError as e:
            raise ScenarioError(f"molecules[{i}]: {e}") from e
        if mol.name in molecules:
            raise ScenarioError(f"duplicate molecule type {mol.name!r}")
        molecules[mol.name] = mol

    cells: dict[str, CellType] = {}
    for i, c in enumerate(got["cells"]):
        got_c = _take(c, f"cells[{i}]", {
            "name": None, "mechanisms": [], "mean_lifetime": None,
            "size": 1, "random_epitopes": 0,
        })
        mechs = tuple(
            _mechanism(m, f"cells[{i}].mechanisms[{j}]")
            for j, m in enumerate(got_c["mechanisms"])
        )
        try:
            ct = CellType(got_c["name"], mechs,
                          _lifetime(got_c["mean_lifetime"], f"cells[{i}]"),
                          got_c["size"], got_c["random_epitopes"])
        except ConfigError as e:
            raise ScenarioError(f"cells[{i}]: {e}") from e
        if ct.name in cells:
            raise ScenarioError(f"duplicate cell type {ct.name!r}")
        cells[ct.name] = ct

    compartments = []
    for i, comp in enumerate(got["compartments"]):
        got_k = _take(comp, f"compartments[{i}]", {
            "name": None, "dims": None, "molecular_diffusion": {},
            "cellular_diffusion": {}, "initial_cells": {},
            "initial_molecules": {},
        })
        try:
            compartments.append(CompartmentSpec(
                got_k["name"], tuple(got_k["dims"]),
                dict(got_k["molecular_diffusion"]),
                dict(got_k["cellular_diffusion"]),
                dict(got_k["initial_cells"]), dict(got_k["initial_molecules"]),
            ))
        except (ValueError, TypeError) as e:
            raise ScenarioError(f"compartments[{i}]: {e}") from e

    transfers = []
    for i, t in enumerate(got["transfers"]):
        got_t = _take(t, f"transfers[{i}]", {"from": None, "to": None,
                                             "agent": None, "rate": None})
        try:
            transfers.append(TransferRule(got_t["from"], got_t["to"],
                                          got_t["agent"], got_t["rate"]))
        except ValueError as e:
            raise ScenarioError(f"transfers[{i}]: {e}") from e

    schedule = []
    for i, s in enumerate(got["schedule"]):
        got_s = _take(s, f"schedule[{i}]", {
            "tick": None, "compartment": None, "agent": None,
            "placement": None, "count": None,
        })
        schedule.append(Injection(
            got_s["tick"], got_s["compartment"], got_s["agent"],
            _placement(got_s["placement"], f"schedule[{i}].placement"),
            got_s["count"],
        ))

    run = _take(got["run"], "run", {"ticks": 1000, "seed": None})
    return Scenario(
        name=got["name"], epitope_universe=universe, affinity=table,
        molecules=molecules, cells=cells, compartments=compartments,
        transfers=transfers, schedule=schedule, ticks=run["ticks"],
        seed=run["seed"], params=dict(got["params"]), notes=dict(got["notes"]),
    )


# -- serialization -----------------------------------------------------------

def _condition_doc(c: Condition) -> dict:
    out: dict[str, Any] = {"kind": c.kind}
    if c.pattern:
        out["pattern"] = c.pattern
    if c.labels:
        out["labels"] = list(c.labels)
    if c.threshold != 1:
        out["threshold"] = c.threshold
    if c.side_scoped:
        out["side_scoped"] = True
    if c.negated:
        out["negated"] = True
    return out


def _action_doc(a: Action) -> dict:
    out: dict[str, Any] = {"kind": a.kind}
    if a.molecule is not None:
        out["molecule"] = a.molecule
    if a.count != 1:
        out["count"] = a.count
    if a.side != "random":
        out["side"] = a.side
    if a.where != "site":
        out["where"] = a.where
    if a.target:
        out["target"] = list(a.target)
    if a.cell_type is not None:
        out["cell_type"] = a.cell_type
    if a.pattern is not None:
        out["pattern"] = a.pattern
    if not a.gradient_up:
        out["gradient_up"] = False
    if a.mechanisms:
        out["mechanisms"] = [_mechanism_doc(m) for m in a.mechanisms]
    if a.names:
        out["names"] = list(a.names)
    if a.relabel is not None:
        out["relabel"] = a.relabel
    if a.release_internal:
        out["release_internal"] = True
    if a.source is not None:
        out["source"] = a.source
    return out


def _mechanism_doc(m: Mechanism) -> dict:
    out: dict[str, Any] = {"name": m.name}
    if m.conditions:
        out["conditions"] = [_condition_doc(c) for c in m.conditions]
    out["actions"] = [_action_doc(a) for a in m.actions]
    if m.prob != 1.0:
        out["prob"] = m.prob
    if not m.log:
        out["log"] = False
    return out


def scenario_doc(s: Scenario) -> dict:
    """Scenario as a plain JSON-ready tree (canonical field order)."""
    doc: dict[str, Any] = {
        "format_version": s.format_version,
        "name": s.name,
    }
    if s.notes:
        doc["notes"] = dict(s.notes)
    doc["epitope_universe"] = s.epitope_universe
    doc["affinity"] = [
        {"a": a, "b": b, "bind": r.bind, "unbind": r.unbind}
        for a, b, r in s.affinity.pairs()
    ]
    doc["molecules"] = []
    for m in s.molecules.values():
        entry: dict[str, Any] = {"name": m.name}
        if m.epitopes:
            entry["epitopes"] = list(m.epitopes)
        if m.clonal_epitopes:
            entry["clonal_epitopes"] = m.clonal_epitopes
        if m.binding_sites:
            entry["binding_sites"] = [list(b.epitopes) for b in m.binding_sites]
        if not math.isinf(m.mean_lifetime):
            entry["mean_lifetime"] = m.mean_lifetime
        if m.fragments:
            entry["fragments"] = list(m.fragments)
        if m.presentation_slot:
            entry["presentation_slot"] = True
        doc["molecules"].append(entry)
    doc["cells"] = []
    for c in s.cells.values():
        entry = {"name": c.name}
        if not math.isinf(c.mean_lifetime):
            entry["mean_lifetime"] = c.mean_lifetime
        if c.random_epitopes:
            entry["random_epitopes"] = c.random_epitopes
        entry["mechanisms"] = [_mechanism_doc(m) for m in c.mechanisms]
        doc["cells"].append(entry)
    doc["compartments"] = []
    for k in s.compartments:
        entry = {"name": k.name, "dims": list(k.dims)}
        if k.molecular_diffusion:
            entry["molecular_diffusion"] = dict(k.molecular_diffusion)
        if k.cellular_diffusion:
            entry["cellular_diffusion"] = dict(k.cellular_diffusion)
        if k.initial_cells:
            entry["initial_cells"] = dict(k.initial_cells)
        if k.initial_molecules:
            entry["initial_molecules"] = dict(k.initial_molecules)
        doc["compartments"].append(entry)
    if s.transfers:
        doc["transfers"] = [
            {"from": t.source, "to": t.dest, "agent": t.agent, "rate": t.rate}
            for t in s.transfers
        ]
    if s.schedule:
        doc["schedule"] = []
        for inj in s.schedule:
            p = inj.placement
            if p[0] == "uniform":
                placement = {"mode": "uniform"}
            elif p[0] == "wall":
                placement = {"mode": "wall", "axis": p[1], "face": p[2]}
            else:
                placement = {"mode": "point", "point": list(p[1:])}
            doc["schedule"].append({
                "tick": inj.tick, "compartment": inj.compartment,
                "agent": inj.agent, "placement": placement, "count": inj.count,
            })
    run: dict[str, Any] = {"ticks": s.ticks}
    if s.seed is not None:
        run["seed"] = s.seed
    doc["run"] = run
    if s.params:
        doc["params"] = dict(s.params)
    return doc


def serialize_scenario(s: Scenario) -> str:
    return json.dumps(scenario_doc(s), indent=2) + "\n"


def scenario_digest(s: Scenario) -> str:
    import hashlib
    canonical = json.dumps(scenario_doc(s), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# -- validation --------------------------------------------------------------

def _known_labels(s: Scenario) -> set[str]:
    labels = set(s.cells)
    for ct in s.cells.values():
        for mech in ct.mechanisms:
            for action in mech.actions:
                stack = [action]
                while stack:
                    a = stack.pop()
                    if a.relabel:
                        labels.add(a.relabel)
                    for m in a.mechanisms:
                        stack.extend(m.actions)
    return labels


def _producible(s: Scenario) -> set[str]:
    """Molecule types that anything can create."""
    out = set()
    for comp in s.compartments:
        out.update(k for k, v in comp.initial_molecules.items() if v > 0)
    for inj in s.schedule:
        out.add(inj.agent)
    def walk(actions):
        for a in actions:
            if a.kind in ("express", "secrete", "present") and a.molecule:
                out.add(a.molecule)
            for m in a.mechanisms:
                walk(m.actions)
    for ct in s.cells.values():
        for mech in ct.mechanisms:
            walk(mech.actions)
    changed = True
    while changed:
        changed = False
        for name in list(out):
            m = s.molecules.get(name)
            if m:
                for frag in m.fragments:
                    if frag not in out:
                        out.add(frag)
                        changed = True
    return out


def validate_scenario(s: Scenario) -> ValidationReport:
    report = ValidationReport()
    err = report.errors.append
    warn = report.warnings.append

    overlap = set(s.molecules) & set(s.cells)
    if overlap:
        err(f"names used for both cells and molecules: {sorted(overlap)}")

    for m in s.molecules.values():
        for e in m.epitopes:
            if not (0 <= e < s.epitope_universe):
                err(f"molecule {m.name}: epitope {e} outside universe")
        for frag in m.fragments:
            if frag not in s.molecules:
                err(f"molecule {m.name}: unknown fragment type {frag!r}")

    labels = _known_labels(s)
    producible = _producible(s)
    pattern_types: set[str] = set()

    def check_actions(owner: str, actions, seen_internal: set[str]):
        for a in actions:
            if a.kind in ("express", "secrete", "present", "move_gradient"):
                if a.molecule not in s.molecules:
                    err(f"{owner}: action {a.kind} references unknown molecule "
                        f"{a.molecule!r}")
                elif a.kind in ("express", "secrete"):
                    need = s.molecules[a.molecule].clonal_epitopes
                    ct = s.cells.get(owner.split(".")[0])
                    if ct is not None and need > ct.random_epitopes:
                        err(f"{owner}: {a.molecule} needs {need} clonal epitopes; "
                            f"{ct.name} draws only {ct.random_epitopes}")
                if a.kind == "present" and a.molecule in s.molecules \
                        and not s.molecules[a.molecule].presentation_slot:
                    err(f"{owner}: present on {a.molecule!r} which has no "
                        f"presentation slot")
                if a.kind == "present" and a.source is not None \
                        and a.source not in s.molecules:
                    err(f"{owner}: present source {a.source!r} unknown")
            if a.kind == "differentiate":
                target = s.cells.get(a.cell_type)
                if target is None:
                    err(f"{owner}: differentiate into unknown type {a.cell_type!r}")
            if a.kind == "kill_contact":
                for lbl in a.target:
                    if lbl not in labels:
                        err(f"{owner}: kill_contact targets unknown label {lbl!r}")
            if a.kind == "ingest":
                pattern_types.update(a.pattern.split(":"))
            for m in a.mechanisms:
                check_mechanism(owner.split(".")[0], m)

    def check_mechanism(cell_name: str, mech: Mechanism):
        owner = f"{cell_name}.{mech.name}"
        for c in mech.conditions:
            if c.kind == "contact_cell_type":
                for lbl in c.labels:
                    if lbl not in labels:
                        err(f"{owner}: contact condition names unknown label {lbl!r}")
            elif c.kind == "surface_complex":
                parts = c.pattern.split(":")
                for p in parts:
                    if p not in s.molecules:
                        err(f"{owner}: pattern component {p!r} is not a "
                            f"declared molecule")
                    elif p not in producible:
                        warn(f"{owner}: pattern component {p!r} is never "
                             f"produced; condition can never hold")
            else:
                if c.pattern not in s.molecules:
                    err(f"{owner}: condition references unknown molecule "
                        f"{c.pattern!r}")
                elif not c.negated and c.pattern not in producible:
                    warn(f"{owner}: molecule {c.pattern!r} is never produced; "
                         f"condition can never hold")
        check_actions(owner, mech.actions, set())

    for ct in s.cells.values():
        for mech in ct.mechanisms:
            check_mechanism(ct.name, mech)

    for p in sorted(pattern_types):
        if p not in s.molecules:
            err(f"ingest pattern component {p!r} is not a declared molecule")

    names = {c.name for c in s.compartments}
    if len(names) != len(s.compartments):
        err("duplicate compartment names")
    for comp in s.compartments:
        for agent in list(comp.initial_cells) + list(comp.initial_molecules):
            if agent not in s.cells and agent not in s.molecules:
                err(f"compartment {comp.name}: initial concentration for "
                    f"unknown agent {agent!r}")
        for conc in comp.initial_cells.values():
            if not (0.0 <= conc <= 1.0):
                err(f"compartment {comp.name}: cell concentration {conc} "
                    f"outside [0,1]")
        for agent in list(comp.molecular_diffusion) + list(comp.cellular_diffusion):
            if agent not in s.cells and agent not in s.molecules \
                    and agent not in labels:
                err(f"compartment {comp.name}: diffusion rate for unknown "
                    f"agent {agent!r}")
    for t in s.transfers:
        if t.source not in names or t.dest not in names:
            err(f"transfer rule references unknown compartment: "
                f"{t.source!r} -> {t.dest!r}")
        if t.agent not in s.cells and t.agent not in s.molecules:
            err(f"transfer rule references unknown agent {t.agent!r}")
    for inj in s.schedule:
        if inj.compartment not in names:
            err(f"schedule: unknown compartment {inj.compartment!r}")
        if inj.agent not in s.cells and inj.agent not in s.molecules:
            err(f"schedule: unknown agent {inj.agent!r}")
        if not (0 <= inj.tick <= s.ticks):
            err(f"schedule: tick {inj.tick} outside run length {s.ticks}")
        if inj.count < 1:
            err("schedule: count must be >= 1")
        if inj.placement[0] == "point":
            comp = next((c for c in s.compartments
                         if c.name == inj.compartment), None)
            if comp is not None:
                x, y, z = inj.placement[1:]
                nx, ny, nz = comp.dims
                if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
                    err(f"schedule: point {inj.placement[1:]} outside "
                        f"{comp.dims}")
    if s.ticks < 1:
        err("run length must be >= 1")
    return report


# -- builtins ----------------------------------------------------------------

@dataclass(frozen=True)
class KineticsSetup:
    name: str
    params: KineticsParams
    init: KineticsState


_KINETICS = {
    "kinetics_fig1": KineticsSetup(
        "kinetics_fig1",
        KineticsParams(p_infect=0.3, p_kill=0.5, p_resp=0.1, s=0.01,
                       d_I=0.01, d_K=0.01, d_C=0.01),
        KineticsState(0.1, 0.1, 1.0),
    ),
    "kinetics_fig2": KineticsSetup(
        "kinetics_fig2",
        KineticsParams(p_infect=0.3, p_kill=1.0, p_resp=0.8, s=0.01,
                       d_I=0.01, d_K=0.01, d_C=0.01),
        KineticsState(0.1, 0.1, 1.0),
    ),
}


def builtin_scenario(name: str):
    """Load a shipped scenario (or ODE parameter set) by name."""
    if name in _KINETICS:
        return _KINETICS[name]
    if name not in BUILTIN_NAMES:
        raise ScenarioError(
            f"unknown builtin {name!r}; valid names: {', '.join(BUILTIN_NAMES)}"
        )
    text = resources.files("immunegrid").joinpath(
        f"scenarios/{name}.json").read_text()
    return parse_scenario(text)


def load_scenario(ref: str) -> Scenario:
    """Resolve a builtin name or a file path to a validated Scenario."""
    import os
    if ref in BUILTIN_NAMES and not os.path.exists(ref):
        sc = builtin_scenario(ref)
        if isinstance(sc, KineticsSetup):
            raise ScenarioError(f"{ref} is an ODE parameter set, not a lattice scenario")
        return sc
    if not os.path.exists(ref):
        raise ScenarioError(
            f"{ref!r} is neither a builtin ({', '.join(BUILTIN_NAMES)}) "
            f"nor an existing file"
        )
    with open(ref) as fh:
        return parse_scenario(fh.read())
