"""Builders for the shipped scenario files.

The JSON files under ``scenarios/`` are the public artifacts; these
builders are their source and ``scripts/regen_scenarios.py`` rewrites the
files.  A test pins file == builder so they cannot drift.

Published values (dimensions, initial concentrations, lifespans, diffusion
rates for the feedback scenario; the ODE parameter rows) are tagged in the
scenario ``notes``; every other number is an assumption of this
implementation and tagged ``assumed``.
"""
from __future__ import annotations

from .core import (
    Action, AffinityTable, BindingSite, CellType, Condition, Mechanism,
    MoleculeType,
)
from .lattice import CompartmentSpec
from .scenario import Injection, Scenario


def _lacking(type_name: str, cap: int = 1) -> Condition:
    """Side-scoped 'fewer than cap instances of the type on the side'."""
    return Condition("surface_count_at_least", pattern=type_name,
                     threshold=cap, side_scoped=True, negated=True)


def _homeostasis(name: str, type_name: str, cap: int = 1) -> Mechanism:
    return Mechanism(
        name, conditions=(_lacking(type_name, cap),),
        actions=(Action("express", molecule=type_name, side="matched"),),
        log=False,
    )


def feedback_local() -> Scenario:
    """Local-interaction feedback loop: two competing differentiation fates.

    ID0 proliferates on OC contact; C1/C2 from ID1/ID2 convert nearby ID0
    into the matching type (registration needs 2 molecules at the site);
    AID kills any ID cell it touches.
    """
    prolif = 0.06
    differentiate = 0.7
    kill = 0.25
    secrete_count = 2
    registration = 2

    molecules = {
        "C1": MoleculeType("C1", mean_lifetime=100),
        "C2": MoleculeType("C2", mean_lifetime=100),
    }
    cells = {
        "OC": CellType("OC"),
        "ID0": CellType("ID0", mechanisms=(
            Mechanism("proliferate",
                      conditions=(Condition("contact_cell_type", labels=("OC",)),),
                      actions=(Action("divide"),), prob=prolif),
            Mechanism("become_id1",
                      conditions=(Condition("site_molecule_at_least", pattern="C1",
                                            threshold=registration),),
                      actions=(Action("differentiate", cell_type="ID1"),),
                      prob=differentiate),
            Mechanism("become_id2",
                      conditions=(Condition("site_molecule_at_least", pattern="C2",
                                            threshold=registration),),
                      actions=(Action("differentiate", cell_type="ID2"),),
                      prob=differentiate),
        )),
        "ID1": CellType("ID1", mechanisms=(
            Mechanism("signal", actions=(
                Action("secrete", molecule="C1", count=secrete_count),), log=False),
        )),
        "ID2": CellType("ID2", mechanisms=(
            Mechanism("signal", actions=(
                Action("secrete", molecule="C2", count=secrete_count),), log=False),
        )),
        "AID": CellType("AID", mechanisms=(
            Mechanism("kill_id",
                      conditions=(Condition("contact_cell_type",
                                            labels=("ID0", "ID1", "ID2")),),
                      actions=(Action("kill_contact",
                                      target=("ID0", "ID1", "ID2")),),
                      prob=kill),
        )),
    }
    diffusion = {"C1": 0.0001, "C2": 0.0001}
    cell_diffusion = {name: 0.01 for name in cells}
    comp = CompartmentSpec(
        "tissue", (80, 80, 10),
        molecular_diffusion=diffusion,
        cellular_diffusion=cell_diffusion,
        initial_cells={"OC": 0.05, "ID0": 0.01, "ID1": 0.005,
                       "ID2": 0.005, "AID": 0.01},
        initial_molecules={"C1": 0.0, "C2": 0.0},
    )
    return Scenario(
        name="feedback_local",
        epitope_universe=0,
        affinity=AffinityTable(0),
        molecules=molecules,
        cells=cells,
        compartments=[comp],
        ticks=10000,
        params={"registration_threshold": registration,
                "proliferation_prob": prolif,
                "differentiation_prob": differentiate,
                "kill_prob": kill,
                "secrete_count": secrete_count},
        notes={
            "dims": "published: 80 x 80 x 10",
            "initial_cells": "published: OC 0.05, ID0 0.01, ID1 0.005, ID2 0.005, AID 0.01",
            "cytokine_lifespan": "published: 100 timesteps",
            "molecular_diffusion": "published: 0.0001",
            "cellular_diffusion": "published: 0.01 (replaces active movement)",
            "cell_lifespans": "published: unbounded; AID contact is the only ID death channel",
            "proliferation_prob": "assumed; no reference value",
            "differentiation_prob": "assumed; no reference value",
            "kill_prob": "assumed; no reference value",
            "registration_threshold": "assumed: a signal needs 2 molecules at the site",
            "secrete_count": "assumed; no reference value",
        },
    )


def simple_is() -> Scenario:
    """Five IS cell types plus a virus: infection, T response, antibodies.

    Epitope ids: 0 MHC1-own, 1 MHC2-own, 2 virus, 3 antibody constant,
    4 virus receptor, 5 contact-inhibition receptor (self-binding), 6 FAS,
    7 FAS-ligand, 8 macrophage receptor; 9..15 are the clone-draw range for
    TCR/BCR idiotypes (draws cover the whole universe).
    """
    universe = 16
    infection_prob = 0.005
    inhibition_threshold = 2
    fas_threshold = 1
    virus_per_burst = 8
    replication_prob = 0.4

    table = AffinityTable(universe)
    table.add_pair(2, 4, infection_prob, 0.0)       # virus -> receptor: infection
    table.add_pair(5, 5, 0.25, 0.01)                # homotypic contact inhibition
    table.add_pair(6, 7, 0.06, 0.25)                # FAS : FAS-ligand, transient
    table.add_pair(3, 8, 0.4, 0.02)                 # antibody constant -> MR
    for j in (9, 10, 11):                           # TCR arm 0 vs MHC1-own
        table.add_pair(0, j, 0.8, 0.05)
    for j in (12, 13, 14):                          # TCR arm 0 vs MHC2-own
        table.add_pair(1, j, 0.8, 0.05)
    for j in range(9, 16):                          # idiotypes vs virus epitope
        table.add_pair(2, j, 0.5, 0.02)

    molecules = {
        "V": MoleculeType("V", epitopes=(2,), mean_lifetime=250),
        "VR": MoleculeType("VR", epitopes=(4,)),
        "OCI": MoleculeType("OCI", epitopes=(5,)),
        "TCR": MoleculeType("TCR", clonal_epitopes=2,
                            binding_sites=(BindingSite((0, 1)),)),
        "FAS": MoleculeType("FAS", epitopes=(6,)),
        "FASL": MoleculeType("FASL", epitopes=(7,)),
        "MHC1": MoleculeType("MHC1", epitopes=(0,), presentation_slot=True),
        "MHC2": MoleculeType("MHC2", epitopes=(1,), presentation_slot=True),
        "BCR": MoleculeType("BCR", clonal_epitopes=1,
                            binding_sites=(BindingSite((0,)),)),
        "AB": MoleculeType("AB", epitopes=(3,), clonal_epitopes=1,
                           mean_lifetime=400),
        "MR": MoleculeType("MR", epitopes=(8,)),
    }

    virus_program = (
        Mechanism("replicate",
                  actions=(Action("secrete", molecule="V", where="internal"),),
                  prob=replication_prob, log=False),
        Mechanism("present_virus",
                  conditions=(Condition("internal_molecule_at_least", pattern="V"),
                              _lacking("MHC1")),
                  actions=(Action("present", molecule="MHC1", source="V",
                                  side="matched"),),
                  log=False),
        Mechanism("keep_ingesting",
                  conditions=(Condition("surface_complex", pattern="V:VR"),),
                  actions=(Action("ingest", pattern="V:VR"),), log=False),
        Mechanism("burst",
                  conditions=(Condition("internal_molecule_at_least", pattern="V",
                                        threshold=virus_per_burst),),
                  actions=(Action("die", release_internal=True),)),
    )

    cells = {
        "OC": CellType("OC", mean_lifetime=4000, mechanisms=(
            _homeostasis("oci_homeostasis", "OCI"),
            _homeostasis("vr_homeostasis", "VR"),
            Mechanism("divide_unless_crowded",
                      conditions=(Condition("surface_complex", pattern="OCI:OCI",
                                            threshold=inhibition_threshold,
                                            negated=True),),
                      actions=(Action("divide"),), prob=0.06),
            Mechanism("infection",
                      conditions=(Condition("surface_complex", pattern="V:VR"),),
                      actions=(Action("ingest", pattern="V:VR"),
                               Action("add_mechanism", mechanisms=virus_program,
                                      relabel="IC",
                                      names=("divide_unless_crowded",
                                             "infection")))),
        )),
        "NT": CellType("NT", random_epitopes=2, mechanisms=(
            _homeostasis("tcr_homeostasis", "TCR"),
            Mechanism("activate_killer",
                      conditions=(Condition("surface_complex", pattern="MHC1:TCR"),),
                      actions=(Action("differentiate", cell_type="TK"),)),
            Mechanism("activate_helper",
                      conditions=(Condition("surface_complex", pattern="MHC2:TCR"),),
                      actions=(Action("differentiate", cell_type="TH"),)),
        )),
        "TK": CellType("TK", mean_lifetime=2000, random_epitopes=2, mechanisms=(
            _homeostasis("tcr_homeostasis", "TCR"),
            _homeostasis("fas_homeostasis", "FAS"),
            _homeostasis("fasl_homeostasis", "FASL"),
            Mechanism("kill_presenting",
                      conditions=(Condition("surface_complex", pattern="MHC1:TCR",
                                            side_scoped=True),),
                      actions=(Action("kill_contact"),)),
            Mechanism("expand",
                      conditions=(Condition("surface_complex", pattern="MHC1:TCR"),),
                      actions=(Action("divide"),), prob=0.7),
            Mechanism("fas_suicide",
                      conditions=(Condition("surface_complex", pattern="FAS:FASL",
                                            threshold=fas_threshold),),
                      actions=(Action("die"),), prob=0.4),
        )),
        "TH": CellType("TH", mean_lifetime=2000, random_epitopes=2, mechanisms=(
            _homeostasis("tcr_homeostasis", "TCR"),
            _homeostasis("fas_homeostasis", "FAS"),
            _homeostasis("fasl_homeostasis", "FASL"),
            Mechanism("expand",
                      conditions=(Condition("surface_complex", pattern="MHC2:TCR"),),
                      actions=(Action("divide"),), prob=0.7),
            Mechanism("fas_suicide",
                      conditions=(Condition("surface_complex", pattern="FAS:FASL",
                                            threshold=fas_threshold),),
                      actions=(Action("die"),), prob=0.4),
        )),
        "NB": CellType("NB", random_epitopes=1, mechanisms=(
            _homeostasis("bcr_homeostasis", "BCR"),
            Mechanism("capture_antigen",
                      conditions=(Condition("surface_complex", pattern="BCR:V"),),
                      actions=(Action("ingest", pattern="BCR:V"),)),
            Mechanism("present_antigen",
                      conditions=(Condition("internal_molecule_at_least", pattern="V"),
                                  _lacking("MHC2")),
                      actions=(Action("present", molecule="MHC2", source="V",
                                      side="matched"),),
                      log=False),
            Mechanism("activate",
                      conditions=(Condition("surface_complex", pattern="MHC2:TCR"),
                                  Condition("contact_cell_type", labels=("TH",))),
                      actions=(Action("differentiate", cell_type="B"),)),
        )),
        "B": CellType("B", mean_lifetime=1500, random_epitopes=1, mechanisms=(
            _homeostasis("bcr_homeostasis", "BCR"),
            Mechanism("capture_antigen",
                      conditions=(Condition("surface_complex", pattern="BCR:V"),),
                      actions=(Action("ingest", pattern="BCR:V"),), log=False),
            Mechanism("expand",
                      conditions=(Condition("surface_complex", pattern="BCR:V"),),
                      actions=(Action("divide"),), prob=0.05),
            Mechanism("secrete_antibody",
                      actions=(Action("secrete", molecule="AB", count=2),),
                      prob=0.2),
        )),
        "MP": CellType("MP", mechanisms=(
            _homeostasis("mr_homeostasis", "MR"),
            Mechanism("clear_marked_virus",
                      conditions=(Condition("surface_complex", pattern="AB:MR:V",
                                            side_scoped=True),),
                      actions=(Action("ingest", pattern="AB:MR:V"),)),
        )),
    }

    comp = CompartmentSpec(
        "tissue", (26, 26, 6),
        molecular_diffusion={"V": 0.15, "AB": 0.15},
        cellular_diffusion={"NT": 0.25, "TK": 0.3, "TH": 0.3,
                            "NB": 0.12, "B": 0.12, "MP": 0.3},
        initial_cells={"OC": 0.16, "NT": 0.04, "NB": 0.018, "MP": 0.02},
    )
    return Scenario(
        name="simple_is",
        epitope_universe=universe,
        affinity=table,
        molecules=molecules,
        cells=cells,
        compartments=[comp],
        schedule=[Injection(tick=250, compartment="tissue", agent="V",
                            placement=("wall", 0, 0), count=1000)],
        ticks=2800,
        params={"infection_probability": infection_prob,
                "inhibition_threshold": inhibition_threshold,
                "fas_threshold": fas_threshold,
                "virus_per_burst": virus_per_burst,
                "replication_prob": replication_prob},
        notes={
            "all_numbers": "assumed; the mechanism structure is the given part, "
                           "no parameter table exists for this scenario",
            "dims": "assumed; sized for desk-scale runs",
            "virus_per_burst": "assumed: an infected cell bursts once its "
                               "internal stock reaches this count "
                               "(expected delay = count/replication_prob)",
            "infection_probability": "assumed: bind probability of the "
                                     "virus epitope to the target-cell receptor",
        },
    )


def bcell_crosslink() -> Scenario:
    """Receptor cross-linking dose response via a wall-injected antigen.

    The antigen carries two identical epitopes; a B cell side holds two
    receptors.  The activation condition is one antigen bridging two
    receptors (complex AG:BCR:BCR), reported through secretion of A.
    """
    bind = 0.1
    receptors_per_side = 2
    dims = (36, 10, 10)
    dose = 20000

    table = AffinityTable(2)
    table.add_pair(0, 1, bind, bind)   # equal constants for binding and release

    molecules = {
        "AG": MoleculeType("AG", epitopes=(0, 0)),
        "BCR": MoleculeType("BCR", epitopes=(1,)),
        "A": MoleculeType("A", mean_lifetime=50),
    }
    cells = {
        "SB": CellType("SB", mechanisms=(
            _homeostasis("bcr_homeostasis", "BCR", cap=receptors_per_side),
            Mechanism("crosslink_secrete",
                      conditions=(Condition("surface_complex",
                                            pattern="AG:BCR:BCR"),),
                      actions=(Action("secrete", molecule="A"),), log=False),
        )),
    }
    comp = CompartmentSpec(
        "chamber", dims,
        molecular_diffusion={"AG": 0.08, "A": 0.0},
        initial_cells={"SB": 0.6},
    )
    return Scenario(
        name="bcell_crosslink",
        epitope_universe=2,
        affinity=table,
        molecules=molecules,
        cells=cells,
        compartments=[comp],
        schedule=[Injection(tick=0, compartment="chamber", agent="AG",
                            placement=("wall", 0, 0), count=dose)],
        ticks=1000,
        params={"bind_prob": bind, "receptors_per_side": receptors_per_side,
                "dose": dose},
        notes={
            "bind_prob": "published semantics: equal reaction constants for "
                         "binding and release; the value is assumed",
            "antigen": "published semantics: stable (no decay), "
                       "multiple identical epitopes",
            "six_sides": "published semantics: the cell distinguishes "
                         "signals from six sides",
            "dims_dose": "assumed; sized for desk-scale runs",
        },
    )


BUILDERS = {
    "feedback_local": feedback_local,
    "simple_is": simple_is,
    "bcell_crosslink": bcell_crosslink,
}
