"""immunegrid: rule-driven immune-system simulation on a 3D lattice."""

__version__ = "0.1.0"

from .core import (                              # noqa: F401
    Action, AffinityTable, BindingSite, Cell, CellType, Condition, Mechanism,
    MoleculeInstance, MoleculeType, complex_pattern, sample_random_binding_site,
    site_binds_target,
)
from .engine import Engine                       # noqa: F401
from .lattice import CompartmentSpec, TransferRule, World  # noqa: F401
from .runner import Runner, build_world          # noqa: F401
from .scenario import (                          # noqa: F401
    Scenario, builtin_scenario, load_scenario, parse_scenario,
    serialize_scenario, validate_scenario,
)
