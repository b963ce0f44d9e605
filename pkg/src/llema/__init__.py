"""Constrained multi-objective evolutionary search for materials discovery."""

from .crystal import Lattice, Site, Structure, cell_volume, density, parse_cif, write_cif
from .evolve import CampaignConfig, CampaignResult, run_campaign
from .oracle import Oracle, PropertyVector, ReferenceDB, SyntheticSurrogate
from .tasks import Constraint, ScoreBreakdown, Task, composite_score, load_task, phi

__version__ = "0.1.0"

__all__ = [
    "CampaignConfig",
    "CampaignResult",
    "Constraint",
    "Lattice",
    "Oracle",
    "PropertyVector",
    "ReferenceDB",
    "ScoreBreakdown",
    "Site",
    "Structure",
    "SyntheticSurrogate",
    "Task",
    "cell_volume",
    "composite_score",
    "density",
    "load_task",
    "parse_cif",
    "phi",
    "run_campaign",
    "write_cif",
    "__version__",
]
