"""First-passage percolation on Z^d: weight laws, passage times and upper-tail estimators."""
from .distributions import (AnomalousModel, DegenerateModel, LogPerturbedModel, ModelError, TowerSequence,
                            WeibullModel, model_from_spec, model_to_spec)
from .lattice import EdgeId, Environment, LatticeError, LatticeRangeError, Region
from .passage import PassageQuery, PassageResult, brute_force_oracle, passage_time

__version__ = "0.1.0"
