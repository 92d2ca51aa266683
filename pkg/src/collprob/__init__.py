"""Collision probability between uncertain ego and obstacle trajectories."""
from .boundary import CrossingConfig, boundary_series, crossing_probability
from .errors import (
    CollprobError,
    DegenerateCovarianceError,
    GridMismatchError,
    InvalidArgumentError,
    NumericDomainError,
    SchemaError,
)
from .montecarlo import McConfig, mc_state_sampling, mc_trajectory_sampling
from .overlap import OverlapConfig, independent_product_series, overlap_series
from .prediction import ScenarioSpec, build_scenario
from .riskeval import CandidateBatch, RiskConfig, cut_in_fixture, evaluate_batch, rank_candidates
from .series import ProbabilityTimeSeries

__version__ = "0.1.0"
