"""Dyadic tents, kubes and weighted composition operators on the unit disc and ball."""

from .config import ExperimentConfig, SymbolConfig
from .domain import DomainModel, model_from_name, mobius
from .errors import (
    CalibrationError,
    ConfigError,
    GenerationRangeError,
    InputError,
    IntegrationError,
    LabError,
    ProjectionError,
    ResolutionError,
    SelfMapError,
)
from .grid import (
    BoundaryMesh,
    DyadicGrid,
    DyadicGridFamily,
    build_adjacent_family,
    build_grid,
    build_mesh,
    cover_certificate,
    dumps_family,
    loads_family,
    verify_grid,
)
from .measures import (
    Estimate,
    Proposal,
    SampledMeasure,
    lebesgue_integral,
    measure_integral,
    pullback_measure,
    sample_lebesgue,
)
from .operators import (
    MaximalOperator,
    TentTable,
    berezin_transform,
    boundedness_equivalence_suite,
    carleson_report,
    compactness_diagnostic,
    muckenhoupt_constant,
    pointwise_bound_check,
    sparse_sum,
    testing_sweep,
    weighted_estimate_check,
)
from .suites import ExperimentContext, list_suites, run_suite, suite_names
from .symbols import SymbolPair, TestFunction, Weight, default_test_family
from .tents import TentTree, audit_sandwich, calibrate_kube_params, kube_partition_check, submean_check

__version__ = "0.1.0"
