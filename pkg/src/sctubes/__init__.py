"""Simultaneous confidence tubes for comparing regression models.

Fit one multivariate linear regression per group, then compare the
groups' coefficient matrices jointly over a covariate region: simulate
the pivotal sup statistic, take its upper quantile as the critical
constant, and read off per-pair statistics, adjusted p-values, and the
band geometry itself. Largest-root tests and the pointwise F constant
are included for reference.
"""

from .classical_tests import (
    RoyResult,
    f_quantile,
    pointwise_constant,
    roy_k_sample,
    roy_two_sample,
)
from .cli_io import RunConfig, export_tube, ingest_csv, run_compare, write_csv
from .errors import (
    ConfigError,
    DegeneracyError,
    DegenerateScatter,
    DegreesOfFreedomTooSmall,
    EmptyFamily,
    EmptyGroup,
    InputDataError,
    InsufficientObservations,
    MalformedHeader,
    MetaMismatch,
    NonNumericCell,
    NotTwoGroups,
    NotUnivariate,
    RankDeficientDesign,
    ShapeMismatch,
    SingularGram,
    TooFewReplicates,
    TubeError,
    UnboundedBox,
    UsageError,
)
from .model_core import (
    FittedModels,
    GroupData,
    GroupedDataset,
    fit_models,
    validate_dataset,
)
from .rand_engine import (
    StreamKey,
    chi_square,
    normal_matrix,
    wishart_identity,
)
from .sct_engine import (
    ComparisonFamily,
    ComparisonReport,
    CriticalConstantResult,
    SimulatedSample,
    adjusted_p_values,
    compare,
    critical_constant,
    observed_statistic,
    simulate_pivot,
)
from .sup_solver import (
    CovariateBox,
    QuadraticRatio,
    sup_box,
    sup_interval,
    sup_unbounded,
)
from .tube_geometry import (
    SignificanceRegion,
    TubeCrossSection,
    contains_zero_line,
    cross_section,
    projected_band,
    significance_region,
)

__version__ = "0.1.0"

__all__ = [
    "ComparisonFamily",
    "ComparisonReport",
    "ConfigError",
    "CovariateBox",
    "CriticalConstantResult",
    "DegeneracyError",
    "DegenerateScatter",
    "DegreesOfFreedomTooSmall",
    "EmptyFamily",
    "EmptyGroup",
    "FittedModels",
    "GroupData",
    "GroupedDataset",
    "InputDataError",
    "InsufficientObservations",
    "MalformedHeader",
    "MetaMismatch",
    "NonNumericCell",
    "NotTwoGroups",
    "NotUnivariate",
    "QuadraticRatio",
    "RankDeficientDesign",
    "RoyResult",
    "RunConfig",
    "ShapeMismatch",
    "SignificanceRegion",
    "SimulatedSample",
    "SingularGram",
    "StreamKey",
    "TooFewReplicates",
    "TubeCrossSection",
    "TubeError",
    "UnboundedBox",
    "UsageError",
    "adjusted_p_values",
    "chi_square",
    "compare",
    "contains_zero_line",
    "critical_constant",
    "cross_section",
    "export_tube",
    "f_quantile",
    "fit_models",
    "ingest_csv",
    "normal_matrix",
    "observed_statistic",
    "pointwise_constant",
    "projected_band",
    "roy_k_sample",
    "roy_two_sample",
    "run_compare",
    "significance_region",
    "simulate_pivot",
    "sup_box",
    "sup_interval",
    "sup_unbounded",
    "validate_dataset",
    "write_csv",
]
