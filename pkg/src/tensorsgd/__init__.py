"""Online SGD for tensor-decomposition ICA: simulator, diffusion limits and phase analysis."""

from tensorsgd.sources import (
    MixingModel,
    SourceSpec,
    make_spec,
    observe,
    random_orthogonal,
    sample_block,
    sample_source,
    source_moments,
)
from tensorsgd.moments import (
    CrossMoments,
    MomentTable,
    cross_moments,
    enumeration_expectation,
    expect_weighted_power,
    fourth_moment_objective,
    printed_formulas,
)

__version__ = "0.1.0"

__all__ = [
    "CrossMoments",
    "MixingModel",
    "MomentTable",
    "SourceSpec",
    "cross_moments",
    "enumeration_expectation",
    "expect_weighted_power",
    "fourth_moment_objective",
    "make_spec",
    "observe",
    "printed_formulas",
    "random_orthogonal",
    "sample_block",
    "sample_source",
    "source_moments",
]
