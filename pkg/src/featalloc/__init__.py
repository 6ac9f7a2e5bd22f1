"""Attraction Indian buffet distribution, IBP and collapsed LGLFM posterior sampling."""

__version__ = "0.1.0"

from .allocation import (
    AllocationKey,
    AllocationStats,
    FeatureAllocation,
    allocation_stats,
    left_ordered_form,
    shared_feature_count,
)
from .errors import FeatallocError, NumericalError, ValidationError
from .lglfm import LglfmData, LikelihoodCache, NoiseScales, log_likelihood, log_likelihood_cached
from .mcmc import (
    ChainSample,
    Fixed,
    Gamma,
    McmcConfig,
    McmcState,
    PriorSpec,
    Sampler,
    Uniform,
    run_chain,
)
from .priors import (
    AibdParams,
    FeatureCountLaw,
    IbpParams,
    aibd_logpmf,
    ddibp_feature_count_pmf,
    enumerate_allocations,
    feature_count_pmf,
    harmonic,
    ibp_logpmf,
    sample_aibd,
    sample_ibp,
)
from .similarity import (
    DecayFunction,
    DistanceMatrix,
    SimilarityMatrix,
    evaluate,
    similarity_matrix,
    validate_axioms,
)
