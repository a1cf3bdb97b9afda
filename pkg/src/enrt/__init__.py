"""Design-based effect estimation and contamination sensitivity analysis for
egocentric-network randomized trials."""

__version__ = "0.1.0"

from .analysis import (  # noqa: E402
    PBAConfig,
    Prior,
    SensitivityGrid,
    SensitivityPoint,
    run_gsa,
    run_pba,
    sample_prior,
)
from .estimators import (  # noqa: E402
    DeltaSpec,
    EffectEstimate,
    KappaSpec,
    adjusted_de,
    adjusted_ie,
    adjusted_ie_rr,
    adjusted_ie_three_level,
    naive_de,
    naive_ie,
    theoretical_naive_bias,
    variance_de,
    variance_ie,
    wald_ci,
)
from .outcome import (  # noqa: E402
    CrossFitPlan,
    OutcomeModelSpec,
    augmented_estimates,
    fit_outcome_model,
    make_crossfit_plan,
)
from .sample import (  # noqa: E402
    EgocentricSample,
    Role,
    SampleError,
    Unit,
    load_sample,
    observed_exposures,
    validate_sample,
)
from .sensmodel import (  # noqa: E402
    EdgeProbabilities,
    EdgeProbabilityModel,
    ExposureProfile,
    build_edge_probabilities,
    exposure_prob_alter,
    exposure_prob_ego,
    exposure_probs_three_level,
    exposure_profile,
    pairwise_distances,
    poisson_binomial_tail,
)
from .sim import (  # noqa: E402
    PopulationNetwork,
    PotentialOutcomeTable,
    ReplicationReport,
    ScenarioConfig,
    generate_population,
    generate_potential_outcomes,
    observed_sample,
    run_replications,
    true_effects,
)

__all__ = [
    "__version__",
    "PBAConfig",
    "Prior",
    "SensitivityGrid",
    "SensitivityPoint",
    "run_gsa",
    "run_pba",
    "sample_prior",
    "DeltaSpec",
    "EffectEstimate",
    "KappaSpec",
    "adjusted_de",
    "adjusted_ie",
    "adjusted_ie_rr",
    "adjusted_ie_three_level",
    "naive_de",
    "naive_ie",
    "theoretical_naive_bias",
    "variance_de",
    "variance_ie",
    "wald_ci",
    "CrossFitPlan",
    "OutcomeModelSpec",
    "augmented_estimates",
    "fit_outcome_model",
    "make_crossfit_plan",
    "EgocentricSample",
    "Role",
    "SampleError",
    "Unit",
    "load_sample",
    "observed_exposures",
    "validate_sample",
    "EdgeProbabilities",
    "EdgeProbabilityModel",
    "ExposureProfile",
    "build_edge_probabilities",
    "exposure_prob_alter",
    "exposure_prob_ego",
    "exposure_probs_three_level",
    "exposure_profile",
    "pairwise_distances",
    "poisson_binomial_tail",
    "PopulationNetwork",
    "PotentialOutcomeTable",
    "ReplicationReport",
    "ScenarioConfig",
    "generate_population",
    "generate_potential_outcomes",
    "observed_sample",
    "run_replications",
    "true_effects",
]
