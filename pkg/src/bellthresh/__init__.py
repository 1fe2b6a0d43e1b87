"""Bell inequality violations with threshold photon detectors.

Exact multi-pair detection probabilities, CH and post-selected CHSH
functionals with their local bounds, and derivative-free optimization over
states and measurement settings.
"""

__version__ = "0.1.0"

from .bell import (
    LocalStrategyMixture,
    NoConclusiveEvents,
    SettingsQuad,
    ch_value,
    chsh_value,
    facet_center_distribution,
    local_bound_closed_form,
    local_bound_limit_deficit,
    local_bound_numeric,
    ncopy_postselected_chsh,
    optimal_settings_quad,
    postselected_correlator,
    singlet_chsh_closed_form,
    singlet_chsh_limit_deficit,
    singlet_correlator_closed_form,
    werner_optimal_distribution,
)
from .counting import (
    DetectionProbabilities,
    FixedPairs,
    Poisson,
    detection_probabilities,
    enumerate_oracle,
    enumerate_oracle_table,
    marginal_fire_probability,
    outcome_probability,
    outcome_table,
    poisson_coincidence_probability,
    poisson_marginal_fire_probability,
    poisson_mix,
)
from .detectors import (
    PerfectStep,
    ResponseFunction,
    SCurve,
    SmoothStep,
    evaluate,
    is_perfect_step,
    parse_response,
)
from .optimize import (
    NoViolation,
    Scenario,
    ScenarioResult,
    SweepPoint,
    evaluate_functional,
    maximize_over_theta,
    maximize_settings,
    noise_resistance,
    smooth_threshold_no_violation_check,
    sweep,
    verify_small_phi_family,
)
from .quantum import (
    MINUS,
    PLUS,
    PairProbabilities,
    Setting,
    TwoQubitState,
    add_white_noise,
    bloch_form,
    concurrence,
    joint_probability,
    pair_probabilities,
    projector,
    pure_state,
    singlet,
    werner,
)
