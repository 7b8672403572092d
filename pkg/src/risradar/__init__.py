"""RIS-assisted high-resolution radar sensing toolkit."""

from .geometry import (
    ChannelParams,
    PathGains,
    Scenario,
    TargetSet,
    channel_params,
    euler_to_rotation,
    invert_nonris,
    jacobian_position,
    load_config,
    path_gains,
    spaced_targets,
    table_default_scenario,
)
from .signal import (
    ResolutionRegion,
    RisSchedule,
    SignalBlock,
    atom_nonris,
    atom_ris,
    build_precoder,
    build_resolution_region,
    build_schedule,
    region_from_intervals,
    ris_response_vector,
    steering_ris,
    steering_ue,
    synthesize,
)
from .detection import (
    coherence,
    conditional_auc,
    conditional_pd,
    expected_auc,
    expected_pd,
    generalized_coherence,
    joint_pd,
    marcum_q1,
)
from .fisher import (
    FisherReport,
    atom_derivatives_nonris,
    atom_derivatives_ris,
    bounds,
    equivalent_fim_case_study,
    fim_nonris,
    fim_ris,
)
from .estimation import Dictionary, associate, estimate_positions, omp
from .metrics import empirical_auc, empirical_rates, gospa
from .harness import ExperimentConfig, run

__version__ = "0.1.0"
