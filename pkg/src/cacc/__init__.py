"""Cost-aware conformal calibration for runtime-assured control."""

from .calibration import (
    CalibrationWindow,
    LossRecord,
    ThresholdParams,
    ThresholdState,
    boosted_loss,
    effective_delta,
    empirical_quantile,
    nonconformity_score,
    update_threshold,
)
from .envs import ENV_NAMES, EnvSpec, EnvState, make_benchmark, sample_beta
from .harness import (
    AuditCheck,
    AuditReport,
    EpisodeConfig,
    EpisodeTrace,
    aggregate_seeds,
    audit_bounds,
    conservation_check,
    full_audit,
    regret_trace,
    run_episode,
    run_many,
)
from .mpc import CemPlanner, ControlDecision, MpcConfig, recovery_action
from .surrogate import FeatureMap, SurrogatePair, fit_offline

__version__ = "0.1.0"
