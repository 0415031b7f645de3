"""Context- and state-dependent imitation learning toolkit.

Learns velocity policies from demonstrated trajectories with a kernelized
movement primitive, splits its predictive covariance into epistemic and
aleatoric parts, and blends the learned field with an uncertainty-descending
stabilizer and a goal attractor as a mixture of experts. Ships a CLI, an
HTTP service with live steerable rollouts, and a browser playground.
"""

from .demonstrations import (
    Demonstration,
    Dims,
    TrainingSample,
    TrainingSet,
    build_training_set,
    compute_velocities,
    generate_context_letter_set,
    load_training_set,
    save_corpus,
    synthetic_handwriting_demos,
)
from .fusion import (
    FusedAction,
    FusionParams,
    Goals,
    MixingCoefficients,
    fused_action,
    goal_velocity,
    mixing_coefficients,
    stabilizing_velocity,
)
from .gmm import (
    GmmModel,
    ReferenceSet,
    build_reference_set,
    em_fit,
    fit_training_gmm,
    gmr_condition,
)
from .kmp import (
    KmpHyperparams,
    KmpModel,
    Prediction,
    epistemic_gradient,
    kmp_fit,
    kmp_predict,
    rbf_kernel,
)
from .pipeline import PolicyBundle, TrainSettings, train_bundle
from .rollout import (
    ContextSchedule,
    EvalReport,
    FieldGrid,
    GridSpec,
    RolloutConfig,
    RolloutResult,
    evaluate,
    random_starts,
    rms_to_demos,
    rollout,
    vector_field_grid,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
