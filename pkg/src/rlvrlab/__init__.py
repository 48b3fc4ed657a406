"""rlvrlab: a desk-scale laboratory for verifiable-reward policy gradients.

Trains exactly enumerable autoregressive softmax policies on synthetic
verifiable tasks under positive-only, negative-only, and combined
reinforcement objectives (plus clipped/KL-regularized variants), with every
analytic gradient checked against finite differences and all headline
metrics (Pass@k, entropy, correct mass) computed exactly by enumeration.
"""

from .evaluation import (
    BatchStats,
    EvalReport,
    PassAtKQuery,
    batch_stats,
    estimate_pass_curve,
    evaluate_policy,
    pass_at_k_exact,
    pass_at_k_unbiased,
)
from .gradcheck import (
    analytic_entropy_grad,
    analytic_nsr_grad,
    analytic_psr_grad,
    finite_difference_grad,
    run_gradcheck_suite,
)
from .objectives import (
    Algorithm,
    AdvantageSet,
    ObjectiveConfig,
    ReferencePolicies,
    RolloutGroup,
    compute_advantages,
    kl_exact,
    loss_gradient,
    normalize_batch_rewards,
    split_by_reward,
    surrogate_loss,
    update_baseline,
)
from .policy import (
    InitScheme,
    LogitTable,
    TokenDistribution,
    Trajectory,
    enumerate_distribution,
    init_params,
    load_checkpoint,
    policy_entropy,
    sample_trajectory,
    save_checkpoint,
    sequence_entropy,
    sequence_probability,
    token_distribution,
)
from .tasks import (
    PromptInstance,
    TaskKind,
    TaskSpec,
    enumerate_correct,
    generate_prompts,
    verify,
)
from .trainer import (
    OptimizerKind,
    TrainConfig,
    TrainResult,
    apply_update,
    run_experiment_suite,
    train,
)

__version__ = "0.1.0"
