"""Preset experiment configurations.

``dynamics_preset`` is the reference setup for reproducing the
characteristic training dynamics of positive-only vs negative-only
reinforcement at desk scale: a residue-sum task with a 1/5-dense answer
set, 16 prompts with 8 rollouts each, a biased Gaussian prior, and plain
SGD. The learning rate is large compared to neural-net practice because
the likelihood-form gradients are bounded by pi(1-pi)/(N*T) and tabular
logits tolerate big steps.

``DYNAMICS_SEEDS`` is the fixed seed triplet used by the acceptance suite;
directional claims are required to hold on at least two of the three.
"""

from __future__ import annotations

from .objectives import Algorithm, ObjectiveConfig
from .policy import InitScheme
from .tasks import TaskKind, TaskSpec
from .trainer import OptimizerKind, TrainConfig

DYNAMICS_SEEDS = (101, 202, 404)

DYNAMICS_LEARNING_RATE = 4.0
DYNAMICS_BIAS_STRENGTH = 1.5


def dynamics_preset(
    algorithm: Algorithm, seed: int, steps: int = 200
) -> TrainConfig:
    """Reference config for the PSR/NSR/W-REINFORCE dynamics comparison."""
    return TrainConfig(
        task=TaskSpec(TaskKind.MULTI_SUM, vocab_size=5, seq_len=3, modulus=5),
        objective=ObjectiveConfig.default_for(algorithm),
        prompt_count=16,
        prompts_per_step=16,
        group_size=8,
        mini_batch_size=32,
        steps=steps,
        learning_rate=DYNAMICS_LEARNING_RATE,
        optimizer=OptimizerKind.SGD,
        seed=seed,
        init_scheme=InitScheme.BIASED,
        bias_strength=DYNAMICS_BIAS_STRENGTH,
        train_temperature=1.0,
        eval_temperature=0.6,
        eval_samples=16,
        k_list=(1, 2, 4, 8, 16),
        eval_cadence=steps or 1,
        checkpoint_cadence=steps or 1,
    )
