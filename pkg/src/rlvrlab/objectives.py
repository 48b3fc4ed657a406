"""Training objectives with exact analytic parameter gradients.

Six algorithms over groups of verified rollouts:

- ``PSR``   trains on correct trajectories only (advantage +1),
- ``NSR``   trains on incorrect trajectories only (advantage -1),
- ``REINFORCE`` trains on all trajectories with the raw +/-1 reward,
- ``W_REINFORCE`` scales the positive-trajectory weight down to ``lam``,
- ``GRPO``  whitens rewards within each rollout group and adds a KL term,
- ``PPO_LITE`` subtracts a per-prompt baseline and folds the KL penalty
  into the advantage.

Per token the surrogate is the pessimistic clipped form
``min(rho*A, clip(rho, 1-eps, 1+eps)*A) * pi_old(y_t)`` with
``rho = pi(y_t)/pi_old(y_t)``, i.e. an importance-weighted *likelihood*
(not log-likelihood) objective: at ``theta = theta_old`` the loss on one
trajectory is ``-A * mean_t pi(y_t)`` and the descent direction for the
sampled token is ``A * pi(y_t) * (1 - pi(y_t))``, for unsampled tokens
``-A * pi_v * pi(y_t)``. When clipping saturates, the per-token gradient is
exactly zero, never reversed.

Every batch loss is the arithmetic mean over *all* trajectories of the
batch; trajectories an algorithm does not train on contribute exactly zero
(including their entropy-bonus term), which makes the decomposition
``REINFORCE = PSR + NSR`` hold elementwise and makes an all-correct NSR
batch a strict no-op.

Losses and gradients are always computed at training temperature 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .policy import LogitTable, Trajectory, softmax, _plogp

BASELINE_DECAY = 0.9


class Algorithm(str, Enum):
    PSR = "psr"
    NSR = "nsr"
    REINFORCE = "reinforce"
    W_REINFORCE = "w_reinforce"
    GRPO = "grpo"
    PPO_LITE = "ppo_lite"


_KL_ALGORITHMS = {Algorithm.GRPO, Algorithm.PPO_LITE}


@dataclass(frozen=True)
class ObjectiveConfig:
    """Everything that parameterizes a loss.

    ``lam`` is the positive-sample weight of W_REINFORCE; ``kl_beta`` is
    read only by GRPO (loss term) and PPO_LITE (advantage penalty);
    ``advantage_normalization`` whitens advantages within each rollout
    group ((A - mean)/std, all-equal groups -> 0) and is the definition of
    GRPO's advantage, hence forced on there and forbidden for PSR/NSR.
    """

    algorithm: Algorithm
    lam: float = 0.1
    clip_epsilon: float = 0.2
    kl_beta: float = 1e-3
    entropy_coef: float = 1e-4
    advantage_normalization: bool | None = None

    def __post_init__(self):
        algorithm = Algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", algorithm)
        if self.advantage_normalization is None:
            object.__setattr__(
                self, "advantage_normalization", algorithm is Algorithm.GRPO
            )
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if self.kl_beta < 0 or self.entropy_coef < 0:
            raise ValueError("kl_beta and entropy_coef must be >= 0")
        if algorithm in (Algorithm.PSR, Algorithm.NSR) and self.advantage_normalization:
            raise ValueError(
                f"advantage_normalization must stay off for {algorithm.value}: "
                "it would zero out the constant-sign learning signal"
            )

    @classmethod
    def default_for(cls, algorithm: Algorithm, **overrides) -> "ObjectiveConfig":
        """Per-algorithm defaults: KL only for GRPO/PPO_LITE, group
        whitening only for GRPO."""
        algorithm = Algorithm(algorithm)
        kwargs = dict(algorithm=algorithm)
        if algorithm not in _KL_ALGORITHMS:
            kwargs["kl_beta"] = 0.0
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class RolloutGroup:
    """The G trajectories sampled for one prompt in one step."""

    prompt_id: int
    trajectories: list[Trajectory]

    @property
    def group_size(self) -> int:
        return len(self.trajectories)

    def rewards(self) -> np.ndarray:
        vals = []
        for traj in self.trajectories:
            if traj.reward not in (-1, 1):
                raise ValueError(
                    f"trajectory (prompt {traj.prompt_id}, rollout "
                    f"{traj.rollout_index}) has no +/-1 reward"
                )
            vals.append(traj.reward)
        return np.asarray(vals, dtype=np.float64)


@dataclass
class AdvantageSet:
    """Per-trajectory scalar advantages, aligned with a group's trajectories."""

    values: np.ndarray


@dataclass
class ReferencePolicies:
    """Read-only snapshots: ``old_params`` for importance ratios (taken at
    rollout time each step), ``ref_params`` for KL regularization."""

    old_params: LogitTable
    ref_params: LogitTable | None = None


def split_by_reward(group: RolloutGroup) -> tuple[list[Trajectory], list[Trajectory]]:
    """Order-preserving partition into (positives, negatives)."""
    rewards = group.rewards()
    positives = [t for t, r in zip(group.trajectories, rewards) if r > 0]
    negatives = [t for t, r in zip(group.trajectories, rewards) if r < 0]
    return positives, negatives


def normalize_batch_rewards(rewards: Sequence[int]) -> np.ndarray:
    """Zero-mean shift of a +/-1 reward batch.

    Because the rewards are binary, subtracting the batch mean never flips a
    sign; all-equal batches map to exact zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise ValueError("rewards must be nonempty")
    if not np.all(np.isin(r, (-1.0, 1.0))):
        raise ValueError("rewards must all be +1 or -1")
    return r - r.mean()


def compute_advantages(
    config: ObjectiveConfig, group: RolloutGroup, baseline: float = 0.0
) -> AdvantageSet:
    """Per-trajectory advantages for one rollout group.

    PSR/NSR/REINFORCE use the raw reward (the PSR/NSR sample selection
    happens inside the loss); W_REINFORCE maps +1 -> lam; PPO_LITE subtracts
    the prompt's ``baseline``. With ``advantage_normalization`` the result is
    whitened within the group, which for GRPO *is* the advantage definition;
    all-equal groups get advantage 0.
    """
    if group.group_size == 0:
        raise ValueError("group must be nonempty")
    r = group.rewards()
    if config.algorithm is Algorithm.W_REINFORCE:
        adv = np.where(r > 0, config.lam, -1.0)
    elif config.algorithm is Algorithm.PPO_LITE:
        adv = r - baseline
    else:
        adv = r.copy()
    if config.advantage_normalization:
        std = adv.std()
        if std == 0:
            adv = np.zeros_like(adv)
        else:
            adv = (adv - adv.mean()) / std
    return AdvantageSet(values=adv)


def update_baseline(
    baselines: Mapping[int, float], group: RolloutGroup
) -> dict[int, float]:
    """EMA of the group mean reward per prompt (decay 0.9, init 0)."""
    new = dict(baselines)
    current = new.get(group.prompt_id, 0.0)
    mean_reward = float(group.rewards().mean())
    new[group.prompt_id] = BASELINE_DECAY * current + (1.0 - BASELINE_DECAY) * mean_reward
    return new


def kl_exact(
    params: LogitTable,
    ref_params: LogitTable,
    visited_prefixes: Iterable[tuple[int, tuple[int, ...]]],
) -> float:
    """Sum of KL(pi_theta || pi_ref) over the distinct visited prefixes."""
    total = 0.0
    for prompt_id, prefix in set(visited_prefixes):
        p = softmax(params.row(prompt_id, prefix))
        q = softmax(ref_params.row(prompt_id, prefix))
        nz = p > 0
        total += float((p[nz] * (np.log(p[nz]) - np.log(q[nz]))).sum())
    return total


def visited_prefixes(groups: Iterable[RolloutGroup]) -> set[tuple[int, tuple[int, ...]]]:
    """Distinct (prompt_id, prefix) keys touched by a batch."""
    seen = set()
    for group in groups:
        for traj in group.trajectories:
            for t in range(len(traj.tokens)):
                seen.add((group.prompt_id, traj.tokens[:t]))
    return seen


def _trains_on(config: ObjectiveConfig, reward: float) -> bool:
    if config.algorithm is Algorithm.PSR:
        return reward > 0
    if config.algorithm is Algorithm.NSR:
        return reward < 0
    return True


def _resolve_advantages(config, groups, advantages, baselines):
    if advantages is not None:
        resolved = [np.asarray(a, dtype=np.float64) for a in advantages]
        for group, adv in zip(groups, resolved):
            if len(adv) != group.group_size:
                raise ValueError("advantages misaligned with group trajectories")
        return resolved
    baselines = baselines or {}
    return [
        compute_advantages(config, g, baseline=baselines.get(g.prompt_id, 0.0)).values
        for g in groups
    ]


def _batch_terms(
    config: ObjectiveConfig,
    groups: Sequence[RolloutGroup],
    params: LogitTable,
    refs: ReferencePolicies,
    advantages,
    baselines,
    want_grad: bool,
) -> tuple[float, LogitTable | None]:
    """Single pass computing the surrogate loss and (optionally) its exact
    gradient. Groups are processed in the given order and trajectories in
    rollout order, so accumulation is deterministic."""
    if refs is None or refs.old_params is None:
        raise ValueError(f"{config.algorithm.value} needs reference policies (pi_old)")
    kl_active = config.algorithm in _KL_ALGORITHMS and config.kl_beta > 0
    if kl_active and refs.ref_params is None:
        raise ValueError(f"{config.algorithm.value} with kl_beta > 0 needs ref_params")
    adv_per_group = _resolve_advantages(config, groups, advantages, baselines)

    n_total = sum(g.group_size for g in groups)
    if n_total == 0:
        raise ValueError("batch contains no trajectories")
    vocab = params.vocab_size
    eps = config.clip_epsilon
    loss = 0.0
    grad = params.zeros_like() if want_grad else None
    # Softmax rows repeat across trajectories of one prompt; cache per key.
    cache: dict[tuple[str, int, int, int], np.ndarray] = {}

    def row_probs(table: LogitTable, tag: str, pid: int, t: int, idx: int):
        key = (tag, pid, t, idx)
        if key not in cache:
            cache[key] = softmax(table.tables[pid][t][idx])
        return cache[key]

    for group, adv in zip(groups, adv_per_group):
        pid = group.prompt_id
        for traj, a_traj in zip(group.trajectories, adv):
            if traj.reward not in (-1, 1):
                raise ValueError("trajectory rewards must be assigned before the loss")
            if not _trains_on(config, traj.reward):
                continue
            T = len(traj.tokens)
            w = 1.0 / (n_total * T)
            idx = 0
            for t, y in enumerate(traj.tokens):
                pi = row_probs(params, "new", pid, t, idx)
                pi_old = row_probs(refs.old_params, "old", pid, t, idx)
                if pi_old[y] <= 0:
                    raise ValueError(
                        f"sampled token {y} has zero probability under pi_old "
                        f"(prompt {pid}, position {t})"
                    )
                a_t = float(a_traj)
                if config.algorithm is Algorithm.PPO_LITE and config.kl_beta > 0:
                    pi_ref = row_probs(refs.ref_params, "ref", pid, t, idx)
                    a_t -= config.kl_beta * float(
                        np.log(pi_old[y]) - np.log(pi_ref[y])
                    )
                rho = float(pi[y] / pi_old[y])
                unclipped = rho * a_t
                clipped = float(np.clip(rho, 1.0 - eps, 1.0 + eps)) * a_t
                if unclipped <= clipped:
                    loss -= unclipped * float(pi_old[y]) * w
                    if want_grad:
                        # d(rho*A*pi_old[y])/dz = A * d pi[y]/dz
                        row = grad.tables[pid][t][idx]
                        row += (a_t * pi[y] * pi) * w
                        row[y] -= a_t * pi[y] * w
                else:
                    loss -= clipped * float(pi_old[y]) * w  # saturated: no gradient
                if config.entropy_coef > 0:
                    plogp = _plogp(pi)
                    lbar = float(plogp.sum())  # = -entropy
                    loss -= config.entropy_coef * (-lbar) * w
                    if want_grad:
                        nz = pi > 0
                        term = np.zeros_like(pi)
                        term[nz] = pi[nz] * (np.log(pi[nz]) - lbar)
                        grad.tables[pid][t][idx] += config.entropy_coef * term * w
                if kl_active and config.algorithm is Algorithm.GRPO:
                    pi_ref = row_probs(refs.ref_params, "ref", pid, t, idx)
                    nz = pi > 0
                    log_ratio = np.zeros_like(pi)
                    log_ratio[nz] = np.log(pi[nz]) - np.log(pi_ref[nz])
                    kl = float((pi * log_ratio).sum())
                    loss += config.kl_beta * kl * w
                    if want_grad:
                        grad.tables[pid][t][idx] += (
                            config.kl_beta * pi * (log_ratio - kl) * w
                        )
                idx = idx * vocab + y
    return loss, grad


def surrogate_loss(
    config: ObjectiveConfig,
    groups: Sequence[RolloutGroup],
    params: LogitTable,
    refs: ReferencePolicies,
    advantages: Sequence[np.ndarray] | None = None,
    baselines: Mapping[int, float] | None = None,
) -> float:
    """Scalar loss of a verified batch under the configured objective.

    ``advantages`` (one array per group) may be precomputed, e.g. when a
    mini-batch holds only part of a group but the group statistics must come
    from the whole group; otherwise they are derived here.
    """
    loss, _ = _batch_terms(
        config, groups, params, refs, advantages, baselines, want_grad=False
    )
    return loss


def loss_gradient(
    config: ObjectiveConfig,
    groups: Sequence[RolloutGroup],
    params: LogitTable,
    refs: ReferencePolicies,
    advantages: Sequence[np.ndarray] | None = None,
    baselines: Mapping[int, float] | None = None,
) -> LogitTable:
    """Exact gradient of :func:`surrogate_loss` w.r.t. every logit; entries
    at prefixes the batch never visits stay exactly zero."""
    _, grad = _batch_terms(
        config, groups, params, refs, advantages, baselines, want_grad=True
    )
    return grad
