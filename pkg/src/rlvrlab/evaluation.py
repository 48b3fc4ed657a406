"""Pass@k, entropy, and batch-statistics reporting.

Two routes to Pass@k that check each other:

- the unbiased estimator ``1 - C(n-c, k) / C(n, k)`` from ``n`` sampled
  responses with ``c`` correct, evaluated with overflow-safe products, and
- the exact closed form ``1 - (1 - correct_mass)^k`` available because the
  policy's sequence distribution is enumerable.

Reports carry both, with the estimator's standard error across prompts.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import policy as policy_mod
from .objectives import RolloutGroup
from .policy import LogitTable
from .tasks import PromptInstance, verify

EVAL_JSON_SCHEMA = "rlvrlab-evalreport-v1"
EVAL_CSV_SCHEMA = "rlvrlab-evalcsv-v1"
# Exact integer binomials below this n; telescoping float products above.
_EXACT_COMB_MAX_N = 64


@dataclass(frozen=True)
class PassAtKQuery:
    """n samples drawn, c of them correct, budget k <= n."""

    n: int
    c: int
    k: int

    def __post_init__(self):
        if not 0 <= self.c <= self.n:
            raise ValueError(f"need 0 <= c <= n, got c={self.c}, n={self.n}")
        if not 1 <= self.k <= self.n:
            raise ValueError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")


def pass_at_k_unbiased(query: PassAtKQuery) -> float:
    """Unbiased Pass@k estimate ``1 - C(n-c, k) / C(n, k)``.

    ``C(n-c, k)`` is zero when ``k > n-c`` (cannot fill the budget with
    incorrect samples), giving exactly 1.0. Evaluated with exact integers
    for small ``n`` and as a telescoping product of ratios otherwise, so no
    factorial ever overflows.
    """
    n, c, k = query.n, query.c, query.k
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    if n <= _EXACT_COMB_MAX_N:
        return 1.0 - math.comb(n - c, k) / math.comb(n, k)
    prod = 1.0
    for i in range(k):
        prod *= (n - c - i) / (n - i)
    return 1.0 - prod


def pass_at_k_exact(
    params: LogitTable, prompt: PromptInstance, k: int, temperature: float = 1.0
) -> float:
    """Exact Pass@k: ``1 - (1 - correct_mass)^k`` for k independent draws."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mass = policy_mod.correct_sequence_mass(params, prompt, temperature)
    return 1.0 - (1.0 - mass) ** k


@dataclass
class BatchStats:
    """Per-batch training statistics."""

    correct_ratio: float
    fully_solved_ratio: float
    step: int = 0


def batch_stats(groups: Sequence[RolloutGroup], step: int = 0) -> BatchStats:
    """Fraction of correct trajectories, and of prompts whose rollouts are
    all correct."""
    if not groups:
        raise ValueError("groups must be nonempty")
    total = 0
    correct = 0
    solved_prompts = 0
    for group in groups:
        rewards = group.rewards()
        total += rewards.size
        correct += int((rewards > 0).sum())
        if np.all(rewards > 0):
            solved_prompts += 1
    return BatchStats(
        correct_ratio=correct / total,
        fully_solved_ratio=solved_prompts / len(groups),
        step=step,
    )


@dataclass
class EvalReport:
    """Exact and estimated Pass@k curves plus entropy for one checkpoint."""

    step: int
    temperature: float
    k_list: list[int]
    exact: list[float]
    estimate: list[float]
    stderr: list[float]
    entropy_per_token: float
    entropy_per_sequence: float
    correct_mass: dict[int, float]
    n_samples: int
    seed: int
    schema: str = EVAL_JSON_SCHEMA

    def to_json_bytes(self) -> bytes:
        payload = {
            "schema": self.schema,
            "step": self.step,
            "temperature": self.temperature,
            "k_list": self.k_list,
            "exact": self.exact,
            "estimate": self.estimate,
            "stderr": self.stderr,
            "entropy_per_token": self.entropy_per_token,
            "entropy_per_sequence": self.entropy_per_sequence,
            "correct_mass": {str(k): v for k, v in self.correct_mass.items()},
            "n_samples": self.n_samples,
            "seed": self.seed,
        }
        return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={EVAL_CSV_SCHEMA}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "k", "exact", "estimate", "stderr"])
        for k, ex, est, se in zip(self.k_list, self.exact, self.estimate, self.stderr):
            writer.writerow([self.step, k, repr(ex), repr(est), repr(se)])
        return buf.getvalue()


def estimate_pass_curve(
    params: LogitTable,
    prompts: Sequence[PromptInstance],
    n: int,
    k_list: Sequence[int],
    temperature: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo Pass@k over prompts: draw ``n`` rollouts per prompt from
    its own seeded substream, count correct, apply the unbiased estimator.

    Returns ``(mean over prompts, standard error across prompts)`` per k.
    """
    k_list = list(k_list)
    if n < max(k_list):
        raise ValueError(f"n={n} below max k={max(k_list)}")
    estimates = np.zeros((len(prompts), len(k_list)))
    for i, prompt in enumerate(prompts):
        rng = np.random.default_rng((seed, prompt.prompt_id))
        c = 0
        for s in range(n):
            traj = policy_mod.sample_trajectory(
                params, prompt, rng, temperature, rollout_index=s
            )
            if verify(prompt, traj.tokens) > 0:
                c += 1
        for j, k in enumerate(k_list):
            estimates[i, j] = pass_at_k_unbiased(PassAtKQuery(n, c, k))
    mean = estimates.mean(axis=0)
    if len(prompts) > 1:
        stderr = estimates.std(axis=0, ddof=1) / math.sqrt(len(prompts))
    else:
        stderr = np.zeros(len(k_list))
    return mean, stderr


def evaluate_policy(
    params: LogitTable,
    prompts: Sequence[PromptInstance],
    k_list: Sequence[int],
    n_samples: int,
    temperature: float,
    seed: int,
    step: int = 0,
) -> EvalReport:
    """Full checkpoint evaluation: exact curve, estimated curve, entropy.

    Pass@k uses the evaluation ``temperature``; the entropy figures describe
    the policy itself (temperature 1), matching what the trainer logs.
    """
    k_list = list(int(k) for k in k_list)
    masses = {
        p.prompt_id: policy_mod.correct_sequence_mass(params, p, temperature)
        for p in prompts
    }
    exact = [
        float(np.mean([1.0 - (1.0 - m) ** k for m in masses.values()]))
        for k in k_list
    ]
    estimate, stderr = estimate_pass_curve(
        params, prompts, n_samples, k_list, temperature, seed
    )
    return EvalReport(
        step=step,
        temperature=temperature,
        k_list=k_list,
        exact=exact,
        estimate=[float(x) for x in estimate],
        stderr=[float(x) for x in stderr],
        entropy_per_token=policy_mod.policy_entropy(params, list(prompts), 1.0),
        entropy_per_sequence=policy_mod.sequence_entropy(params, list(prompts), 1.0),
        correct_mass={pid: float(m) for pid, m in masses.items()},
        n_samples=int(n_samples),
        seed=int(seed),
    )
