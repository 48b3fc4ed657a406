"""On-policy training loop: rollouts, verification, updates, logging.

Each step snapshots the current policy as pi_old, samples a fixed number of
rollouts per prompt from it (one RNG substream per (step, prompt, rollout),
so sampling order never matters), verifies them, computes advantages on
whole groups, then applies one or more mini-batch gradient updates. The
step's loss and gradient norm are logged from the full batch at theta =
theta_old, where ratios are exactly 1 and the values are canonical.

Runs are bit-reproducible: identical config -> identical logs, checkpoints
and evaluation files. Wall-clock timings go to a separate file that is
excluded from that contract.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import policy as policy_mod
from .evaluation import EvalReport, batch_stats, evaluate_policy
from .objectives import (
    Algorithm,
    ObjectiveConfig,
    ReferencePolicies,
    RolloutGroup,
    compute_advantages,
    kl_exact,
    loss_gradient,
    surrogate_loss,
    update_baseline,
    visited_prefixes,
)
from .policy import InitScheme, LogitTable, checkpoint_to_bytes, init_params
from .tasks import PromptInstance, TaskSpec, generate_prompts, verify

TRAINLOG_SCHEMA_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class NumericalAbort(RuntimeError):
    """Raised when a loss or gradient goes non-finite; the trainer writes a
    diagnostic checkpoint before raising."""


@dataclass
class TrainConfig:
    task: TaskSpec
    objective: ObjectiveConfig
    prompt_count: int = 16
    group_size: int = 8
    prompts_per_step: int = 16
    mini_batch_size: int = 32
    steps: int = 200
    learning_rate: float = 1e-2
    optimizer: OptimizerKind = OptimizerKind.SGD
    gradient_epochs: int = 1
    seed: int = 0
    init_scheme: InitScheme = InitScheme.UNIFORM
    bias_strength: float = 2.0
    train_temperature: float = 1.0
    eval_temperature: float = 0.6
    eval_samples: int = 64
    k_list: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    eval_cadence: int = 10
    checkpoint_cadence: int = 10

    def validate(self) -> None:
        self.task.validate()
        if self.prompt_count < 1 or self.group_size < 1 or self.steps < 0:
            raise ValueError("prompt_count, group_size >= 1 and steps >= 0 required")
        if not 1 <= self.prompts_per_step <= self.prompt_count:
            raise ValueError("need 1 <= prompts_per_step <= prompt_count")
        batch = self.prompts_per_step * self.group_size
        if self.mini_batch_size < 1 or batch % self.mini_batch_size != 0:
            raise ValueError(
                f"mini_batch_size {self.mini_batch_size} must divide "
                f"prompts_per_step * group_size = {batch}"
            )
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.gradient_epochs < 1:
            raise ValueError("gradient_epochs must be >= 1")
        if self.train_temperature <= 0 or self.eval_temperature <= 0:
            raise ValueError("temperatures must be > 0")
        if self.eval_samples < max(self.k_list):
            raise ValueError("eval_samples must cover max(k_list)")
        if self.eval_cadence < 1 or self.checkpoint_cadence < 1:
            raise ValueError("cadences must be >= 1")


@dataclass
class TrainStepRecord:
    step: int
    loss: float
    entropy: float
    correct_ratio: float
    fully_solved_ratio: float
    grad_norm: float
    kl_ref: float
    wall_time_s: float = 0.0

    def to_json_line(self) -> str:
        payload = {
            "v": TRAINLOG_SCHEMA_VERSION,
            "step": self.step,
            "loss": self.loss,
            "entropy": self.entropy,
            "correct_ratio": self.correct_ratio,
            "fully_solved_ratio": self.fully_solved_ratio,
            "grad_norm": self.grad_norm,
            "kl_ref": self.kl_ref,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


@dataclass
class OptimizerState:
    kind: OptimizerKind
    step_count: int = 0
    m: LogitTable | None = None
    v: LogitTable | None = None

    @classmethod
    def initial(cls, kind: OptimizerKind, params: LogitTable) -> "OptimizerState":
        if kind is OptimizerKind.ADAM:
            return cls(kind, 0, params.zeros_like(), params.zeros_like())
        return cls(kind)

    def to_dict(self) -> dict:
        payload: dict = {"kind": self.kind.value, "step_count": self.step_count}
        if self.kind is OptimizerKind.ADAM:
            payload["m"] = {
                str(pid): [a.reshape(-1).tolist() for a in levels]
                for pid, levels in self.m.tables.items()
            }
            payload["v"] = {
                str(pid): [a.reshape(-1).tolist() for a in levels]
                for pid, levels in self.v.tables.items()
            }
        return payload


def apply_update(
    params: LogitTable,
    gradient: LogitTable,
    state: OptimizerState,
    learning_rate: float,
) -> LogitTable:
    """One optimizer step in place. SGD: z -= lr*g. ADAM: standard
    bias-corrected first/second-moment update."""
    if state.kind is OptimizerKind.SGD:
        params.add_scaled(gradient, -learning_rate)
        return params
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for pid, lvl, g in gradient.iter_arrays():
        m = state.m.tables[pid][lvl]
        v = state.v.tables[pid][lvl]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params.tables[pid][lvl] -= learning_rate * (m / bc1) / (
            np.sqrt(v / bc2) + ADAM_EPS
        )
    return params


@dataclass
class TrainResult:
    final_params: LogitTable
    log: list[TrainStepRecord]
    checkpoints: list[tuple[int, bytes]]
    eval_reports: list[EvalReport]
    prompts: list[PromptInstance]
    initial_params: LogitTable
    rollout_history: list[list[RolloutGroup]] = field(default_factory=list)


def _sample_groups(
    params: LogitTable,
    prompts: Sequence[PromptInstance],
    config: TrainConfig,
    step: int,
) -> list[RolloutGroup]:
    groups = []
    for prompt in prompts:
        trajs = []
        for j in range(config.group_size):
            rng = np.random.default_rng((config.seed, step, prompt.prompt_id, j))
            traj = policy_mod.sample_trajectory(
                params, prompt, rng, config.train_temperature, rollout_index=j
            )
            traj.reward = verify(prompt, traj.tokens)
            trajs.append(traj)
        groups.append(RolloutGroup(prompt.prompt_id, trajs))
    return groups


def _select_prompts(
    prompts: list[PromptInstance], config: TrainConfig, step: int
) -> list[PromptInstance]:
    if config.prompts_per_step >= len(prompts):
        return prompts
    rng = np.random.default_rng((config.seed, step, 0xC0FFEE))
    picked = rng.choice(len(prompts), size=config.prompts_per_step, replace=False)
    return [prompts[i] for i in sorted(int(i) for i in picked)]


def _mini_batches(
    groups: list[RolloutGroup],
    advantages: list[np.ndarray],
    size: int,
) -> list[tuple[list[RolloutGroup], list[np.ndarray]]]:
    """Partition a step batch into mini-batches of whole trajectories in
    prompt-major order, keeping each trajectory's precomputed advantage."""
    flat = []
    for group, adv in zip(groups, advantages):
        for traj, a in zip(group.trajectories, adv):
            flat.append((group.prompt_id, traj, float(a)))
    batches = []
    for start in range(0, len(flat), size):
        chunk = flat[start : start + size]
        by_prompt: dict[int, tuple[list, list]] = {}
        for pid, traj, a in chunk:
            by_prompt.setdefault(pid, ([], []))
            by_prompt[pid][0].append(traj)
            by_prompt[pid][1].append(a)
        mb_groups = [RolloutGroup(pid, trajs) for pid, (trajs, _) in by_prompt.items()]
        mb_advs = [np.asarray(advs) for _, (_, advs) in by_prompt.items()]
        batches.append((mb_groups, mb_advs))
    return batches


def train(
    config: TrainConfig,
    out_dir: Path | str | None = None,
    initial_params: LogitTable | None = None,
    prompts: list[PromptInstance] | None = None,
    retain_rollouts: bool = False,
) -> TrainResult:
    """Run the full training loop.

    ``initial_params``/``prompts`` can be injected for experiments on
    hand-built policies; by default both derive from the config seed. With
    ``out_dir`` set, the log (JSONL), checkpoints, evaluation reports and a
    timings file are written as training progresses.
    """
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if prompts is None:
        prompts = generate_prompts(config.task, config.prompt_count, config.seed)
    if initial_params is None:
        params = init_params(
            prompts, config.init_scheme, config.seed, config.bias_strength
        )
    else:
        params = initial_params.copy()
    initial = params.copy()
    ref = params.copy()
    opt_state = OptimizerState.initial(config.optimizer, params)
    baselines = {p.prompt_id: 0.0 for p in prompts}

    log: list[TrainStepRecord] = []
    checkpoints: list[tuple[int, bytes]] = []
    eval_reports: list[EvalReport] = []
    rollout_history: list[list[RolloutGroup]] = []

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
        (out / "eval").mkdir(exist_ok=True)
        (out / "log.jsonl").write_text("")
        # wall-clock sidecar; the only output excluded from determinism
        (out / "timings.csv").write_text(
            "# schema=rlvrlab-timings-csv-v1\nstep,wall_time_s\n"
        )

    def take_checkpoint(step: int) -> None:
        task = config.task
        blob = checkpoint_to_bytes(
            params,
            step,
            optimizer_state=opt_state.to_dict(),
            meta={
                "algorithm": config.objective.algorithm.value,
                "baselines": {str(k): v for k, v in sorted(baselines.items())},
                "task": {
                    "kind": task.kind.value,
                    "vocab_size": task.vocab_size,
                    "seq_len": task.seq_len,
                    "modulus": task.modulus,
                },
                # targets let a later `eval` confirm it sees the same prompts
                "prompt_targets": {str(p.prompt_id): p.target for p in prompts},
            },
        )
        checkpoints.append((step, blob))
        if out is not None:
            (out / "checkpoints" / f"step-{step:06d}.json").write_bytes(blob)

    def run_eval(step: int) -> None:
        report = evaluate_policy(
            params,
            prompts,
            config.k_list,
            config.eval_samples,
            config.eval_temperature,
            seed=config.seed,
            step=step,
        )
        eval_reports.append(report)
        if out is not None:
            (out / "eval" / f"step-{step:06d}.json").write_bytes(report.to_json_bytes())
            (out / "eval" / f"step-{step:06d}.csv").write_text(report.to_csv())

    def emit(record: TrainStepRecord) -> None:
        log.append(record)
        if out is not None:
            with open(out / "log.jsonl", "a") as fh:
                fh.write(record.to_json_line() + "\n")
            with open(out / "timings.csv", "a") as fh:
                fh.write(f"{record.step},{record.wall_time_s:.6f}\n")

    def batch_loss_and_norm(groups, advantages, refs) -> tuple[float, float]:
        loss = surrogate_loss(
            config.objective, groups, params, refs, advantages=advantages
        )
        grad = loss_gradient(
            config.objective, groups, params, refs, advantages=advantages
        )
        return loss, grad.l2_norm()

    def abort_if_nonfinite(loss: float, grad: LogitTable, step: int) -> None:
        if np.isfinite(loss) and grad.all_finite():
            return
        if out is not None:
            blob = checkpoint_to_bytes(
                params, step, opt_state.to_dict(), meta={"abort": "non-finite"}
            )
            (out / f"diagnostic-step-{step:06d}.json").write_bytes(blob)
        raise NumericalAbort(f"non-finite loss or gradient at step {step}")

    # Step-0 record: initial-policy metrics from a probe batch (no update).
    t0 = time.monotonic()
    probe_prompts = _select_prompts(prompts, config, 0)
    probe = _sample_groups(params, probe_prompts, config, 0)
    refs0 = ReferencePolicies(old_params=params.copy(), ref_params=ref)
    probe_adv = [
        compute_advantages(config.objective, g, baselines[g.prompt_id]).values
        for g in probe
    ]
    loss0, norm0 = batch_loss_and_norm(probe, probe_adv, refs0)
    stats0 = batch_stats(probe, step=0)
    emit(
        TrainStepRecord(
            step=0,
            loss=loss0,
            entropy=policy_mod.policy_entropy(params, prompts, 1.0),
            correct_ratio=stats0.correct_ratio,
            fully_solved_ratio=stats0.fully_solved_ratio,
            grad_norm=norm0,
            kl_ref=kl_exact(params, ref, visited_prefixes(probe)),
            wall_time_s=time.monotonic() - t0,
        )
    )
    take_checkpoint(0)
    run_eval(0)
    if retain_rollouts:
        rollout_history.append(probe)

    for step in range(1, config.steps + 1):
        t_start = time.monotonic()
        old = params.copy()
        refs = ReferencePolicies(old_params=old, ref_params=ref)
        step_prompts = _select_prompts(prompts, config, step)
        groups = _sample_groups(old, step_prompts, config, step)
        if retain_rollouts:
            rollout_history.append(groups)
        stats = batch_stats(groups, step=step)
        advantages = [
            compute_advantages(config.objective, g, baselines[g.prompt_id]).values
            for g in groups
        ]
        if config.objective.algorithm is Algorithm.PPO_LITE:
            for g in groups:
                baselines = update_baseline(baselines, g)
        loss, grad_norm = batch_loss_and_norm(groups, advantages, refs)
        if not np.isfinite(loss):
            abort_if_nonfinite(loss, params.zeros_like(), step)
        for _ in range(config.gradient_epochs):
            for mb_groups, mb_advs in _mini_batches(
                groups, advantages, config.mini_batch_size
            ):
                grad = loss_gradient(
                    config.objective, mb_groups, params, refs, advantages=mb_advs
                )
                abort_if_nonfinite(0.0, grad, step)
                apply_update(params, grad, opt_state, config.learning_rate)
        emit(
            TrainStepRecord(
                step=step,
                loss=loss,
                entropy=policy_mod.policy_entropy(params, prompts, 1.0),
                correct_ratio=stats.correct_ratio,
                fully_solved_ratio=stats.fully_solved_ratio,
                grad_norm=grad_norm,
                kl_ref=kl_exact(params, ref, visited_prefixes(groups)),
                wall_time_s=time.monotonic() - t_start,
            )
        )
        if step % config.checkpoint_cadence == 0 or step == config.steps:
            take_checkpoint(step)
        if step % config.eval_cadence == 0 or step == config.steps:
            run_eval(step)

    return TrainResult(
        final_params=params,
        log=log,
        checkpoints=checkpoints,
        eval_reports=eval_reports,
        prompts=list(prompts),
        initial_params=initial,
        rollout_history=rollout_history,
    )


def objective_for_algorithm(
    base: ObjectiveConfig, algorithm: Algorithm
) -> ObjectiveConfig:
    """Carry shared coefficients over to another algorithm, restoring that
    algorithm's own KL/normalization defaults."""
    return ObjectiveConfig.default_for(
        algorithm,
        lam=base.lam,
        clip_epsilon=base.clip_epsilon,
        entropy_coef=base.entropy_coef,
        **(
            {"kl_beta": base.kl_beta}
            if Algorithm(algorithm) in (Algorithm.GRPO, Algorithm.PPO_LITE)
            else {}
        ),
    )


SUITE_ALGORITHMS = (
    Algorithm.PSR,
    Algorithm.NSR,
    Algorithm.W_REINFORCE,
    Algorithm.GRPO,
    Algorithm.PPO_LITE,
)


@dataclass
class SuiteResult:
    results: dict[str, TrainResult]
    base_report: EvalReport
    comparison_rows: list[tuple[str, int, float]]


def run_experiment_suite(
    base_config: TrainConfig,
    algorithms: Sequence[Algorithm] = SUITE_ALGORITHMS,
    out_dir: Path | str | None = None,
) -> SuiteResult:
    """Train every algorithm from one identical initial policy and seed, and
    assemble an exact Pass@k comparison table (plus the untrained base row).
    """
    out = Path(out_dir) if out_dir is not None else None
    results: dict[str, TrainResult] = {}
    for algorithm in algorithms:
        algorithm = Algorithm(algorithm)
        config = replace(
            base_config,
            objective=objective_for_algorithm(base_config.objective, algorithm),
        )
        sub = out / algorithm.value if out is not None else None
        results[algorithm.value] = train(config, out_dir=sub)

    first = results[Algorithm(algorithms[0]).value]
    base_report = next(r for r in first.eval_reports if r.step == 0)
    rows: list[tuple[str, int, float]] = []
    for k, exact in zip(base_report.k_list, base_report.exact):
        rows.append(("base", k, exact))
    for algorithm in algorithms:
        name = Algorithm(algorithm).value
        final = results[name].eval_reports[-1]
        for k, exact in zip(final.k_list, final.exact):
            rows.append((name, k, exact))
    return SuiteResult(results=results, base_report=base_report, comparison_rows=rows)
