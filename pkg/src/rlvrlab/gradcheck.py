"""Finite-difference verification of every analytic gradient.

Covers the closed-form per-step descent directions (positive/negative
likelihood reinforcement and the entropy-bonus ascent direction) and the
full surrogate gradients of all six algorithms, including cases where
clipping saturates and where the KL term is active. Central differences
with h = 1e-5 in double precision; components whose magnitudes are below
1e-9 are compared absolutely so near-zero entries cannot blow up the
relative error.

The suite includes a negative-control hook (``corrupt=...``) that injects a
sign flip into one comparator, so a broken harness cannot silently pass.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .objectives import (
    Algorithm,
    ObjectiveConfig,
    ReferencePolicies,
    RolloutGroup,
    compute_advantages,
    loss_gradient,
    surrogate_loss,
)
from .policy import LogitTable, entropy_of, sample_trajectory, softmax
from .tasks import PromptInstance, TaskKind, TaskSpec

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-6
ABSOLUTE_FALLBACK = 1e-9

GRADCHECK_CSV_SCHEMA = "rlvrlab-gradcheck-csv-v1"


def analytic_psr_grad(probs: np.ndarray, sampled: int) -> np.ndarray:
    """Descent direction for raising the sampled token's likelihood:
    ``pi_s (1 - pi_s)`` at the sampled index, ``-pi_v pi_s`` elsewhere."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("probs must be a 1-D distribution")
    if not 0 <= sampled < p.size:
        raise ValueError(f"sampled index {sampled} out of range")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a probability distribution")
    grad = -p * p[sampled]
    grad[sampled] = p[sampled] * (1.0 - p[sampled])
    return grad


def analytic_nsr_grad(probs: np.ndarray, sampled: int) -> np.ndarray:
    """Descent direction for lowering the sampled token's likelihood;
    the exact negation of :func:`analytic_psr_grad`."""
    return -analytic_psr_grad(probs, sampled)


def analytic_entropy_grad(probs: np.ndarray) -> np.ndarray:
    """Ascent direction on entropy: ``-pi_v (ln pi_v - lbar)`` with
    ``lbar = sum pi ln pi``; zero exactly at the uniform distribution."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probs must be a probability distribution")
    nz = p > 0
    logp = np.zeros_like(p)
    logp[nz] = np.log(p[nz])
    lbar = float((p[nz] * logp[nz]).sum())
    grad = np.zeros_like(p)
    grad[nz] = -p[nz] * (logp[nz] - lbar)
    return grad


def finite_difference_grad(
    loss_function: Callable[[np.ndarray], float],
    params: np.ndarray,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """Central differences (f(z+h e_v) - f(z-h e_v)) / 2h per component."""
    if step <= 0:
        raise ValueError("step must be > 0")
    z = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(z)
    flat = grad.reshape(-1)
    zflat = z.reshape(-1)
    for i in range(zflat.size):
        orig = zflat[i]
        zflat[i] = orig + step
        up = float(loss_function(z))
        zflat[i] = orig - step
        down = float(loss_function(z))
        zflat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("loss evaluated to a non-finite value")
        flat[i] = (up - down) / (2.0 * step)
    return grad


def _compare(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    """(max relative error, max absolute error). Components whose absolute
    discrepancy is at or below the fallback threshold count as matching:
    below 1e-9 a central difference is indistinguishable from roundoff, so a
    relative comparison would be meaningless there."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= ABSOLUTE_FALLBACK, 0.0, diff / np.maximum(scale, 1e-300))
    return float(rel.max(initial=0.0)), float(diff.max(initial=0.0))


@dataclass
class GradCheckReport:
    case_id: str
    objective: str
    analytic: np.ndarray
    numeric: np.ndarray
    max_rel_err: float
    max_abs_err: float
    tolerance: float
    passed: bool


def _make_report(case_id, objective, analytic, numeric, tolerance) -> GradCheckReport:
    rel, abs_ = _compare(analytic, numeric)
    return GradCheckReport(
        case_id=case_id,
        objective=objective,
        analytic=analytic,
        numeric=numeric,
        max_rel_err=rel,
        max_abs_err=abs_,
        tolerance=tolerance,
        passed=rel <= tolerance,
    )


def _random_distribution(rng: np.random.Generator, size: int) -> np.ndarray:
    return softmax(rng.normal(0.0, 2.0, size=size))


def _formula_case(kind, case_id, rng, tolerance, corrupt) -> GradCheckReport:
    size = int(rng.integers(2, 8))
    logits = rng.normal(0.0, 2.0, size=size)
    probs = softmax(logits)
    sampled = int(rng.integers(0, size))
    if kind == "psr":
        analytic = analytic_psr_grad(probs, sampled)
        numeric = -finite_difference_grad(lambda z: -softmax(z)[sampled], logits)
    elif kind == "nsr":
        analytic = analytic_nsr_grad(probs, sampled)
        numeric = -finite_difference_grad(lambda z: softmax(z)[sampled], logits)
    else:
        analytic = analytic_entropy_grad(probs)
        numeric = finite_difference_grad(lambda z: entropy_of(softmax(z)), logits)
    if corrupt == f"{kind}_sign":
        analytic = -analytic
    return _make_report(case_id, kind, analytic, numeric, tolerance)


def _random_batch(
    rng: np.random.Generator,
    clip_active: bool,
    algorithm: Algorithm,
) -> tuple[LogitTable, ReferencePolicies, list[RolloutGroup], dict[int, float]]:
    """A small random setting: params, references, and verified rollouts.

    Clip-active cases perturb pi_old away from pi and resample until no
    ratio sits within a guard band of the clip corners, where the min-form
    is non-differentiable and finite differences would be meaningless.
    """
    vocab = int(rng.integers(3, 6))
    seq_len = int(rng.integers(1, 3))
    n_prompts = int(rng.integers(1, 3))
    prompt_ids = list(range(n_prompts))
    eps = 0.2
    for _ in range(80):
        params = LogitTable.zeros(vocab, seq_len, prompt_ids)
        for _, _, arr in params.iter_arrays():
            arr[...] = rng.normal(0.0, 1.5, size=arr.shape)
        if clip_active:
            old = params.copy()
            for _, _, arr in old.iter_arrays():
                arr += rng.normal(0.0, 0.6, size=arr.shape)
        else:
            old = params.copy()
        ref = params.copy()
        for _, _, arr in ref.iter_arrays():
            arr += rng.normal(0.0, 0.5, size=arr.shape)
        groups = []
        need_pos = algorithm is not Algorithm.NSR
        need_neg = algorithm is not Algorithm.PSR
        ratios_ok = True
        for pid in prompt_ids:
            g = int(rng.integers(2, 5))
            trajs = []
            for j in range(g):
                # sample from the behavior policy so pi_old(y_t) > 0
                traj = _sample_from_table(old, pid, rng)
                traj.rollout_index = j
                traj.reward = 1 if rng.random() < 0.5 else -1
                trajs.append(traj)
                idx = 0
                for t, y in enumerate(traj.tokens):
                    pi = softmax(params.tables[pid][t][idx])
                    pi_old = softmax(old.tables[pid][t][idx])
                    rho = pi[y] / pi_old[y]
                    if min(abs(rho - (1 - eps)), abs(rho - (1 + eps))) < 1e-3:
                        ratios_ok = False
                    idx = idx * vocab + y
            groups.append(RolloutGroup(pid, trajs))
        rewards = [t.reward for g in groups for t in g.trajectories]
        if need_pos and 1 not in rewards:
            groups[0].trajectories[0].reward = 1
        if need_neg and -1 not in rewards:
            groups[-1].trajectories[-1].reward = -1
        if ratios_ok:
            baselines = {pid: float(rng.uniform(-0.5, 0.5)) for pid in prompt_ids}
            return params, ReferencePolicies(old, ref), groups, baselines
    raise RuntimeError("could not draw a clip-safe random batch")


def _sample_from_table(table: LogitTable, prompt_id: int, rng):
    # The sampler only consults prompt_id; any task shape works here.
    task = TaskSpec(TaskKind.UNIQUE_ANSWER, table.vocab_size, table.seq_len)
    return sample_trajectory(table, PromptInstance(prompt_id, task, 0), rng)


def _surrogate_case(
    algorithm: Algorithm,
    variant: str,
    case_id: str,
    rng: np.random.Generator,
    tolerance: float,
    corrupt,
) -> GradCheckReport:
    clip_active = variant == "clip"
    if variant == "kl":
        kl_beta = float(rng.uniform(0.02, 0.1))
    elif algorithm in (Algorithm.GRPO, Algorithm.PPO_LITE):
        kl_beta = 1e-3
    else:
        kl_beta = 0.0
    config = ObjectiveConfig(
        algorithm=algorithm,
        kl_beta=kl_beta,
        entropy_coef=float(rng.choice([0.0, 1e-4, 1e-2])),
        lam=float(rng.uniform(0.05, 1.0)),
    )
    params, refs, groups, baselines = _random_batch(rng, clip_active, algorithm)
    advantages = [
        compute_advantages(config, g, baseline=baselines[g.prompt_id]).values
        for g in groups
    ]

    analytic_table = loss_gradient(
        config, groups, params, refs, advantages=advantages
    )
    if corrupt == "surrogate_sign":
        for _, _, arr in analytic_table.iter_arrays():
            arr *= -1.0

    visited = set()
    for g in groups:
        for traj in g.trajectories:
            idx = 0
            for t, y in enumerate(traj.tokens):
                visited.add((g.prompt_id, t, idx))
                idx = idx * params.vocab_size + y

    analytic_parts, numeric_parts = [], []
    for pid, t, idx in sorted(visited):
        base_row = params.tables[pid][t][idx]

        def loss_at(row_values: np.ndarray) -> float:
            saved = base_row.copy()
            base_row[...] = row_values
            try:
                return surrogate_loss(
                    config, groups, params, refs, advantages=advantages
                )
            finally:
                base_row[...] = saved

        numeric_parts.append(finite_difference_grad(loss_at, base_row.copy()))
        analytic_parts.append(analytic_table.tables[pid][t][idx].copy())
    # Everything the batch never visits must be exactly zero.
    for pid, t, arr in analytic_table.iter_arrays():
        for idx in range(arr.shape[0]):
            if (pid, t, idx) not in visited and np.any(arr[idx] != 0.0):
                raise AssertionError("nonzero gradient at an unvisited prefix")
    analytic = np.concatenate(analytic_parts)
    numeric = np.concatenate(numeric_parts)
    label = f"{algorithm.value}_{variant}"
    return _make_report(case_id, label, analytic, numeric, tolerance)


def suite_objective_labels() -> list[str]:
    labels = ["psr", "nsr", "entropy"]
    for alg in Algorithm:
        labels.append(f"{alg.value}_ratio1")
        labels.append(f"{alg.value}_clip")
    labels.append(f"{Algorithm.GRPO.value}_kl")
    labels.append(f"{Algorithm.PPO_LITE.value}_kl")
    return labels


def run_gradcheck_suite(
    seed: int = 0,
    cases: int = 100,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: str | None = None,
) -> list[GradCheckReport]:
    """Run ``cases`` random checks per objective label; deterministic in
    ``seed``. ``corrupt`` ("psr_sign", "nsr_sign", "entropy_sign" or
    "surrogate_sign") flips a comparator's sign as a negative control."""
    reports: list[GradCheckReport] = []
    for label in suite_objective_labels():
        for i in range(cases):
            rng = np.random.default_rng((seed, zlib.crc32(label.encode()), i))
            case_id = f"{label}-{i:04d}"
            if label in ("psr", "nsr", "entropy"):
                reports.append(_formula_case(label, case_id, rng, tolerance, corrupt))
            else:
                alg_name, variant = label.rsplit("_", 1)
                reports.append(
                    _surrogate_case(
                        Algorithm(alg_name), variant, case_id, rng, tolerance, corrupt
                    )
                )
    return reports


def reports_to_csv(reports: Sequence[GradCheckReport]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={GRADCHECK_CSV_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case_id", "objective", "max_rel_err", "max_abs_err", "pass"])
    for r in reports:
        writer.writerow(
            [r.case_id, r.objective, repr(r.max_rel_err), repr(r.max_abs_err),
             str(r.passed).lower()]
        )
    return buf.getvalue()
