"""Exactly enumerable autoregressive softmax policies.

The policy is a dense table of logits: for every prompt and every prefix of
length ``0..T-1`` there is one logit vector of length ``vocab_size``. Prefixes
at depth ``t`` are indexed lexicographically (base-``vocab_size``), so level
``t`` of a prompt's table is an array of shape ``(V**t, V)``. This makes all
distributions, marginals, and entropies computable in closed form, and makes
the parameter-level gradients of every training objective exact.

Temperature enters at sampling/query time only; the stored logits are the
parameters themselves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tasks import (
    ENUMERATION_LIMIT,
    PromptInstance,
    correct_mask,
    index_to_sequence,
    sequence_to_index,
)


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Numerically stable softmax along the last axis."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    x = np.asarray(logits, dtype=np.float64) / temperature
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _plogp(p: np.ndarray) -> np.ndarray:
    """p * log(p) with the 0*log(0) = 0 convention."""
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def entropy_of(probs: np.ndarray) -> float:
    """Shannon entropy in nats."""
    return float(-_plogp(np.asarray(probs, dtype=np.float64)).sum())


@dataclass
class TokenDistribution:
    """Next-token distribution at one prefix, at a given temperature."""

    probs: np.ndarray
    temperature: float

    def entropy(self) -> float:
        return entropy_of(self.probs)


@dataclass
class Trajectory:
    """One sampled sequence with per-step behavior probabilities. The reward
    stays ``None`` until a verifier assigns it."""

    prompt_id: int
    tokens: tuple[int, ...]
    token_probs: tuple[float, ...]
    rollout_index: int = 0
    reward: int | None = None


@dataclass
class LogitTable:
    """Dense per-(prompt, prefix) table of length-``vocab_size`` real vectors.

    Used both for policy parameters and for structures indexed the same way
    (loss gradients, optimizer moments). ``tables[pid][t]`` has shape
    ``(vocab_size**t, vocab_size)``.
    """

    vocab_size: int
    seq_len: int
    tables: dict[int, list[np.ndarray]] = field(default_factory=dict)

    @classmethod
    def zeros(cls, vocab_size: int, seq_len: int, prompt_ids) -> "LogitTable":
        tables = {
            int(pid): [
                np.zeros((vocab_size**t, vocab_size)) for t in range(seq_len)
            ]
            for pid in prompt_ids
        }
        return cls(vocab_size, seq_len, tables)

    def zeros_like(self) -> "LogitTable":
        return LogitTable.zeros(self.vocab_size, self.seq_len, self.tables.keys())

    def copy(self) -> "LogitTable":
        tables = {
            pid: [a.copy() for a in levels] for pid, levels in self.tables.items()
        }
        return LogitTable(self.vocab_size, self.seq_len, tables)

    @property
    def prompt_ids(self) -> list[int]:
        return list(self.tables.keys())

    def row(self, prompt_id: int, prefix) -> np.ndarray:
        """Logit vector at a (prompt, prefix) key. Raises KeyError for an
        unknown prompt and ValueError for an invalid prefix."""
        prefix = tuple(int(t) for t in prefix)
        if prompt_id not in self.tables:
            raise KeyError(f"unknown prompt_id {prompt_id}")
        if len(prefix) >= self.seq_len:
            raise ValueError(
                f"prefix length {len(prefix)} not below seq_len {self.seq_len}"
            )
        for tok in prefix:
            if not 0 <= tok < self.vocab_size:
                raise ValueError(f"prefix token {tok} out of range")
        idx = sequence_to_index(prefix, self.vocab_size)
        return self.tables[prompt_id][len(prefix)][idx]

    def iter_arrays(self):
        for pid in self.tables:
            for t, arr in enumerate(self.tables[pid]):
                yield pid, t, arr

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, _, a in self.iter_arrays())

    def l2_norm(self) -> float:
        total = 0.0
        for _, _, a in self.iter_arrays():
            total += float((a * a).sum())
        return float(np.sqrt(total))

    def add_scaled(self, other: "LogitTable", scale: float) -> None:
        """In-place ``self += scale * other`` over matching entries."""
        for pid, t, a in self.iter_arrays():
            a += scale * other.tables[pid][t]


class InitScheme(str, Enum):
    UNIFORM = "uniform"
    BIASED = "biased"


def init_params(
    prompts: list[PromptInstance],
    scheme: InitScheme,
    seed: int,
    bias_strength: float = 0.0,
) -> LogitTable:
    """Build initial policy parameters for a prompt set.

    ``UNIFORM`` is the all-zeros table (every next-token distribution
    uniform). ``BIASED`` draws standard-normal logits from a per-prompt
    seeded stream and then adds ``bias_strength`` to the logits along the
    path of one randomly chosen correct sequence per prompt, so part of the
    prior mass is concentrated on a valid answer. At ``bias_strength=0`` the
    result is exactly the seeded Gaussian table.
    """
    if not prompts:
        raise ValueError("prompts must be nonempty")
    task = prompts[0].task
    for p in prompts:
        if p.task.vocab_size != task.vocab_size or p.task.seq_len != task.seq_len:
            raise ValueError("all prompts must share vocab_size and seq_len")
    params = LogitTable.zeros(
        task.vocab_size, task.seq_len, [p.prompt_id for p in prompts]
    )
    if scheme is InitScheme.UNIFORM:
        return params
    for prompt in prompts:
        rng = np.random.default_rng((seed, prompt.prompt_id))
        levels = params.tables[prompt.prompt_id]
        for t in range(task.seq_len):
            levels[t][...] = rng.standard_normal(levels[t].shape)
        correct = np.flatnonzero(correct_mask(prompt))
        chosen = int(correct[rng.integers(0, len(correct))])
        path = index_to_sequence(chosen, task.vocab_size, task.seq_len)
        idx = 0
        for t, tok in enumerate(path):
            levels[t][idx, tok] += bias_strength
            idx = idx * task.vocab_size + tok
    return params


def token_distribution(
    params: LogitTable, prompt_id: int, prefix, temperature: float = 1.0
) -> TokenDistribution:
    """Softmax of the stored logit row at the given temperature."""
    return TokenDistribution(
        probs=softmax(params.row(prompt_id, prefix), temperature),
        temperature=temperature,
    )


def sample_trajectory(
    params: LogitTable,
    prompt: PromptInstance,
    rng: np.random.Generator,
    temperature: float = 1.0,
    rollout_index: int = 0,
) -> Trajectory:
    """Draw one sequence token by token, recording behavior probabilities.

    Deterministic given the generator state. Tokens with exactly zero
    probability are never drawn.
    """
    vocab = params.vocab_size
    levels = params.tables[prompt.prompt_id]
    tokens: list[int] = []
    probs: list[float] = []
    idx = 0
    for t in range(params.seq_len):
        dist = softmax(levels[t][idx], temperature)
        cum = np.cumsum(dist)
        u = rng.random()
        # side='right' skips zero-probability tokens (their cumsum is flat).
        tok = int(np.searchsorted(cum, u, side="right"))
        if tok >= vocab:  # float shortfall at the top of the CDF
            tok = int(np.flatnonzero(dist > 0)[-1])
        tokens.append(tok)
        probs.append(float(dist[tok]))
        idx = idx * vocab + tok
    return Trajectory(
        prompt_id=prompt.prompt_id,
        tokens=tuple(tokens),
        token_probs=tuple(probs),
        rollout_index=rollout_index,
    )


def sequence_probability(
    params: LogitTable, prompt: PromptInstance, sequence, temperature: float = 1.0
) -> float:
    """Exact probability of one full sequence (product of step marginals)."""
    seq = tuple(int(t) for t in sequence)
    if len(seq) != params.seq_len:
        raise ValueError(f"sequence length {len(seq)} != seq_len {params.seq_len}")
    levels = params.tables[prompt.prompt_id]
    prob = 1.0
    idx = 0
    for t, tok in enumerate(seq):
        if not 0 <= tok < params.vocab_size:
            raise ValueError(f"token {tok} out of range")
        dist = softmax(levels[t][idx], temperature)
        prob *= float(dist[tok])
        idx = idx * params.vocab_size + tok
    return prob


def _check_enumerable(params: LogitTable) -> None:
    if params.vocab_size**params.seq_len > ENUMERATION_LIMIT:
        raise ValueError("enumeration limit exceeded")


def sequence_probabilities(
    params: LogitTable, prompt_id: int, temperature: float = 1.0
) -> np.ndarray:
    """Probabilities of all ``V**T`` sequences, lexicographic order."""
    _check_enumerable(params)
    probs = np.ones(1)
    for arr in params.tables[prompt_id]:
        level = softmax(arr, temperature)
        probs = (probs[:, None] * level).reshape(-1)
    return probs


def enumerate_distribution(
    params: LogitTable, prompt: PromptInstance, temperature: float = 1.0
) -> list[tuple[tuple[int, ...], float]]:
    """All sequences with their exact probabilities, lexicographic order."""
    probs = sequence_probabilities(params, prompt.prompt_id, temperature)
    vocab, T = params.vocab_size, params.seq_len
    return [(index_to_sequence(i, vocab, T), float(p)) for i, p in enumerate(probs)]


def correct_sequence_mass(
    params: LogitTable, prompt: PromptInstance, temperature: float = 1.0
) -> float:
    """Total probability on the prompt's correct set (exact Pass@1)."""
    probs = sequence_probabilities(params, prompt.prompt_id, temperature)
    return float(probs[correct_mask(prompt)].sum())


def policy_entropy(
    params: LogitTable, prompts: list[PromptInstance], temperature: float = 1.0
) -> float:
    """Mean expected per-token entropy, in nats.

    For each prompt, position ``t`` contributes the expectation over prefixes
    reached by the policy of the next-token entropy at that prefix; positions
    are then averaged, and prompts averaged. Computed exactly by propagating
    prefix reach probabilities level by level.
    """
    _check_enumerable(params)
    per_prompt = []
    for prompt in prompts:
        levels = params.tables[prompt.prompt_id]
        reach = np.ones(1)
        acc = 0.0
        for arr in levels:
            level = softmax(arr, temperature)
            row_entropy = -_plogp(level).sum(axis=1)
            acc += float(reach @ row_entropy)
            reach = (reach[:, None] * level).reshape(-1)
        per_prompt.append(acc / params.seq_len)
    return float(np.mean(per_prompt))


def sequence_entropy(
    params: LogitTable, prompts: list[PromptInstance], temperature: float = 1.0
) -> float:
    """Mean entropy of the full sequence distribution, in nats."""
    vals = []
    for prompt in prompts:
        probs = sequence_probabilities(params, prompt.prompt_id, temperature)
        vals.append(-float(_plogp(probs).sum()))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "rlvrlab-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised when a checkpoint file is missing fields, has the wrong
    format/version, or fails shape validation."""


@dataclass
class Checkpoint:
    params: LogitTable
    step: int
    optimizer_state: dict | None = None
    meta: dict | None = None


def _canonical_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n").encode()


def checkpoint_to_bytes(
    params: LogitTable,
    step: int,
    optimizer_state: dict | None = None,
    meta: dict | None = None,
) -> bytes:
    """Canonical, byte-reproducible serialization (floats round-trip exactly)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "vocab_size": params.vocab_size,
        "seq_len": params.seq_len,
        "logits": {
            str(pid): [arr.reshape(-1).tolist() for arr in levels]
            for pid, levels in params.tables.items()
        },
        "optimizer": optimizer_state,
        "meta": meta,
    }
    return _canonical_json(payload)


def save_checkpoint(path, params, step, optimizer_state=None, meta=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(params, step, optimizer_state, meta))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    try:
        payload = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"not a checkpoint file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"unrecognized checkpoint format {payload.get('format')!r}; "
            f"expected {CHECKPOINT_FORMAT!r}"
        )
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version')!r}; "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    try:
        vocab = int(payload["vocab_size"])
        seq_len = int(payload["seq_len"])
        tables = {}
        for pid_str, levels in payload["logits"].items():
            pid = int(pid_str)
            if len(levels) != seq_len:
                raise CheckpointError(
                    f"prompt {pid}: expected {seq_len} levels, got {len(levels)}"
                )
            arrs = []
            for t, flat in enumerate(levels):
                arr = np.asarray(flat, dtype=np.float64)
                if arr.size != vocab**t * vocab:
                    raise CheckpointError(
                        f"prompt {pid} level {t}: wrong entry count {arr.size}"
                    )
                arrs.append(arr.reshape(vocab**t, vocab))
            tables[pid] = arrs
        params = LogitTable(vocab, seq_len, tables)
        return Checkpoint(
            params=params,
            step=int(payload["step"]),
            optimizer_state=payload.get("optimizer"),
            meta=payload.get("meta"),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
