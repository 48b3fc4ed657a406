"""Synthetic prompts with deterministic binary verifiers.

Two task families over fixed-length token sequences, chosen so the set of
correct answers is exactly enumerable:

- ``MULTI_SUM``: a sequence is correct iff its token sum falls in a required
  residue class mod ``p``. Many correct answers per prompt; the density of
  the correct set is ``1/p``.
- ``UNIQUE_ANSWER``: exactly one correct sequence per prompt, identified by
  its base-``vocab_size`` index.

Rewards are strictly two-valued: +1 correct, -1 incorrect.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

# Hard cap on vocab_size**seq_len so exact enumeration stays fast.
ENUMERATION_LIMIT = 10_000_000

REWARD_CORRECT = 1
REWARD_INCORRECT = -1


class TaskKind(str, Enum):
    MULTI_SUM = "multi_sum"
    UNIQUE_ANSWER = "unique_answer"


@dataclass(frozen=True)
class TaskSpec:
    """Shape of a task family: token alphabet, sequence length, and the
    MULTI_SUM modulus (``None`` for UNIQUE_ANSWER)."""

    kind: TaskKind
    vocab_size: int
    seq_len: int
    modulus: int | None = None

    @property
    def num_sequences(self) -> int:
        return self.vocab_size**self.seq_len

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.num_sequences > ENUMERATION_LIMIT:
            raise ValueError(
                f"vocab_size**seq_len = {self.num_sequences} exceeds the "
                f"enumeration limit {ENUMERATION_LIMIT}"
            )
        if self.kind is TaskKind.MULTI_SUM:
            if self.modulus is None or self.modulus < 2:
                raise ValueError("MULTI_SUM requires a modulus >= 2")
            if self.modulus > self.vocab_size:
                raise ValueError(
                    f"modulus {self.modulus} > vocab_size {self.vocab_size}: "
                    "some residues would be unreachable"
                )
        elif self.modulus is not None:
            raise ValueError("modulus is only meaningful for MULTI_SUM")


@dataclass(frozen=True)
class PromptInstance:
    """One concrete prompt: a task plus its target (required residue for
    MULTI_SUM, index of the unique correct sequence for UNIQUE_ANSWER)."""

    prompt_id: int
    task: TaskSpec
    target: int


def generate_prompts(spec: TaskSpec, count: int, seed: int) -> list[PromptInstance]:
    """Draw ``count`` prompts with uniformly random targets.

    Pure function of ``(spec, count, seed)``; prompt ids are ``0..count-1``.
    """
    spec.validate()
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    if spec.kind is TaskKind.MULTI_SUM:
        high = spec.modulus
    else:
        high = spec.num_sequences
    targets = rng.integers(0, high, size=count)
    return [PromptInstance(i, spec, int(t)) for i, t in enumerate(targets)]


def _check_sequence(task: TaskSpec, sequence) -> tuple[int, ...]:
    seq = tuple(int(t) for t in sequence)
    if len(seq) != task.seq_len:
        raise ValueError(f"sequence length {len(seq)} != seq_len {task.seq_len}")
    for tok in seq:
        if not 0 <= tok < task.vocab_size:
            raise ValueError(f"token {tok} out of range [0, {task.vocab_size})")
    return seq


def sequence_to_index(sequence, vocab_size: int) -> int:
    """Lexicographic (base-``vocab_size``, most significant first) index."""
    idx = 0
    for tok in sequence:
        idx = idx * vocab_size + int(tok)
    return idx


def index_to_sequence(index: int, vocab_size: int, seq_len: int) -> tuple[int, ...]:
    digits = []
    for _ in range(seq_len):
        digits.append(index % vocab_size)
        index //= vocab_size
    return tuple(reversed(digits))


def verify(prompt: PromptInstance, sequence) -> int:
    """Deterministic verifier: +1 iff ``sequence`` solves the prompt, else -1."""
    seq = _check_sequence(prompt.task, sequence)
    task = prompt.task
    if task.kind is TaskKind.MULTI_SUM:
        ok = sum(seq) % task.modulus == prompt.target
    else:
        ok = sequence_to_index(seq, task.vocab_size) == prompt.target
    return REWARD_CORRECT if ok else REWARD_INCORRECT


def correct_mask(prompt: PromptInstance) -> np.ndarray:
    """Boolean mask over all sequences in lexicographic order, True where
    the verifier accepts. Vectorized so the full space stays cheap."""
    task = prompt.task
    if task.num_sequences > ENUMERATION_LIMIT:
        raise ValueError("enumeration limit exceeded")
    if task.kind is TaskKind.UNIQUE_ANSWER:
        mask = np.zeros(task.num_sequences, dtype=bool)
        mask[prompt.target] = True
        return mask
    # Digit sums mod p, built level by level.
    token_residues = np.arange(task.vocab_size, dtype=np.int32) % task.modulus
    sums = np.zeros(1, dtype=np.int32)
    for _ in range(task.seq_len):
        sums = (sums[:, None] + token_residues[None, :]).reshape(-1) % task.modulus
    return sums == prompt.target


def enumerate_correct(prompt: PromptInstance) -> set[tuple[int, ...]]:
    """The exact set of sequences with verify = +1."""
    mask = correct_mask(prompt)
    task = prompt.task
    return {
        index_to_sequence(int(i), task.vocab_size, task.seq_len)
        for i in np.flatnonzero(mask)
    }
