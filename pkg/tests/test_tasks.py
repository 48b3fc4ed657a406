"""Task generation and verification contracts."""

import itertools

import numpy as np
import pytest

from rlvrlab.tasks import (
    PromptInstance,
    TaskKind,
    TaskSpec,
    enumerate_correct,
    generate_prompts,
    verify,
)


def multi_sum_spec(p=5, vocab=5, seq_len=3):
    return TaskSpec(TaskKind.MULTI_SUM, vocab_size=vocab, seq_len=seq_len, modulus=p)


def test_generate_prompts_deterministic():
    spec = multi_sum_spec()
    a = generate_prompts(spec, 4, seed=7)
    b = generate_prompts(spec, 4, seed=7)
    assert [p.target for p in a] == [p.target for p in b]
    assert [p.prompt_id for p in a] == [0, 1, 2, 3]
    assert all(0 <= p.target < 5 for p in a)


def test_generate_prompts_unique_answer_range():
    spec = TaskSpec(TaskKind.UNIQUE_ANSWER, vocab_size=4, seq_len=2)
    (prompt,) = generate_prompts(spec, 1, seed=0)
    assert 0 <= prompt.target < 16


def test_generate_prompts_rejects_bad_modulus():
    spec = TaskSpec(TaskKind.MULTI_SUM, vocab_size=5, seq_len=3, modulus=6)
    with pytest.raises(ValueError, match="modulus"):
        generate_prompts(spec, 1, seed=0)


def test_generate_prompts_rejects_enumeration_bound():
    spec = TaskSpec(TaskKind.UNIQUE_ANSWER, vocab_size=10, seq_len=8)
    with pytest.raises(ValueError, match="enumeration"):
        generate_prompts(spec, 1, seed=0)


def test_verify_multi_sum_residues():
    prompt = PromptInstance(0, multi_sum_spec(), target=3)
    assert verify(prompt, (1, 1, 1)) == 1  # 3 = 3 mod 5
    assert verify(prompt, (1, 1, 2)) == -1  # 4 != 3 mod 5


def test_verify_unique_answer_base_decode():
    # base-4 decode oracle: (1, 2) -> 1*4 + 2 = 6
    assert 1 * 4 + 2 == 6
    spec = TaskSpec(TaskKind.UNIQUE_ANSWER, vocab_size=4, seq_len=2)
    prompt = PromptInstance(0, spec, target=6)
    assert verify(prompt, (1, 2)) == 1
    assert verify(prompt, (2, 1)) == -1


def test_verify_rejects_malformed_sequences():
    prompt = PromptInstance(0, multi_sum_spec(), target=0)
    with pytest.raises(ValueError):
        verify(prompt, (1, 1))
    with pytest.raises(ValueError):
        verify(prompt, (1, 1, 9))


def test_enumerate_correct_unique_answer_singleton():
    spec = TaskSpec(TaskKind.UNIQUE_ANSWER, vocab_size=4, seq_len=2)
    prompt = PromptInstance(0, spec, target=6)
    assert enumerate_correct(prompt) == {(1, 2)}


def test_enumerate_correct_single_token():
    prompt = PromptInstance(0, multi_sum_spec(p=5, vocab=5, seq_len=1), target=3)
    assert enumerate_correct(prompt) == {(3,)}


def test_enumerate_correct_density_by_brute_force():
    # brute-force oracle over all 25 sequences
    prompt = PromptInstance(0, multi_sum_spec(p=5, vocab=5, seq_len=2), target=0)
    brute = {
        seq
        for seq in itertools.product(range(5), repeat=2)
        if sum(seq) % 5 == 0
    }
    assert len(brute) == 25 // 5
    assert enumerate_correct(prompt) == brute


def test_verify_matches_enumerate_correct_exhaustively():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = int(rng.integers(2, 5))
        vocab = int(rng.integers(p, 6))
        spec = TaskSpec(TaskKind.MULTI_SUM, vocab, 3, modulus=p)
        prompt = PromptInstance(0, spec, target=int(rng.integers(0, p)))
        correct = enumerate_correct(prompt)
        for seq in itertools.product(range(vocab), repeat=3):
            assert (verify(prompt, seq) == 1) == (seq in correct)


def test_rewards_are_two_valued():
    prompt = PromptInstance(0, multi_sum_spec(), target=1)
    values = {
        verify(prompt, seq) for seq in itertools.product(range(5), repeat=3)
    }
    assert values == {-1, 1}
