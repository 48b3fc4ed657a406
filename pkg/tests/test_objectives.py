"""Objective losses, gradients, advantages, and their identities."""

import math

import numpy as np
import pytest

from rlvrlab.objectives import (
    Algorithm,
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
    visited_prefixes,
)
from rlvrlab.policy import LogitTable, Trajectory, softmax


def make_params(vocab, seq_len, prompt_ids=(0,), rng=None, scale=1.0):
    params = LogitTable.zeros(vocab, seq_len, prompt_ids)
    if rng is not None:
        for _, _, arr in params.iter_arrays():
            arr[...] = rng.normal(0.0, scale, arr.shape)
    return params


def make_traj(params, prompt_id, tokens, reward, rollout_index=0):
    """Trajectory through given params with behavior probs filled in."""
    probs = []
    idx = 0
    for t, y in enumerate(tokens):
        pi = softmax(params.tables[prompt_id][t][idx])
        probs.append(float(pi[y]))
        idx = idx * params.vocab_size + y
    return Trajectory(prompt_id, tuple(tokens), tuple(probs), rollout_index, reward)


def random_batch(rng, vocab=4, seq_len=2, prompts=2, group=4):
    params = make_params(vocab, seq_len, range(prompts), rng, scale=1.2)
    groups = []
    for pid in range(prompts):
        trajs = []
        for j in range(group):
            tokens = tuple(int(t) for t in rng.integers(0, vocab, seq_len))
            reward = 1 if rng.random() < 0.5 else -1
            trajs.append(make_traj(params, pid, tokens, reward, j))
        groups.append(RolloutGroup(pid, trajs))
    return params, groups


def plain_config(algorithm, **kw):
    kw.setdefault("entropy_coef", 0.0)
    return ObjectiveConfig.default_for(algorithm, **kw)


class TestSplitByReward:
    def test_partition_sizes(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (i % 3,), r, i)
                 for i, r in enumerate((1, 1, -1))]
        pos, neg = split_by_reward(RolloutGroup(0, trajs))
        assert (len(pos), len(neg)) == (2, 1)
        assert pos + neg != []
        assert [t.rollout_index for t in pos] == [0, 1]

    def test_all_correct_means_no_negatives(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), 1, i) for i in range(3)]
        pos, neg = split_by_reward(RolloutGroup(0, trajs))
        assert neg == [] and len(pos) == 3

    def test_all_wrong_means_no_positives(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), -1, i) for i in range(3)]
        pos, neg = split_by_reward(RolloutGroup(0, trajs))
        assert pos == [] and len(neg) == 3


class TestComputeAdvantages:
    def test_grpo_whitening_hand_value(self):
        # rewards (1,1,-1,-1): mean 0, population std 1 -> unchanged
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), r, i)
                 for i, r in enumerate((1, 1, -1, -1))]
        adv = compute_advantages(plain_config(Algorithm.GRPO), RolloutGroup(0, trajs))
        np.testing.assert_allclose(adv.values, [1, 1, -1, -1], atol=1e-12)

    def test_grpo_degenerate_group_zeroed(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), 1, i) for i in range(4)]
        adv = compute_advantages(plain_config(Algorithm.GRPO), RolloutGroup(0, trajs))
        np.testing.assert_array_equal(adv.values, np.zeros(4))

    def test_w_reinforce_scales_positives_only(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), 1, 0), make_traj(params, 0, (1,), -1, 1)]
        adv = compute_advantages(
            plain_config(Algorithm.W_REINFORCE, lam=0.1), RolloutGroup(0, trajs)
        )
        np.testing.assert_allclose(adv.values, [0.1, -1.0], atol=1e-15)

    def test_ppo_lite_subtracts_baseline(self):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), 1, 0), make_traj(params, 0, (1,), -1, 1)]
        adv = compute_advantages(
            plain_config(Algorithm.PPO_LITE), RolloutGroup(0, trajs), baseline=0.25
        )
        np.testing.assert_allclose(adv.values, [0.75, -1.25], atol=1e-15)

    def test_psr_nsr_forbid_normalization(self):
        with pytest.raises(ValueError, match="advantage_normalization"):
            ObjectiveConfig(Algorithm.PSR, advantage_normalization=True)
        with pytest.raises(ValueError, match="advantage_normalization"):
            ObjectiveConfig(Algorithm.NSR, advantage_normalization=True)


class TestNormalizeBatchRewards:
    def test_hand_values(self):
        np.testing.assert_allclose(
            normalize_batch_rewards([1, -1, -1, -1]), [1.5, -0.5, -0.5, -0.5],
            atol=1e-15,
        )
        np.testing.assert_allclose(
            normalize_batch_rewards([1, 1, -1]), [2 / 3, 2 / 3, -4 / 3], atol=1e-12
        )

    def test_all_equal_batch_is_zero(self):
        np.testing.assert_array_equal(normalize_batch_rewards([1, 1]), [0.0, 0.0])

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            normalize_batch_rewards([1, 0])
        with pytest.raises(ValueError):
            normalize_batch_rewards([])

    def test_sign_preserved_on_random_batches(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            rewards = rng.choice([-1, 1], size=n)
            out = normalize_batch_rewards(rewards)
            if np.all(rewards == rewards[0]):
                np.testing.assert_array_equal(out, np.zeros(n))
            else:
                assert np.all(np.sign(out) == np.sign(rewards))


class TestUpdateBaseline:
    def _group(self, rewards):
        params = make_params(3, 1)
        trajs = [make_traj(params, 0, (0,), r, i) for i, r in enumerate(rewards)]
        return RolloutGroup(0, trajs)

    def test_first_update_from_zero(self):
        out = update_baseline({}, self._group([1, 1]))
        assert out[0] == pytest.approx(0.1, abs=1e-15)

    def test_fixed_point(self):
        out = update_baseline({0: 1.0}, self._group([1, 1, 1]))
        assert out[0] == 1.0

    def test_geometric_convergence(self):
        baselines = {0: 0.0}
        group = self._group([1, 1])
        for _ in range(40):
            baselines = update_baseline(baselines, group)
        assert baselines[0] == pytest.approx(1.0 - 0.9**40, abs=1e-12)


class TestKLExact:
    def test_identity_is_zero(self):
        rng = np.random.default_rng(1)
        params = make_params(4, 2, rng=rng)
        visited = [(0, ()), (0, (1,)), (0, (3,))]
        assert kl_exact(params, params.copy(), visited) == 0.0

    def test_hand_value(self):
        # 0.75*ln(1.5) + 0.25*ln(0.5) = 0.130812
        hand = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
        assert hand == pytest.approx(0.130812, abs=1e-6)
        params = make_params(2, 1)
        params.tables[0][0][0] = np.log([0.75, 0.25])
        ref = make_params(2, 1)
        assert kl_exact(params, ref, [(0, ())]) == pytest.approx(hand, abs=1e-12)

    def test_nonnegative_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            p = make_params(3, 1, rng=rng, scale=2.0)
            q = make_params(3, 1, rng=rng, scale=2.0)
            assert kl_exact(p, q, [(0, ())]) >= 0.0

    def test_distinct_prefixes_counted_once(self):
        rng = np.random.default_rng(3)
        p = make_params(3, 2, rng=rng)
        q = make_params(3, 2, rng=rng)
        once = kl_exact(p, q, [(0, ()), (0, (1,))])
        doubled = kl_exact(p, q, [(0, ()), (0, (1,)), (0, ())])
        assert once == pytest.approx(doubled, abs=1e-15)


class TestSurrogateLoss:
    def test_psr_ratio_one_identity(self):
        rng = np.random.default_rng(4)
        params = make_params(4, 3, rng=rng)
        traj = make_traj(params, 0, (1, 2, 0), reward=1)
        refs = ReferencePolicies(old_params=params.copy())
        loss = surrogate_loss(
            plain_config(Algorithm.PSR), [RolloutGroup(0, [traj])], params, refs
        )
        assert loss == pytest.approx(-np.mean(traj.token_probs), abs=1e-12)

    def test_nsr_is_psr_with_sign_flipped(self):
        rng = np.random.default_rng(5)
        params = make_params(4, 2, rng=rng)
        traj_neg = make_traj(params, 0, (3, 1), reward=-1)
        refs = ReferencePolicies(old_params=params.copy())
        loss = surrogate_loss(
            plain_config(Algorithm.NSR), [RolloutGroup(0, [traj_neg])], params, refs
        )
        assert loss == pytest.approx(+np.mean(traj_neg.token_probs), abs=1e-12)

    def test_clip_saturates_at_upper_bound(self):
        # pi(y)/pi_old(y) = 1.5 with A = +1 and eps = 0.2 -> uses 1.2
        params = make_params(2, 1)
        params.tables[0][0][0] = [math.log(0.6), math.log(0.4)]
        old = make_params(2, 1)
        old.tables[0][0][0] = [math.log(0.4), math.log(0.6)]
        traj = make_traj(old, 0, (0,), reward=1)
        refs = ReferencePolicies(old_params=old)
        loss = surrogate_loss(
            plain_config(Algorithm.REINFORCE), [RolloutGroup(0, [traj])], params, refs
        )
        assert loss == pytest.approx(-1.2 * 0.4, abs=1e-12)

    def test_missing_refs_rejected(self):
        rng = np.random.default_rng(6)
        params, groups = random_batch(rng)
        with pytest.raises(ValueError, match="reference"):
            surrogate_loss(plain_config(Algorithm.GRPO), groups, params, None)
        with pytest.raises(ValueError, match="ref_params"):
            surrogate_loss(
                plain_config(Algorithm.GRPO),
                groups,
                params,
                ReferencePolicies(old_params=params.copy()),
            )


class TestLossGradient:
    def test_uniform_psr_hand_values(self):
        # uniform V=4, sampled token 2, R=+1, T=1: descent 0.25*0.75 on the
        # sampled logit and -0.0625 on each other
        params = make_params(4, 1)
        traj = make_traj(params, 0, (2,), reward=1)
        refs = ReferencePolicies(old_params=params.copy())
        grad = loss_gradient(
            plain_config(Algorithm.PSR), [RolloutGroup(0, [traj])], params, refs
        )
        descent = -grad.tables[0][0][0]
        np.testing.assert_allclose(
            descent, [-0.0625, -0.0625, 0.1875, -0.0625], atol=1e-12
        )

    def test_uniform_nsr_is_exact_negation(self):
        params = make_params(4, 1)
        traj_pos = make_traj(params, 0, (2,), reward=1)
        traj_neg = make_traj(params, 0, (2,), reward=-1)
        refs = ReferencePolicies(old_params=params.copy())
        g_psr = loss_gradient(
            plain_config(Algorithm.PSR), [RolloutGroup(0, [traj_pos])], params, refs
        )
        g_nsr = loss_gradient(
            plain_config(Algorithm.NSR), [RolloutGroup(0, [traj_neg])], params, refs
        )
        np.testing.assert_array_equal(
            g_nsr.tables[0][0][0], -g_psr.tables[0][0][0]
        )

    def test_matches_finite_differences_spot(self):
        from rlvrlab.gradcheck import finite_difference_grad

        rng = np.random.default_rng(7)
        params, groups = random_batch(rng)
        refs = ReferencePolicies(old_params=params.copy())
        config = plain_config(Algorithm.REINFORCE, entropy_coef=1e-2)
        grad = loss_gradient(config, groups, params, refs)
        row = params.tables[0][0][0]

        def loss_at(values):
            saved = row.copy()
            row[...] = values
            try:
                return surrogate_loss(config, groups, params, refs)
            finally:
                row[...] = saved

        numeric = finite_difference_grad(loss_at, row.copy())
        np.testing.assert_allclose(grad.tables[0][0][0], numeric, atol=1e-8)

    def test_zero_at_unvisited_prefixes(self):
        rng = np.random.default_rng(8)
        params = make_params(3, 2, rng=rng)
        traj = make_traj(params, 0, (1, 1), reward=1)
        refs = ReferencePolicies(old_params=params.copy())
        grad = loss_gradient(
            plain_config(Algorithm.REINFORCE), [RolloutGroup(0, [traj])], params, refs
        )
        # level-1 rows other than prefix (1,) must be untouched
        np.testing.assert_array_equal(grad.tables[0][1][0], np.zeros(3))
        np.testing.assert_array_equal(grad.tables[0][1][2], np.zeros(3))
        assert np.any(grad.tables[0][1][1] != 0)


def batch_gradients_equal(a: LogitTable, b: LogitTable, tol=1e-10) -> bool:
    return all(
        np.max(np.abs(arr - b.tables[pid][t])) <= tol for pid, t, arr in a.iter_arrays()
    )


class TestIdentities:
    def test_reinforce_decomposes_into_psr_plus_nsr(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            params, groups = random_batch(rng)
            refs = ReferencePolicies(old_params=params.copy())
            g_r = loss_gradient(plain_config(Algorithm.REINFORCE), groups, params, refs)
            g_p = loss_gradient(plain_config(Algorithm.PSR), groups, params, refs)
            g_n = loss_gradient(plain_config(Algorithm.NSR), groups, params, refs)
            total = g_p.copy()
            total.add_scaled(g_n, 1.0)
            assert batch_gradients_equal(g_r, total)

    def test_w_reinforce_at_lambda_one_equals_reinforce(self):
        rng = np.random.default_rng(10)
        params, groups = random_batch(rng)
        refs = ReferencePolicies(old_params=params.copy())
        # exact equality, with the entropy bonus at its default
        g_w = loss_gradient(
            ObjectiveConfig.default_for(Algorithm.W_REINFORCE, lam=1.0),
            groups, params, refs,
        )
        g_r = loss_gradient(
            ObjectiveConfig.default_for(Algorithm.REINFORCE), groups, params, refs
        )
        for pid, t, arr in g_w.iter_arrays():
            np.testing.assert_array_equal(arr, g_r.tables[pid][t])

    def test_sign_flip_swaps_psr_and_nsr(self):
        rng = np.random.default_rng(11)
        params, groups = random_batch(rng)
        flipped = [
            RolloutGroup(
                g.prompt_id,
                [
                    Trajectory(t.prompt_id, t.tokens, t.token_probs,
                               t.rollout_index, -t.reward)
                    for t in g.trajectories
                ],
            )
            for g in groups
        ]
        refs = ReferencePolicies(old_params=params.copy())
        g_psr = loss_gradient(plain_config(Algorithm.PSR), groups, params, refs)
        g_nsr = loss_gradient(plain_config(Algorithm.NSR), flipped, params, refs)
        for pid, t, arr in g_psr.iter_arrays():
            np.testing.assert_allclose(arr, -g_nsr.tables[pid][t], atol=1e-15)

    def test_clipping_zeroes_or_keeps_gradient(self):
        # single token: the clipped-config gradient row equals the unclipped
        # one when the ratio is in range, and is zero when it saturates
        for delta, a_sign in [(0.9, 1), (0.9, -1), (-0.9, 1), (-0.9, -1)]:
            params = make_params(2, 1)
            params.tables[0][0][0] = [delta, 0.0]
            old = make_params(2, 1)
            traj = make_traj(old, 0, (0,), reward=a_sign)
            refs = ReferencePolicies(old_params=old)
            algorithm = Algorithm.PSR if a_sign > 0 else Algorithm.NSR
            clipped = loss_gradient(
                plain_config(algorithm), [RolloutGroup(0, [traj])], params, refs
            ).tables[0][0][0]
            wide = loss_gradient(
                plain_config(algorithm, clip_epsilon=100.0),
                [RolloutGroup(0, [traj])], params, refs,
            ).tables[0][0][0]
            saturated = np.all(clipped == 0.0)
            matches = np.array_equal(clipped, wide)
            assert saturated or matches
            assert not np.all(wide == 0.0)

    def test_grpo_advantages_keep_reward_signs(self):
        rng = np.random.default_rng(12)
        config = plain_config(Algorithm.GRPO)
        params = make_params(3, 1)
        checked = 0
        for _ in range(1000):
            n = int(rng.integers(2, 10))
            rewards = rng.choice([-1, 1], size=n)
            trajs = [make_traj(params, 0, (0,), int(r), i)
                     for i, r in enumerate(rewards)]
            adv = compute_advantages(config, RolloutGroup(0, trajs)).values
            if np.all(rewards == rewards[0]):
                np.testing.assert_array_equal(adv, np.zeros(n))
            else:
                assert np.all(np.sign(adv) == np.sign(rewards))
                checked += 1
        assert checked > 500

    def test_psr_gradient_vanishes_as_confidence_grows(self):
        magnitudes = []
        for p in (0.5, 0.9, 0.99, 0.999):
            params = make_params(2, 1)
            params.tables[0][0][0] = [math.log(p), math.log(1 - p)]
            traj = make_traj(params, 0, (0,), reward=1)
            refs = ReferencePolicies(old_params=params.copy())
            grad = loss_gradient(
                plain_config(Algorithm.PSR), [RolloutGroup(0, [traj])], params, refs
            )
            magnitudes.append(abs(grad.tables[0][0][0][0]))
            assert magnitudes[-1] == pytest.approx(p * (1 - p), abs=1e-12)
        assert magnitudes == sorted(magnitudes, reverse=True)

    def test_visited_prefixes_helper(self):
        params = make_params(3, 2)
        t1 = make_traj(params, 0, (1, 2), 1)
        t2 = make_traj(params, 0, (1, 0), -1)
        seen = visited_prefixes([RolloutGroup(0, [t1, t2])])
        assert seen == {(0, ()), (0, (1,))}
