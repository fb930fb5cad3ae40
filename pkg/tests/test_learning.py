import numpy as np
import pytest

from objseek.errors import (EmptyEpisode, InsufficientData, InvalidConfig,
                            ShapeMismatch)
from objseek.gallery import generate_synthetic
from objseek.learning import (AdamState, CooccurrenceMatrix, PpoConfig,
                              TrajectoryBuffer, adam_step, build_cooccurrence,
                              compute_advantages, config_from_dict, ppo_update,
                              shaping_loss, shaping_target, train)
from objseek.policy import (init_policy_params, init_value_params,
                            policy_forward)

from conftest import make_dataset, make_image


@pytest.fixture()
def man_tree_dog_ds():
    vocab = ("man", "tree", "dog")
    images = [
        make_image("i1", [[1.0, 0.0]], [0, 1], ["man"]),
        make_image("i2", [[0.0, 1.0]], [2], ["dog"]),
    ]
    return make_dataset(vocab, np.eye(3)[:, :2], images, dim=2)


class TestCooccurrence:
    def test_single_image_counts(self):
        ds = make_dataset(("man", "tree"), np.eye(2), [
            make_image("i1", [[1.0, 0.0]], [0, 1], ["man"])])
        cooc = build_cooccurrence(ds, [0])
        row = cooc.counts[cooc.word_index["man"]]
        assert row.tolist() == [1, 1]

    def test_token_multiplicity_counts_once_per_image(self):
        ds = make_dataset(("man", "tree"), np.eye(2), [
            make_image("i1", [[1.0, 0.0]], [0], ["man man man", "a man"])])
        cooc = build_cooccurrence(ds, [0])
        assert cooc.counts[cooc.word_index["man"]].tolist() == [1, 0]

    def test_absent_word_is_missing(self, small_ds):
        cooc = build_cooccurrence(small_ds, range(small_ds.n_images))
        assert "notaword" not in cooc.word_index

    def test_matches_naive_recount(self):
        ds = generate_synthetic(30, 12, 6, 3, (2, 4), 4, 0.2, seed=13)
        idx = list(range(30))
        cooc = build_cooccurrence(ds, idx)
        from objseek.encoders import tokenize
        for w, row in zip(cooc.words, cooc.counts):
            for a in range(ds.vocab_size):
                naive = 0
                for i in idx:
                    img = ds.images[i]
                    toks = set()
                    for c in img.captions:
                        toks.update(tokenize(c))
                    naive += int(w in toks and a in img.objects)
                assert row[a] == naive


class TestShapingTarget:
    def test_hand_case(self, man_tree_dog_ds):
        cooc = build_cooccurrence(man_tree_dog_ds, [0, 1])
        target = shaping_target(["man"], cooc)
        np.testing.assert_allclose(target, [0.5, 0.5, 0.0])

    def test_oov_query_uniform(self, man_tree_dog_ds):
        cooc = build_cooccurrence(man_tree_dog_ds, [0, 1])
        np.testing.assert_allclose(shaping_target(["unknown words"], cooc),
                                   np.full(3, 1 / 3))

    def test_sums_to_one(self, small_ds):
        cooc = build_cooccurrence(small_ds, range(small_ds.n_images))
        rng = np.random.default_rng(0)
        for _ in range(20):
            words = rng.choice(small_ds.vocab, size=rng.integers(1, 4))
            target = shaping_target([" ".join(words)], cooc)
            assert target.sum() == pytest.approx(1.0, abs=1e-9)

    def test_matches_bruteforce_conditional(self):
        # Independent oracle: count (image, token) pairs directly; exact
        # integer equality before normalization.
        from objseek.encoders import tokenize
        from objseek.learning import shaping_scores
        ds = generate_synthetic(30, 10, 6, 3, (2, 4), 4, 0.2, seed=17)
        idx = list(range(30))
        cooc = build_cooccurrence(ds, idx)
        rng = np.random.default_rng(1)
        for _ in range(50):
            words = list(rng.choice(ds.vocab, size=rng.integers(1, 4)))
            queries = [" ".join(words)]
            tokens = [t for q in queries for t in tokenize(q)]
            brute = np.zeros(ds.vocab_size, dtype=np.int64)
            for a in range(ds.vocab_size):
                for i in idx:
                    img = ds.images[i]
                    toks = set()
                    for c in img.captions:
                        toks.update(tokenize(c))
                    if a in img.objects:
                        brute[a] += sum(1 for t in tokens if t in toks)
            np.testing.assert_array_equal(shaping_scores(queries, cooc), brute)
            if brute.sum() > 0:
                np.testing.assert_allclose(shaping_target(queries, cooc),
                                           brute / brute.sum(), atol=1e-12)


class TestShapingLoss:
    def test_zero_when_equal(self):
        p = np.array([[0.25, 0.75]])
        loss, grad = shaping_loss(p, p)
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_one_hot_vs_uniform(self):
        targets = np.array([[1.0, 0.0, 0.0, 0.0]])
        probs = np.full((1, 4), 0.25)
        loss, grad = shaping_loss(targets, probs)
        assert loss == pytest.approx(0.75)
        np.testing.assert_allclose(grad, 2 * (probs - targets))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t = rng.dirichlet(np.ones(5), size=3)
            p = rng.dirichlet(np.ones(5), size=3)
            assert shaping_loss(t, p)[0] >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            shaping_loss(np.zeros((1, 3)), np.zeros((1, 4)))


class TestAdvantages:
    def test_undiscounted_suffix_sums(self):
        adv, ret = compute_advantages([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 1.0, 1.0)
        np.testing.assert_allclose(ret, [3.0, 2.0, 1.0])
        np.testing.assert_allclose(adv, [3.0, 2.0, 1.0])

    def test_all_zero(self):
        adv, ret = compute_advantages([0.0, 0.0], [0.0, 0.0], 0.9, 0.8)
        assert np.all(adv == 0) and np.all(ret == 0)

    def test_matches_recursive_oracle(self):
        rng = np.random.default_rng(3)
        r = rng.standard_normal(5)
        v = rng.standard_normal(5)
        gamma, lam = 0.9, 0.8
        adv, ret = compute_advantages(r, v, gamma, lam)
        # direct recursion from the definition
        expected = np.zeros(5)
        for t in range(4, -1, -1):
            next_v = v[t + 1] if t + 1 < 5 else 0.0
            next_a = expected[t + 1] if t + 1 < 5 else 0.0
            expected[t] = (r[t] + gamma * next_v - v[t]) + gamma * lam * next_a
        np.testing.assert_allclose(adv, expected, atol=1e-12)
        np.testing.assert_allclose(ret, expected + v, atol=1e-12)

    def test_empty_episode(self):
        with pytest.raises(EmptyEpisode):
            compute_advantages([], [], 0.9, 0.9)


class TestAdam:
    def _params(self):
        return init_value_params(3, np.random.default_rng(0), hidden=2)

    def test_zero_gradient_no_change(self):
        p = self._params()
        before = {k: a.copy() for k, a in p.arrays().items()}
        zero = type(p)(**{k: np.zeros_like(a) for k, a in p.arrays().items()})
        adam_step(p, zero, AdamState(), lr=0.1)
        for k, a in p.arrays().items():
            np.testing.assert_array_equal(a, before[k])

    def test_first_step_hand_formula(self):
        # With constant gradient g, step 1 moves by lr * g / (|g| + eps).
        p = self._params()
        before = {k: a.copy() for k, a in p.arrays().items()}
        grads = type(p)(**{k: np.full_like(a, 0.5) for k, a in p.arrays().items()})
        adam_step(p, grads, AdamState(), lr=0.01)
        for k, a in p.arrays().items():
            expected = before[k] - 0.01 * 0.5 / (0.5 + 1e-8)
            np.testing.assert_allclose(a, expected, atol=1e-12)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            p = self._params()
            st = AdamState()
            g = type(p)(**{k: np.full_like(a, 0.3) for k, a in p.arrays().items()})
            for _ in range(5):
                adam_step(p, g, st, lr=0.05)
            results.append(np.concatenate([a.ravel() for a in p.arrays().values()]))
        np.testing.assert_array_equal(results[0], results[1])

    def test_shape_mismatch(self):
        p = self._params()
        bad = type(p)(w1=np.zeros((5, 5)), b1=np.zeros(2), w2=np.zeros((2, 1)),
                      b2=np.zeros(1))
        with pytest.raises(ShapeMismatch):
            adam_step(p, bad, AdamState(), lr=0.1)


def fill_buffer(buf, policy, states, targets, n_steps, n_actions=2,
                rewards=None, episode_len=4):
    for i in range(n_steps):
        s = states[i % len(states)]
        probs, _ = policy_forward(s, policy)
        acts = np.argsort(-probs)[:n_actions]
        lp = float(np.log(probs[acts]).sum())
        r = 0.0 if rewards is None else rewards[i % len(rewards)]
        buf.add(s, acts, lp, 0.0, r, targets[i % len(targets)],
                done=(i % episode_len == episode_len - 1))


class TestPpoUpdate:
    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.v = 6
        self.ds = 9
        self.policy = init_policy_params(self.ds, self.v, self.rng, hidden=16)
        self.value = init_value_params(self.ds, self.rng, hidden=16)
        self.states = self.rng.standard_normal((4, self.ds))
        self.targets = self.rng.dirichlet(np.ones(self.v), size=4)

    def test_ratios_are_one_at_theta_old(self):
        buf = TrajectoryBuffer()
        fill_buffer(buf, self.policy, self.states, self.targets, 40)
        probs, _ = policy_forward(np.stack(buf.states), self.policy)
        hot = np.zeros((40, self.v))
        for i, a in enumerate(buf.actions):
            hot[i, a] = 1.0
        ratios = np.exp((hot * np.log(probs)).sum(1) - np.array(buf.log_probs))
        assert np.abs(ratios - 1.0).max() < 1e-6

    def test_insufficient_data(self):
        buf = TrajectoryBuffer()
        fill_buffer(buf, self.policy, self.states, self.targets, 10)
        with pytest.raises(InsufficientData):
            ppo_update(buf, self.policy, self.value, PpoConfig(n_s=600))

    def test_zero_advantage_zero_alpha_zero_entropy_is_noop(self):
        cfg = PpoConfig(alpha=0.0, entropy_coef=0.0, n_s=40)
        buf = TrajectoryBuffer()
        fill_buffer(buf, self.policy, self.states, self.targets, 40)
        before = {k: a.copy() for k, a in self.policy.arrays().items()}
        ppo_update(buf, self.policy, self.value, cfg, rng=np.random.default_rng(1))
        # rewards and values are all zero, so every advantage is zero and the
        # clipped surrogate contributes nothing; the policy must not move.
        for k, a in self.policy.arrays().items():
            np.testing.assert_array_equal(a, before[k])

    def test_buffer_cleared_after_update(self):
        cfg = PpoConfig(alpha=0.0, n_s=40)
        buf = TrajectoryBuffer()
        fill_buffer(buf, self.policy, self.states, self.targets, 40)
        ppo_update(buf, self.policy, self.value, cfg, rng=np.random.default_rng(1))
        assert buf.n_rounds == 0

    def test_shaping_dominates_convergence(self):
        cfg = PpoConfig(alpha=1e6, n_s=120)
        p_opt, v_opt = AdamState(), AdamState()
        urng = np.random.default_rng(2)
        for _ in range(120):
            buf = TrajectoryBuffer()
            fill_buffer(buf, self.policy, self.states, self.targets, 120)
            ppo_update(buf, self.policy, self.value, cfg,
                       policy_opt=p_opt, value_opt=v_opt, rng=urng)
        dev = max(np.abs(policy_forward(s, self.policy)[0] - t).max()
                  for s, t in zip(self.states, self.targets))
        assert dev < 0.05

    def test_policy_gradient_direction_on_bandit(self):
        # One-state, one-step episodes with alpha=0 and a huge clip window:
        # the update must increase the probability of the rewarded action.
        cfg = PpoConfig(alpha=0.0, entropy_coef=0.0, clip_epsilon=0.999,
                        gamma=1.0, gae_lambda=1.0, n_s=64, epochs_per_update=1,
                        minibatch=64)
        state = np.ones(self.ds)
        probs0, _ = policy_forward(state, self.policy)
        buf = TrajectoryBuffer()
        rewarded = 2
        for i in range(64):
            # alternate good/bad action so advantages have both signs
            act = rewarded if i % 2 == 0 else 5
            probs, _ = policy_forward(state, self.policy)
            buf.add(state, np.array([act]), float(np.log(probs[act])), 0.0,
                    1.0 if act == rewarded else -1.0,
                    np.full(self.v, 1 / self.v), done=True)
        ppo_update(buf, self.policy, self.value, cfg, rng=np.random.default_rng(3))
        probs1, _ = policy_forward(state, self.policy)
        assert probs1[rewarded] > probs0[rewarded]
        assert probs1[5] < probs0[5]


class TestTrain:
    def test_zero_epochs_returns_initialization(self, mid_ds):
        cfg = PpoConfig(total_epochs=0, hidden=8)
        res = train(mid_ds, cfg, seed=0)
        rng = np.random.default_rng(0)
        expected_p = init_policy_params(mid_ds.feature_dim + mid_ds.vocab_size,
                                        mid_ds.vocab_size, rng, 8)
        for a, b in zip(res.policy.arrays().values(), expected_p.arrays().values()):
            np.testing.assert_array_equal(a, b)
        assert res.log == []

    def test_tiny_run_logs_finite_losses(self, mid_ds):
        cfg = PpoConfig(total_epochs=2, n_s=60, horizon=6, n_actions=5,
                        hidden=32, eval_every=2, eval_targets=20, eval_rounds=4)
        res = train(mid_ds, cfg, seed=1)
        assert len(res.log) == 2
        for rec in res.log:
            assert np.isfinite(rec["mean_reward"])
            assert np.isfinite(rec["loss_ppo"])
            assert np.isfinite(rec["loss_shaping"])
        assert res.log[-1]["r_at_10_eval"] is not None

    def test_bit_reproducible(self, mid_ds):
        cfg = PpoConfig(total_epochs=2, n_s=50, horizon=5, n_actions=4,
                        hidden=16, eval_every=0)
        a = train(mid_ds, cfg, seed=7)
        b = train(mid_ds, cfg, seed=7)
        assert a.log == b.log
        for x, y in zip(a.policy.arrays().values(), b.policy.arrays().values()):
            np.testing.assert_array_equal(x, y)

    def test_dual_dist_layout_trains(self, mid_ds):
        cfg = PpoConfig(total_epochs=1, n_s=30, horizon=4, n_actions=3,
                        hidden=16, eval_every=1, eval_targets=10,
                        eval_rounds=2, state_layout="dual_dist")
        res = train(mid_ds, cfg, seed=0)
        assert res.policy.d_state == 2 * mid_ds.vocab_size
        assert np.isfinite(res.log[0]["mean_reward"])

    def test_terminal_reward_mode(self, mid_ds):
        cfg = PpoConfig(total_epochs=1, n_s=30, horizon=4, n_actions=3,
                        hidden=16, eval_every=0, reward_mode="terminal")
        res = train(mid_ds, cfg, seed=0)
        assert np.isfinite(res.log[0]["loss_ppo"])


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(InvalidConfig, match="unknown config keys"):
            config_from_dict({"alpha": 5.0, "bogus": 1})

    def test_validation(self):
        with pytest.raises(InvalidConfig):
            PpoConfig(clip_epsilon=1.5).validate()
        with pytest.raises(InvalidConfig):
            PpoConfig(gamma=0.0).validate()
        with pytest.raises(InvalidConfig):
            PpoConfig(alpha=-1.0).validate()
