import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from challenger.baselines import (
    VARIANTS,
    AdversarialConfig,
    fgsm_perturb,
    pgd_perturb,
    random_select_features,
    train_baseline,
)
from challenger.challenger import ChallengerConfig
from challenger.data import synth_blobs
from challenger.metrics import accuracy
from challenger.network import Dense, ReLU, build_network, cross_entropy, forward, loss_and_input_grad
from challenger.tensor import make_rng


def blobs():
    return synth_blobs(2, 10, 2, 10.0, seed=1)


def mlp(seed=0):
    return build_network([Dense(2, 16), ReLU(), Dense(16, 2)], seed)


class TestRandomSelection:
    def test_full_and_empty(self):
        rng = make_rng(0)
        np.testing.assert_array_equal(random_select_features(6, 6, rng), np.arange(6))
        assert random_select_features(6, 0, rng).size == 0

    def test_uniform(self):
        rng = make_rng(5)
        counts = np.bincount([random_select_features(10, 1, rng)[0] for _ in range(10_000)], minlength=10)
        assert np.all(np.abs(counts / 10_000 - 0.1) <= 0.1 * 0.1)

    @given(st.integers(1, 40), st.data())
    def test_distinct(self, d, data):
        n = data.draw(st.integers(0, d))
        picked = random_select_features(d, n, make_rng(data.draw(st.integers(0, 2**31))))
        assert len(set(picked.tolist())) == n and (picked < d).all()

    def test_too_many(self):
        with pytest.raises(ValueError):
            random_select_features(3, 4, make_rng(0))


class TestFGSM:
    def test_sign_step(self):
        np.testing.assert_allclose(fgsm_perturb([0.5], [-2.0], 0.1), [0.4], rtol=0, atol=1e-16)

    def test_zero_gradient(self):
        np.testing.assert_array_equal(fgsm_perturb([0.3, 0.7], [0.0, 0.0], 0.1), [0.3, 0.7])

    @given(st.integers(0, 2**31), st.floats(0.0, 1.0))
    def test_budget(self, seed, eps):
        rng = make_rng(seed)
        x, g = rng.random(7), rng.standard_normal(7)
        assert np.abs(fgsm_perturb(x, g, eps) - x).max() <= eps + 1e-15


def trained_toy():
    net, _ = train_baseline(mlp(1), blobs(), "plain", 150, batch_size=8, lr=0.01, seed=0)
    return net


class TestPGD:
    def test_one_step_is_fgsm(self):
        net = mlp(2)
        x, y = blobs().inputs[:6], blobs().labels[:6]
        _, grad = loss_and_input_grad(net, x, y)
        pgd = pgd_perturb(net, x, y, AdversarialConfig(eps=0.07, pgd_step=0.07, pgd_iters=1))
        np.testing.assert_array_equal(pgd, fgsm_perturb(x, grad, 0.07))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_budget(self, seed):
        rng = make_rng(seed)
        net = mlp(int(rng.integers(0, 100)))
        x, y = rng.random((3, 2)), rng.integers(0, 2, 3)
        cfg = AdversarialConfig(eps=float(rng.uniform(0, 0.3)), pgd_step=float(rng.uniform(0.01, 0.2)),
                                pgd_iters=int(rng.integers(1, 6)))
        assert np.abs(pgd_perturb(net, x, y, cfg) - x).max() <= cfg.eps + 1e-12

    def test_increases_loss(self):
        net = trained_toy()
        x, y = blobs().inputs, blobs().labels
        adv = pgd_perturb(net, x, y, AdversarialConfig(eps=0.1, pgd_step=0.025, pgd_iters=7))
        assert cross_entropy(forward(net, adv), y) >= cross_entropy(forward(net, x), y)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            pgd_perturb(mlp(), np.zeros((1, 2)), [0], AdversarialConfig(pgd_iters=0))


class TestTrainBaseline:
    def test_plain_separates_blobs(self):
        assert accuracy(forward(trained_toy(), blobs().inputs), blobs().labels) == 1.0

    def test_random_with_no_features_is_plain(self):
        cfg = ChallengerConfig(alpha=0.5, beta=0.5, n_features=0, top_k=2)
        rand, _ = train_baseline(mlp(), blobs(), "random_challenge", 40, cfg, batch_size=8, seed=3)
        plain, _ = train_baseline(mlp(), blobs(), "plain", 40, batch_size=8, seed=3)
        np.testing.assert_array_equal(rand.params[0]["W"], plain.params[0]["W"])

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_reproducible(self, variant):
        cfg = ChallengerConfig(alpha=0.2, beta=0.2, n_features=1, top_k=2)
        a, _ = train_baseline(mlp(), blobs(), variant, 20, cfg, batch_size=8, seed=4)
        b, _ = train_baseline(mlp(), blobs(), variant, 20, cfg, batch_size=8, seed=4)
        np.testing.assert_array_equal(a.params[2]["W"], b.params[2]["W"])

    def test_variants_see_same_batches(self):
        cfg = ChallengerConfig(alpha=0.2, beta=0.2, n_features=1, top_k=2)
        orders = [[r.batch for r in train_baseline(mlp(), blobs(), v, 12, cfg, batch_size=8, seed=6)[1]]
                  for v in VARIANTS]
        assert all(o == orders[0] for o in orders)

    def test_adversarial_share_matches_challenge_share(self):
        cfg = ChallengerConfig(n_features=1, top_k=2)
        _, log = train_baseline(mlp(), blobs(), "pgd", 3, cfg, batch_size=8, seed=0)
        # batches of 8, 8, 4 -> 2 * floor(B / 4) leading samples perturbed
        assert [len(r.modified) for r in log] == [4, 4, 2]
        assert all(r.modified == r.batch[:len(r.modified)] for r in log)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            train_baseline(mlp(), blobs(), "mixup", 1)
