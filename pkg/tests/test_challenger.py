import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from challenger.baselines import train_baseline
from challenger.challenger import (
    ChallengerConfig,
    ModificationSet,
    StepLog,
    apply_challenges,
    challenge_a,
    challenge_b,
    challenger_perturbation,
    choose_rank,
    ranked_classes,
    select_features,
    train_with_challenger,
)
from challenger.data import synth_blobs
from challenger.metrics import accuracy
from challenger.network import Dense, ReLU, build_network, forward
from challenger.tensor import make_rng


def blobs_mlp(seed=0):
    return build_network([Dense(2, 16), ReLU(), Dense(16, 2)], seed)


class TestChooseRank:
    def test_single_class_pool(self):
        rng = make_rng(0)
        assert {choose_rank(np.zeros((3, 4)), 1, rng) for _ in range(50)} == {1}

    def test_uniform(self):
        rng = make_rng(11)
        draws = np.array([choose_rank(np.zeros((1, 10)), 5, rng) for _ in range(10_000)])
        freq = np.bincount(draws, minlength=6)[1:] / draws.size
        assert np.all(np.abs(freq - 0.2) <= 0.05 * 0.2)

    def test_reproducible(self):
        r1, r2 = make_rng(3), make_rng(3)
        first = [choose_rank(np.zeros((1, 5)), 5, r1) for _ in range(100)]
        assert first == [choose_rank(np.zeros((1, 5)), 5, r2) for _ in range(100)]
        assert set(first) == {1, 2, 3, 4, 5}

    def test_pool_larger_than_classes(self):
        with pytest.raises(ValueError):
            choose_rank(np.zeros((1, 3)), 4, make_rng(0))

    def test_ranked_classes_per_sample(self):
        logits = np.array([[0.1, 0.9, 0.5], [0.7, 0.2, 0.7]])
        np.testing.assert_array_equal(ranked_classes(logits, 1), [1, 0])
        np.testing.assert_array_equal(ranked_classes(logits, 2), [2, 2])
        np.testing.assert_array_equal(ranked_classes(logits, 3), [0, 1])


class TestSelectFeatures:
    r = np.array([0.9, -0.5, 0.1, 0.7])

    def test_highest(self):
        assert set(select_features(self.r, 2, "highest")) == {0, 3}

    def test_lowest(self):
        assert set(select_features(self.r, 2, "lowest")) == {1, 2}

    def test_all(self):
        for mode in ("highest", "lowest"):
            assert set(select_features(self.r, 4, mode)) == {0, 1, 2, 3}

    def test_multi_dimensional_map_uses_flat_indices(self):
        r = np.zeros((1, 2, 3))
        r[0, 1, 2] = 5.0
        assert list(select_features(r, 1, "highest")) == [5]

    def test_too_many(self):
        with pytest.raises(ValueError):
            select_features(self.r, 5, "highest")


class TestChallenges:
    x = np.array([0.5, 0.2, 0.9])

    def test_a(self):
        np.testing.assert_allclose(challenge_a(self.x, [0, 2], 0.1), [0.4, 0.2, 0.8], rtol=0, atol=1e-15)

    def test_b(self):
        np.testing.assert_allclose(challenge_b(self.x, [1], 0.3), [0.5, 0.5, 0.9], rtol=0, atol=1e-15)

    def test_identities(self):
        np.testing.assert_array_equal(challenge_a(self.x, [0, 2], 0.0), self.x)
        np.testing.assert_array_equal(challenge_b(self.x, [0, 2], 0.0), self.x)
        np.testing.assert_array_equal(challenge_a(self.x, [], 0.7), self.x)

    def test_input_not_mutated(self):
        x = self.x.copy()
        challenge_a(x, [0], 1.0)
        np.testing.assert_array_equal(x, self.x)

    def test_clipping(self):
        np.testing.assert_array_equal(challenge_b(self.x, [2], 0.5, clip=True), [0.5, 0.2, 1.0])
        np.testing.assert_array_equal(challenge_a(self.x, [1], 0.5, clip=True), [0.5, 0.0, 0.9])

    @given(st.lists(st.integers(-64, 64), min_size=1, max_size=10), st.integers(0, 32), st.data())
    def test_additive_inverse(self, values, c, data):
        x = np.array(values, dtype=float) / 16
        m = data.draw(st.sets(st.integers(0, len(values) - 1)))
        amount = c / 8
        np.testing.assert_array_equal(challenge_b(challenge_a(x, sorted(m), amount), sorted(m), amount), x)


def full_mods(batch, n_features):
    return ModificationSet([np.arange(n_features)] * batch, ["highest"] * batch)


class TestApplyChallenges:
    def test_batch_of_eight(self):
        batch = np.full((8, 3), 0.5)
        out, positions = apply_challenges(batch, full_mods(8, 3), ChallengerConfig(alpha=0.25, beta=0.25))
        np.testing.assert_array_equal(out[:2], 0.25)
        np.testing.assert_array_equal(out[2:4], 0.75)
        np.testing.assert_array_equal(out[4:], 0.5)
        np.testing.assert_array_equal(positions, [0, 1, 2, 3])

    def test_batch_of_five(self):
        batch = np.full((5, 2), 0.5)
        out, positions = apply_challenges(batch, full_mods(5, 2), ChallengerConfig(alpha=0.25, beta=0.25))
        assert (out[0] < 0.5).all() and (out[1] > 0.5).all() and (out[2:] == 0.5).all()
        assert list(positions) == [0, 1]

    def test_zero_strength_is_identity(self):
        batch = make_rng(0).random((6, 4))
        out, _ = apply_challenges(batch, full_mods(6, 4), ChallengerConfig(alpha=0.0, beta=0.0))
        np.testing.assert_array_equal(out, batch)


def blobs():
    return synth_blobs(2, 10, 2, 10.0, seed=1)


class TestTraining:
    def test_plain_oracle_separates_blobs(self):
        trained, _ = train_baseline(blobs_mlp(), blobs(), "plain", 200, batch_size=8, lr=0.01, seed=0)
        assert accuracy(forward(trained, blobs().inputs), blobs().labels) == 1.0

    def test_challenger_separates_blobs(self):
        cfg = ChallengerConfig(alpha=0.1, beta=0.1, n_features=1, top_k=2)
        trained, log = train_with_challenger(blobs_mlp(), blobs(), cfg, 200, batch_size=8, lr=0.01, seed=0)
        assert accuracy(forward(trained, blobs().inputs), blobs().labels) == 1.0
        assert len(log) == 200 and all(r.rank_k in (1, 2) for r in log)

    def test_degenerate_config_is_plain_training(self):
        cfg = ChallengerConfig(alpha=0.0, beta=0.0, n_features=0, top_k=2)
        chal, clog = train_with_challenger(blobs_mlp(3), blobs(), cfg, 60, batch_size=8, seed=5)
        plain, plog = train_baseline(blobs_mlp(3), blobs(), "plain", 60, batch_size=8, seed=5)
        for a, b in zip(chal.params, plain.params):
            if a is not None:
                np.testing.assert_array_equal(a["W"], b["W"])
        assert [r.loss for r in clog] == [r.loss for r in plog]

    def test_deterministic(self):
        cfg = ChallengerConfig(alpha=0.2, beta=0.2, n_features=1, top_k=2)
        a, la = train_with_challenger(blobs_mlp(), blobs(), cfg, 30, batch_size=8, seed=2)
        b, lb = train_with_challenger(blobs_mlp(), blobs(), cfg, 30, batch_size=8, seed=2)
        np.testing.assert_array_equal(a.params[2]["W"], b.params[2]["W"])
        assert [r.modified for r in la] == [r.modified for r in lb]

    def test_input_network_untouched(self):
        net = blobs_mlp()
        before = net.params[0]["W"].copy()
        train_with_challenger(net, blobs(), ChallengerConfig(n_features=1, top_k=2), 5, batch_size=8)
        np.testing.assert_array_equal(net.params[0]["W"], before)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            train_with_challenger(blobs_mlp(), blobs(), ChallengerConfig(top_k=3), 1)
        with pytest.raises(ValueError):
            train_with_challenger(blobs_mlp(), blobs(), ChallengerConfig(n_features=3, top_k=1), 1)
        with pytest.raises(ValueError):
            train_with_challenger(blobs_mlp(), blobs(), ChallengerConfig(split=(0.5, 0.5, 0.5), top_k=1), 1)

    def test_step_log_csv(self, tmp_path):
        cfg = ChallengerConfig(alpha=0.2, beta=0.2, n_features=1, top_k=2)
        _, log = train_with_challenger(blobs_mlp(), blobs(), cfg, 3, batch_size=8, seed=0)
        path = tmp_path / "log.csv"
        log.write_csv(path, "seed=0")
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=0"
        assert lines[1] == ",".join(StepLog.COLUMNS)
        step, loss, rank, modified = lines[2].split(",")
        assert step == "0" and float(loss) == log[0].loss and int(rank) == log[0].rank_k
        assert [int(i) for i in modified.split()] == list(log[0].modified)


class TestPerturbationInvariants:
    def setup_method(self):
        self.net = build_network([Dense(6, 8), ReLU(), Dense(8, 4)], 1)
        self.x = make_rng(2).uniform(0.1, 0.9, size=(9, 6))
        self.y = make_rng(3).integers(0, 4, 9)

    def test_half_unmodified_and_exact_feature_count(self):
        cfg = ChallengerConfig(alpha=math.sqrt(2) / 10, beta=math.pi / 20, n_features=2, top_k=3)
        x_tilde, rank, positions = challenger_perturbation(cfg)(self.net, self.x, self.y, make_rng(0))
        unchanged = [s for s in range(9) if np.array_equal(x_tilde[s], self.x[s])]
        assert len(unchanged) >= 9 / 2 and list(positions) == [0, 1, 2, 3]
        for s in positions:
            assert np.count_nonzero(x_tilde[s] != self.x[s]) == 2
        assert 1 <= rank <= 3

    def test_selection_is_per_sample(self):
        cfg = ChallengerConfig(alpha=0.3, beta=0.3, n_features=2, top_k=1)
        perturb = challenger_perturbation(cfg)
        other = self.x.copy()
        other[5:] = make_rng(9).random((4, 6))
        a, _, _ = perturb(self.net, self.x, self.y, make_rng(1))
        b, _, _ = perturb(self.net, other, self.y, make_rng(1))
        np.testing.assert_allclose(a[:4], b[:4], rtol=0, atol=1e-15)

    def test_selection_follows_relevance(self):
        # a linear model whose class-0 relevance is a_j * w_j0 / sum
        net = build_network([Dense(4, 2)], 0)
        net.params[0]["W"] = np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 0.0], [-1.0, 0.0]])
        x = np.full((4, 4), 0.5)
        y = np.zeros(4, dtype=int)
        cfg = ChallengerConfig(alpha=0.5, beta=0.5, n_features=1, top_k=1)
        x_tilde, _, _ = challenger_perturbation(cfg)(net, x, y, make_rng(4))
        changed = [int(np.flatnonzero(x_tilde[s] != x[s])[0]) for s in range(1)]
        # top prediction is class 0 (logit 1.5 vs 0.5); highest relevance is feature 2, lowest feature 3
        assert changed[0] in (2, 3)
