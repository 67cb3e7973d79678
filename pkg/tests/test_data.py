import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfl_lab.analysis import estimate_eps, optimum_oracle
from sfl_lab.data import (ClientShard, EpochSampler, PartitionError, PartitionSpec,
                          balanced_dirichlet_partition, build_shards, dirichlet_partition, load_csv,
                          local_iterations, make_binary_targets, make_classification,
                          make_regression_targets, sample_batch, save_csv, shared_tau)
from sfl_lab.models import Batch, SplitLogistic, SplitParams, SplitRidge
from sfl_lab.numkit import derive_stream


def _labels(classes=10, per=30):
    return np.repeat(np.arange(classes), per)


def _max_class_fraction(parts, labels):
    fr = []
    for p in parts:
        counts = np.bincount(labels[p], minlength=labels.max() + 1)
        fr.append(counts.max() / len(p))
    return float(np.mean(fr))


class TestClassification:
    def test_deterministic(self):
        spec = PartitionSpec(classes=3, samples_per_class=5, dim=4)
        a = make_classification(spec, derive_stream(3, "data"))
        b = make_classification(spec, derive_stream(3, "data"))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_single_class(self):
        _, labels = make_classification(PartitionSpec(classes=1, samples_per_class=7), derive_stream(0, "d"))
        assert set(labels.tolist()) == {0}

    def test_well_separated_blobs_are_linearly_separable(self):
        spec = PartitionSpec(classes=2, samples_per_class=50, dim=4, margin=10.0, blob_std=0.1)
        X, labels = make_classification(spec, derive_stream(0, "data"))
        y = make_binary_targets(labels, 2)
        obj = SplitLogistic(4, 2, lam=1e-3)
        x_star, _ = optimum_oracle(obj, X, y)
        pred = (X @ x_star.concat() > 0).astype(float)
        assert np.array_equal(pred, y)

    def test_binary_targets(self):
        assert make_binary_targets(np.arange(4), 4).tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_regression_targets_shape(self):
        X = np.ones((6, 3))
        y, w = make_regression_targets(X, np.array([0, 1, 2, 0, 1, 2]), derive_stream(0, "t"))
        assert y.shape == (6,) and w.shape == (3,)


class TestDirichlet:
    def test_iid_equal_split(self):
        parts = dirichlet_partition(_labels(), 10, "iid", derive_stream(0, "p"))
        assert all(len(p) == 30 for p in parts)

    def test_single_client(self):
        parts = dirichlet_partition(_labels(), 1, 0.1, derive_stream(0, "p"))
        assert np.array_equal(parts[0], np.arange(300))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.sampled_from([0.1, 0.5, 1.0, 10.0, "iid"]), st.integers(0, 10_000))
    def test_disjoint_and_covering(self, N, beta, seed):
        labels = _labels(5, 12)
        parts = dirichlet_partition(labels, N, beta, derive_stream(seed, "partition"))
        flat = np.concatenate(parts)
        assert len(parts) == N and all(len(p) > 0 for p in parts)
        assert np.array_equal(np.sort(flat), np.arange(len(labels)))

    def test_small_beta_more_skewed(self):
        labels = _labels()
        skew = {b: np.mean([_max_class_fraction(dirichlet_partition(labels, 10, b, derive_stream(s, "p")), labels)
                            for s in range(200)]) for b in (0.1, 100.0)}
        assert skew[0.1] > skew[100.0]

    def test_failure_names_beta_and_N(self):
        with pytest.raises(PartitionError, match="beta=0.01.*N=40"):
            dirichlet_partition(_labels(2, 20), 40, 0.01, derive_stream(0, "p"))

    def test_deterministic(self):
        a = dirichlet_partition(_labels(), 10, 0.3, derive_stream(9, "p"))
        b = dirichlet_partition(_labels(), 10, 0.3, derive_stream(9, "p"))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestBalancedDirichlet:
    @pytest.mark.parametrize("beta", [0.1, 1.0, "iid"])
    def test_equal_sizes_disjoint(self, beta):
        labels = _labels(10, 31)
        parts = balanced_dirichlet_partition(labels, 10, beta, derive_stream(0, "p"))
        assert {len(p) for p in parts} == {31}
        flat = np.concatenate(parts)
        assert len(np.unique(flat)) == len(flat)

    def test_still_skewed(self):
        labels = _labels()
        lo = np.mean([_max_class_fraction(balanced_dirichlet_partition(labels, 10, 0.1, derive_stream(s, "p")), labels)
                      for s in range(30)])
        hi = np.mean([_max_class_fraction(balanced_dirichlet_partition(labels, 10, "iid", derive_stream(s, "p")), labels)
                      for s in range(30)])
        assert lo > hi + 0.2


class TestShards:
    def test_weights(self):
        X = np.ones((10, 2))
        shards = build_shards(X, np.zeros(10), [np.arange(3), np.arange(3, 10)])
        assert [s.weight for s in shards] == [0.3, 0.7]
        assert abs(sum(s.weight for s in shards) - 1) <= 1e-12

    def test_rejects_empty_and_bad_q(self):
        with pytest.raises(PartitionError):
            ClientShard(0, np.ones((0, 2)), np.ones(0), 1.0)
        with pytest.raises(ValueError):
            ClientShard(0, np.ones((1, 2)), np.ones(1), 1.0, q=0.0)

    def test_scalar_q_broadcast(self):
        shards = build_shards(np.ones((4, 2)), np.zeros(4), [np.arange(2), np.arange(2, 4)], q=0.5)
        assert [s.q for s in shards] == [0.5, 0.5]


class TestSampling:
    def test_single_sample_shard(self):
        shard = ClientShard(0, np.array([[1.0, 2.0]]), np.array([3.0]), 1.0)
        b = sample_batch(shard, 4, derive_stream(0, "b"))
        assert np.array_equal(b.inputs, np.tile([[1.0, 2.0]], (4, 1)))

    def test_same_stream_same_batch(self):
        shard = ClientShard(0, np.arange(20.0).reshape(10, 2), np.arange(10.0), 1.0)
        a = sample_batch(shard, 5, derive_stream(0, "b"))
        b = sample_batch(shard, 5, derive_stream(0, "b"))
        assert np.array_equal(a.inputs, b.inputs)

    def test_one_sample_gradients_unbiased(self, rng):
        X = rng.normal((25, 3))
        y = rng.normal(25)
        shard = ClientShard(0, X, y, 1.0)
        obj = SplitRidge(3, 1, lam=0.1)
        x = obj.init_params(rng, 1.0)
        w = x.concat()
        # a with-replacement batch of B is B independent one-sample draws
        b = sample_batch(shard, 100_000, derive_stream(5, "unbiased"))
        per_sample = (b.inputs @ w - b.targets)[:, None] * b.inputs + 0.1 * w
        mean = per_sample.mean(axis=0)
        se = per_sample.std(axis=0, ddof=1) / np.sqrt(len(per_sample))
        full = obj.loss_and_grad(x, Batch(X, y))[1]
        assert np.all(np.abs(mean - full) <= 3 * se + 1e-12)

    def test_epoch_sampler_covers_shard(self):
        shard = ClientShard(0, np.arange(12.0).reshape(12, 1), np.zeros(12), 1.0)
        s = EpochSampler(shard, 4, derive_stream(0, "e"))
        seen = np.concatenate([s.next().inputs[:, 0] for _ in range(3)])
        assert sorted(seen.tolist()) == list(range(12))

    def test_bad_batch_size(self):
        shard = ClientShard(0, np.ones((3, 1)), np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            sample_batch(shard, 0, derive_stream(0, "b"))


class TestLocalIterations:
    def test_examples(self):
        assert local_iterations(500, 128, 5) == 20
        assert local_iterations(50, 128, 3) == 3
        assert local_iterations(37, 1, 1) == 37

    def test_shared_tau_is_max(self):
        assert shared_tau([10, 100, 30], 16, 2) == 14


class TestCsv:
    def test_roundtrip(self, tmp_path, rng):
        X = rng.normal((5, 3))
        y = np.arange(5.0)
        save_csv(tmp_path / "d.csv", X, y)
        X2, y2 = load_csv(tmp_path / "d.csv")
        assert np.array_equal(X, X2) and np.array_equal(y, y2)


def test_heterogeneity_grows_as_beta_shrinks():
    # averaged over 20 seeds, the measured eps^2 is non-increasing in beta
    obj = SplitRidge(6, 2, lam=0.1)
    probe = [SplitParams.from_flat(np.zeros(6), 2)]
    means = []
    for beta in (0.1, 0.5, 1.0, "iid"):
        vals = []
        for seed in range(20):
            spec = PartitionSpec(N=5, beta=beta, classes=5, samples_per_class=20, dim=6)
            X, labels = make_classification(spec, derive_stream(seed, "data"))
            y, _ = make_regression_targets(X, labels, derive_stream(seed, "targets"))
            parts = dirichlet_partition(labels, 5, beta, derive_stream(seed, "partition"))
            vals.append(estimate_eps(obj, build_shards(X, y, parts), probe))
        means.append(np.mean(vals))
    assert all(a >= b for a, b in zip(means, means[1:])), means
