import itertools
import math

import numpy as np
import pytest

from lib_data.sequenceTensors import BinarySequenceTensor
from lib_eval.fidelity import flattenSamples, mmd, perTimestepPrevalence, prevalence, prevalenceR2PerTimestep, r2Fidelity
from lib_eval.privacy import hammingDistances, mir, nnaa
from lib_eval.reports import computePrivacy, formatSummaryTable, readMetrics, summarizeRuns, writeMetrics
from lib_eval.utility import auprc, auroc, evaluateUtility, scoreDownstream, trainDownstream, trainFederatedDownstream


def _bits(seed, numSamples, numSteps=4, numFeatures=16, density=0.3, labels=None):
    rng = np.random.default_rng(seed)
    data = (rng.random((numSamples, numSteps, numFeatures)) < density).astype(np.uint8)
    labels = rng.integers(0, 2, numSamples) if labels is None else labels
    return BinarySequenceTensor(data, labels)


def _withMeans(means, numSamples=10):
    """Tensor of shape (numSamples, T, D) whose per-(t, d) means equal `means` (multiples of 1/numSamples)."""
    means = np.asarray(means)
    data = np.zeros((numSamples, *means.shape), dtype=np.uint8)
    counts = np.rint(means * numSamples).astype(int)
    for index in np.ndindex(means.shape):
        data[(slice(0, counts[index]), *index)] = 1
    return BinarySequenceTensor(data, np.arange(numSamples) % 2)


class TestFidelity:

    def test_self_comparison(self):
        real = _bits(0, 30)
        assert r2Fidelity(real, real) == 1.0
        assert mmd(flattenSamples(real), flattenSamples(real)) == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed_r2(self):
        real = _withMeans([[0.2], [0.4]])
        syn = _withMeans([[0.3], [0.3]])
        assert r2Fidelity(real, syn) == pytest.approx(0.0, abs=1e-12)

    def test_constant_synthetic_means_give_zero(self):
        real = _withMeans([[0.1, 0.5], [0.3, 0.7]])
        syn = _withMeans([[0.4, 0.4], [0.4, 0.4]])
        assert r2Fidelity(real, syn) == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_real_tensor(self):
        real = BinarySequenceTensor(np.zeros((4, 2, 3), dtype=np.uint8), [0, 1, 0, 1])
        with pytest.raises(ValueError, match="zero variance"):
            r2Fidelity(real, _bits(1, 4, 2, 3))

    def test_order_invariance(self):
        real, syn = _bits(2, 40), _bits(3, 40)
        shuffled = syn.subset(np.random.default_rng(0).permutation(40))
        assert r2Fidelity(real, shuffled) == pytest.approx(r2Fidelity(real, syn), abs=1e-12)
        assert mmd(flattenSamples(real), flattenSamples(shuffled)) == pytest.approx(
            mmd(flattenSamples(real), flattenSamples(syn)), abs=1e-12)

    def test_two_point_masses(self):
        zeros = np.zeros((5, 8))
        ones = np.ones((5, 8))
        # pooled median squared distance is 8, so every cross pair contributes exp(-1)
        assert mmd(zeros, ones) == pytest.approx(2.0 * (1.0 - math.exp(-1.0)), rel=1e-12)

    def test_mmd_needs_two_samples(self):
        with pytest.raises(ValueError):
            mmd(np.zeros((1, 4)), np.zeros((3, 4)))

    def test_prevalence(self):
        zeros = BinarySequenceTensor(np.zeros((3, 2, 4), dtype=np.uint8), [0, 1, 0])
        ones = BinarySequenceTensor(np.ones((3, 2, 4), dtype=np.uint8), [0, 1, 0])
        np.testing.assert_array_equal(prevalence(zeros), np.zeros(4))
        np.testing.assert_array_equal(prevalence(ones), np.ones(4))
        assert perTimestepPrevalence(ones).shape == (2, 4)

    def test_per_timestep_r2_of_self(self):
        real = _bits(4, 50)
        assert prevalenceR2PerTimestep(real, real) == 1.0


class TestUtility:

    def test_hand_scored_auroc(self):
        labels = np.array([0, 0, 1, 1])
        assert auroc(labels, np.array([0.1, 0.4, 0.35, 0.8])) == pytest.approx(0.75)

    def test_auroc_equals_pair_counting(self):
        rng = np.random.default_rng(0)
        for size in range(4, 21, 4):
            labels = np.array([0, 1] * (size // 2))
            scores = rng.integers(0, 5, size).astype(np.float64)
            positives, negatives = scores[labels == 1], scores[labels == 0]
            pairs = [1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(positives, negatives)]
            assert auroc(labels, scores) == pytest.approx(np.mean(pairs), abs=1e-12)

    def test_single_class_is_rejected(self):
        with pytest.raises(ValueError, match="single class"):
            auprc(np.zeros(4), np.arange(4.0))

    def test_separable_labels(self):
        train = _bits(5, 60, numFeatures=4)
        train.data[train.labels == 1, :, 0] = 1
        train.data[train.labels == 0, :, 0] = 0
        test = _bits(6, 40, numFeatures=4)
        test.data[test.labels == 1, :, 0] = 1
        test.data[test.labels == 0, :, 0] = 0
        aurocValue, _ = scoreDownstream(trainDownstream(train), test)
        assert aurocValue == 1.0

    def test_chance_level(self):
        train = _bits(7, 2000, numFeatures=8)
        test = _bits(8, 2000, numFeatures=8)
        aurocValue, auprcValue = scoreDownstream(trainDownstream(train), test)
        assert abs(aurocValue - 0.5) < 0.05
        assert abs(auprcValue - test.labels.mean()) < 0.05

    def test_federated_downstream_averages_coefficients(self):
        sets = [_bits(9, 50), _bits(10, 150)]
        combined = trainFederatedDownstream(sets)
        first, second = trainDownstream(sets[0]), trainDownstream(sets[1])
        np.testing.assert_allclose(combined.coef_, 0.25 * first.coef_ + 0.75 * second.coef_)

    def test_three_regimes(self):
        real = [_bits(11, 40), _bits(12, 40)]
        syn = [_bits(13, 40), _bits(14, 40)]
        results = evaluateUtility(real, syn, _bits(15, 40), federated=True)
        assert set(results) == {"real", "synth", "hybrid"}
        assert all(0.0 <= value <= 1.0 for pair in results.values() for value in pair)


class TestPrivacy:

    def test_hamming(self):
        a = np.array([[1.0, 0.0, 1.0]])
        b = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]])
        np.testing.assert_array_equal(hammingDistances(a, b), [[2.0, 0.0]])

    def test_copied_members_are_detected(self):
        members, holdout = _bits(20, 60, density=0.5), _bits(21, 60, density=0.5)
        assert mir(members, holdout, members, seed=0) > 0.9

    def test_independent_synthetic_gives_no_advantage(self):
        members, holdout = _bits(22, 1000), _bits(23, 1000)
        assert abs(mir(members, holdout, _bits(24, 1000), seed=0)) <= 0.1

    def test_mir_is_seed_deterministic(self):
        members, holdout, syn = _bits(25, 40), _bits(26, 40), _bits(27, 40)
        assert mir(members, holdout, syn, seed=4) == mir(members, holdout, syn, seed=4)
        assert -1.0 <= mir(members, holdout, syn, seed=4, attacker="logistic") <= 1.0

    def test_nnaa_of_copies(self):
        real = _bits(28, 30, density=0.5)
        copies = BinarySequenceTensor(real.data.copy(), real.labels.copy())
        assert nnaa(real, copies) == 1.0

    def test_nnaa_far_cluster(self):
        real = BinarySequenceTensor(np.zeros((10, 2, 8), dtype=np.uint8), np.zeros(10))
        far = np.ones((10, 2, 8), dtype=np.uint8)
        far[np.arange(10), 0, np.arange(10) % 8] = 0
        assert nnaa(real, BinarySequenceTensor(far, np.zeros(10))) == 0.0

    def test_nnaa_matches_brute_force(self):
        real, syn = _bits(29, 25, numSteps=2, numFeatures=6), _bits(30, 25, numSteps=2, numFeatures=6)
        realRows, synRows = flattenSamples(real), flattenSamples(syn)
        hits = 0
        for index, row in enumerate(synRows):
            toReal = min(np.abs(row - other).sum() for other in realRows)
            toSyn = min(np.abs(row - other).sum() for j, other in enumerate(synRows) if j != index)
            hits += toReal < toSyn
        assert nnaa(real, syn) == pytest.approx(hits / len(synRows))

    def test_nnaa_ignores_record_order(self):
        real = _bits(33, 40, numSteps=2, numFeatures=6)
        syn = _bits(34, 15, numSteps=2, numFeatures=6)
        shuffles = np.random.default_rng(0)
        values = {nnaa(real.subset(shuffles.permutation(40)), syn.subset(shuffles.permutation(15)))
                  for _ in range(10)}
        assert values == {nnaa(real, syn)}

    def test_mir_ignores_record_order(self):
        members, holdout, syn = _bits(35, 30), _bits(36, 20), _bits(37, 25)
        shuffles = np.random.default_rng(1)
        expected = mir(members, holdout, syn, seed=2, maxSamples=12)
        for _ in range(5):
            shuffled = mir(members.subset(shuffles.permutation(30)), holdout.subset(shuffles.permutation(20)),
                           syn.subset(shuffles.permutation(25)), seed=2, maxSamples=12)
            assert shuffled == expected

    def test_leakage_is_logged(self, caplog):
        real = _bits(31, 20, density=0.5)
        with caplog.at_level("WARNING"):
            report = computePrivacy(real, _bits(32, 20, density=0.5), real, synName="copies")
        assert report.nnaa == 1.0
        assert "leakage" in caplog.text


class TestReports:

    def test_metrics_round_trip_and_summary(self, tmp_path):
        writeMetrics(tmp_path / "a.csv", [("r2", "fedavg", 0.5), ("mmd", "fedavg", 0.1)], seed=0)
        writeMetrics(tmp_path / "b.csv", [("r2", "fedavg", 0.7), ("mmd", "fedavg", 0.3)], seed=1)
        summary = summarizeRuns([readMetrics(tmp_path / "a.csv"), readMetrics(tmp_path / "b.csv")])
        assert summary[0][:2] == ("r2", "fedavg")
        assert summary[0][2] == pytest.approx(0.6)
        assert summary[0][3] == pytest.approx(0.1)
        assert "0.6000 +/- 0.1000" in formatSummaryTable(summary)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            readMetrics(path)
