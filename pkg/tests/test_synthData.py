import numpy as np
import pytest
from scipy.stats import spearmanr

from lib_data.cohortGenerator import (
    HospitalCohortSpec,
    buildFactorBank,
    buildHospitalSpecs,
    generateCohort,
    hospitalSizes,
)
from lib_data.sequenceTensors import BinarySequenceTensor, LatentSequenceTensor
from lib_data.splitter import splitCohort, splitIndices
from lib_data.tensorFile import FormatError, packedSize, readCheckpoint, readTensor, writeCheckpoint, writeTensor
from lib_eval.fidelity import prevalence


@pytest.fixture(scope="module")
def bank():
    return buildFactorBank(numFeatures=200, numSteps=16, latentDim=8, seed=5)


class TestCohortGenerator:

    def test_same_seed_gives_identical_tensors(self, bank):
        first = generateCohort(HospitalCohortSpec(0, 50, 0.05, 0.2, seed=7), bank)
        second = generateCohort(HospitalCohortSpec(1, 50, 0.05, 0.2, seed=7), bank)
        np.testing.assert_array_equal(first.data, second.data)
        np.testing.assert_array_equal(first.labels, second.labels)

    def test_density_hits_sparsity_target(self, bank):
        cohort = generateCohort(HospitalCohortSpec(0, 500, 0.05, 0.2, seed=3), bank)
        assert cohort.data.shape == (500, 16, 200)
        assert abs(cohort.density - 0.05) <= 0.01

    def test_label_prevalence(self, bank):
        cohort = generateCohort(HospitalCohortSpec(0, 2000, 0.05, 0.2, seed=4), bank)
        assert abs(cohort.labels.mean() - 0.2) <= 0.03

    def test_invalid_sparsity(self, bank):
        with pytest.raises(ValueError, match="sparsity"):
            generateCohort(HospitalCohortSpec(0, 10, 0.0, 0.2, seed=1), bank)

    def test_long_tail_sizes(self):
        sizes = hospitalSizes(5, 1500, 300)
        assert sizes[0] == 1500 and sizes[-1] == 300
        assert sizes == sorted(sizes, reverse=True)
        assert hospitalSizes(1, 1500, 300) == [1500]

    def test_specs_have_distinct_seeds(self):
        specs = buildHospitalSpecs(4, 20, [10, 10, 10, 10], 0.05, 0.2, seed=0, covariateShift=0.5,
                                   outlierHospital=2, outlierShift=3.0)
        assert len({spec.seed for spec in specs}) == 4
        norms = [np.linalg.norm(spec.covariateOffset) for spec in specs]
        assert int(np.argmax(norms)) == 2

    @pytest.mark.parametrize("seed", range(3))
    def test_shifted_hospitals_share_the_feature_ranking(self, bank, seed):
        rng = np.random.default_rng(seed)
        first, second = (
            generateCohort(HospitalCohortSpec(k, 300, 0.05, 0.2, seed=10 * seed + k,
                                              covariateOffset=rng.normal(scale=0.5, size=200)), bank)
            for k in range(2)
        )
        firstPrevalence, secondPrevalence = prevalence(first), prevalence(second)
        assert not np.allclose(firstPrevalence, secondPrevalence)
        rho, _ = spearmanr(firstPrevalence, secondPrevalence)
        assert rho > 0.0


class TestSplitter:

    def test_seventy_fifteen_fifteen(self):
        labels = np.array([0] * 80 + [1] * 20)
        train, val, test = splitIndices(labels, seed=0)
        assert (len(train), len(val), len(test)) == (70, 15, 15)
        assert len(np.unique(np.concatenate([train, val, test]))) == 100

    def test_small_cohort_keeps_both_classes(self):
        tensor = BinarySequenceTensor(np.zeros((10, 2, 3), dtype=np.uint8), np.array([0, 1] * 5))
        splits = splitCohort(tensor, seed=1)
        assert [split.numSamples for split in splits] == [6, 2, 2]
        for split in splits:
            assert set(split.labels.tolist()) == {0, 1}

    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 2, 60)
        for first, second in zip(splitIndices(labels, seed=4), splitIndices(labels, seed=4)):
            np.testing.assert_array_equal(first, second)

    def test_too_small(self):
        with pytest.raises(ValueError):
            splitIndices(np.zeros(9))

    def test_random_sizes_partition_every_index(self):
        rng = np.random.default_rng(11)
        for trial in range(40):
            numSamples = int(rng.integers(10, 1001))
            labels = (rng.random(numSamples) < rng.uniform(0.1, 0.9)).astype(np.uint8)
            splits = splitIndices(labels, seed=trial)
            for first in range(3):
                for second in range(first + 1, 3):
                    assert np.intersect1d(splits[first], splits[second]).size == 0
            np.testing.assert_array_equal(np.sort(np.concatenate(splits)), np.arange(numSamples))


class TestTensorFile:

    def test_round_trip_and_file_size(self, tmp_path):
        rng = np.random.default_rng(2)
        tensor = BinarySequenceTensor((rng.random((5, 3, 7)) < 0.3).astype(np.uint8), rng.integers(0, 2, 5))
        path = tmp_path / "cohort.fgt"
        written = writeTensor(path, tensor)
        assert written == path.stat().st_size == 8 + 24 + 1 + packedSize(5 * 3 * 7) + 5
        loaded = readTensor(path)
        np.testing.assert_array_equal(loaded.data, tensor.data)
        np.testing.assert_array_equal(loaded.labels, tensor.labels)

    def test_latent_tensor_round_trip(self, tmp_path):
        tensor = LatentSequenceTensor(np.random.default_rng(0).normal(size=(2, 3, 4)), np.array([0, 1]))
        writeTensor(tmp_path / "latent.fgt", tensor)
        np.testing.assert_array_equal(readTensor(tmp_path / "latent.fgt").data, tensor.data)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fgt"
        writeTensor(path, BinarySequenceTensor(np.zeros((1, 1, 8), dtype=np.uint8), [0]))
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            readTensor(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.fgt"
        writeTensor(path, BinarySequenceTensor(np.ones((4, 2, 8), dtype=np.uint8), [0, 1, 0, 1]))
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(FormatError, match="truncated"):
            readTensor(path)

    def test_checkpoint_round_trip(self, tmp_path):
        arrays = {"a.weights": np.arange(6.0).reshape(2, 3), "a.bias": np.array([1.5, -2.0])}
        writeCheckpoint(tmp_path / "round_1.ckpt", arrays, {"round": 1})
        loaded = readCheckpoint(tmp_path / "round_1.ckpt")
        assert list(loaded) == list(arrays)
        for name in arrays:
            np.testing.assert_array_equal(loaded[name], arrays[name])
