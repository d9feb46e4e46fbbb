import numpy as np
import pytest

from lib_data.sequenceTensors import LatentSequenceTensor
from lib_nn.gradientTape import GradientTape
from lib_nn.losses import gaussianKl
from lib_nn.lstmBackbone import zeroState
from lib_stage2.temporalCvae import (
    conditionFromLabels,
    generateLatentSequence,
    initTcvae,
    tcvaeElbo,
    tcvaeForwardStep,
    tcvaeLossAndGrad,
    trainLocalTcvae,
)


def _smallModel(seed=0, observationWidth=4):
    return initTcvae(observationWidth, np.random.default_rng(seed), latentWidth=3, headWidth=5, stateWidth=6)


def _zeroHeads(params, heads=("posteriorHead", "priorHead", "likelihoodHead")):
    zeroed = params.copy()
    for head in heads:
        for array in getattr(zeroed, head).namedArrays().values():
            array[...] = 0.0
    return zeroed


def _latents(rng, numSamples=6, numSteps=3, width=4):
    return LatentSequenceTensor(np.tanh(rng.normal(size=(numSamples, numSteps, width))),
                                np.arange(numSamples) % 2)


class TestForwardStep:

    def test_zero_heads_give_standard_normals_and_zero_kl(self):
        params = _zeroHeads(_smallModel())
        batch = 2
        step = tcvaeForwardStep(params, zeroState(params.backbone, batch), np.zeros((batch, 4)),
                                np.ones((batch, 4)), conditionFromLabels([0, 1]), np.ones((batch, 3)))
        for array in (step.muQ, step.muP, step.logVarQ, step.logVarP):
            np.testing.assert_array_equal(array, 0.0)
        latents = np.ones((batch, 1, 4))
        breakdown = tcvaeLossAndGrad(params, latents, conditionFromLabels([0, 1]), 1.0, np.ones((batch, 1, 3)))
        np.testing.assert_array_equal(breakdown.kl, 0.0)

    def test_uninitialized_state(self):
        params = _smallModel()
        with pytest.raises(ValueError, match="not initialized"):
            tcvaeForwardStep(params, None, np.zeros((1, 4)), np.zeros((1, 4)), conditionFromLabels([0]),
                             np.zeros((1, 3)))


class TestElbo:

    def test_kl_weight_zero_is_pure_nll(self):
        rng = np.random.default_rng(1)
        params = _smallModel()
        latents = _latents(rng)
        conditions = conditionFromLabels(latents.labels)
        breakdown = tcvaeLossAndGrad(params, latents.data, conditions, 0.0, rng.normal(size=(6, 3, 3)))
        assert breakdown.loss == pytest.approx(breakdown.nll.sum(axis=1).mean(), rel=1e-12)

    def test_zero_heads_loss_ignores_kl_weight(self):
        params = _zeroHeads(_smallModel())
        latents = _latents(np.random.default_rng(2))
        conditions = conditionFromLabels(latents.labels)
        small = tcvaeElbo(params, latents.data, conditions, 0.1, seed=3)
        large = tcvaeElbo(params, latents.data, conditions, 1000.0, seed=3)
        assert small == pytest.approx(large, rel=1e-12)

    def test_fixed_seed_is_deterministic(self):
        params = _smallModel()
        latents = _latents(np.random.default_rng(4))
        conditions = conditionFromLabels(latents.labels)
        assert tcvaeElbo(params, latents.data, conditions, 0.5, seed=8) == tcvaeElbo(
            params, latents.data, conditions, 0.5, seed=8)

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(5 + seed)
        params = _smallModel(seed=6 + seed)
        latents = _latents(rng, numSamples=3)
        conditions = conditionFromLabels(latents.labels)
        noise = rng.normal(size=(3, 3, 3))
        tape = GradientTape(params.namedArrays())
        tape.zero()
        tcvaeLossAndGrad(params, latents.data, conditions, 0.7, noise, tape)

        eps = 1e-5
        for name, array in params.namedArrays().items():
            numeric = np.zeros_like(array)
            flat, out = array.reshape(-1), numeric.reshape(-1)
            for index in range(flat.size):
                original = flat[index]
                flat[index] = original + eps
                plus = tcvaeLossAndGrad(params, latents.data, conditions, 0.7, noise).loss
                flat[index] = original - eps
                minus = tcvaeLossAndGrad(params, latents.data, conditions, 0.7, noise).loss
                flat[index] = original
                out[index] = (plus - minus) / (2 * eps)
            analytic = tape.grads[name]
            error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
            assert error < 1e-5, name

    def test_step_kl_is_the_closed_form_of_the_head_outputs(self):
        rng = np.random.default_rng(9)
        params = _smallModel(seed=3)
        latents = _latents(rng, numSamples=5, numSteps=4)
        breakdown = tcvaeLossAndGrad(params, latents.data, conditionFromLabels(latents.labels), 0.5,
                                     rng.normal(size=(5, 4, 3)))
        for t, step in enumerate(breakdown.steps):
            expected = gaussianKl(step.muQ, np.exp(step.logVarQ), step.muP, np.exp(step.logVarP))
            np.testing.assert_allclose(breakdown.kl[:, t], expected, rtol=0, atol=1e-12)

    def test_negative_kl_weight(self):
        params = _smallModel()
        latents = _latents(np.random.default_rng(0))
        with pytest.raises(ValueError):
            tcvaeLossAndGrad(params, latents.data, conditionFromLabels(latents.labels), -1.0,
                             np.zeros((6, 3, 3)))


class TestLocalTraining:

    def test_zero_epochs_leave_params_unchanged(self):
        params = _smallModel()
        result = trainLocalTcvae(params, _latents(np.random.default_rng(0)), np.random.default_rng(1), epochs=0)
        for name, array in params.namedArrays().items():
            np.testing.assert_array_equal(result.params.namedArrays()[name], array)
        assert result.summary.means.shape == (3, 3)

    def test_seed_determinism(self):
        params = _smallModel()
        latents = _latents(np.random.default_rng(0))
        first = trainLocalTcvae(params, latents, np.random.default_rng(3), epochs=2, batchSize=4)
        second = trainLocalTcvae(params, latents, np.random.default_rng(3), epochs=2, batchSize=4)
        for name, array in first.params.namedArrays().items():
            np.testing.assert_array_equal(second.params.namedArrays()[name], array)
        assert first.trainLoss == second.trainLoss

    def test_loss_decreases(self):
        rng = np.random.default_rng(7)
        params = _smallModel(seed=2)
        latents = _latents(rng, numSamples=32, numSteps=4)
        conditions = conditionFromLabels(latents.labels)
        before = tcvaeElbo(params, latents.data, conditions, 0.1, seed=0)
        tape = GradientTape(params.namedArrays(), learningRate=1e-2)
        trained = params
        for _ in range(20):
            trained = trainLocalTcvae(trained, latents, rng, epochs=10, batchSize=32, klWeight=0.1, tape=tape).params
        assert tcvaeElbo(trained, latents.data, conditions, 0.1, seed=0) < before


class TestGeneration:

    def test_same_seed_same_sequence(self):
        params = _smallModel()
        conditions = conditionFromLabels([0, 1, 1])
        np.testing.assert_array_equal(generateLatentSequence(params, conditions, 5, seed=4),
                                      generateLatentSequence(params, conditions, 5, seed=4))

    def test_zero_prior_and_likelihood_heads_give_zeros(self):
        params = _zeroHeads(_smallModel(), heads=("priorHead", "likelihoodHead"))
        sequence = generateLatentSequence(params, conditionFromLabels([0, 1]), 4, seed=0)
        assert sequence.shape == (2, 4, 4)
        np.testing.assert_array_equal(sequence, 0.0)

    def test_posterior_head_is_not_read(self):
        params = _smallModel()
        scrambled = _zeroHeads(params, heads=("posteriorHead",))
        conditions = conditionFromLabels([1, 0])
        np.testing.assert_array_equal(generateLatentSequence(params, conditions, 3, seed=2),
                                      generateLatentSequence(scrambled, conditions, 3, seed=2))

    def test_rejects_zero_steps(self):
        with pytest.raises(ValueError):
            generateLatentSequence(_smallModel(), conditionFromLabels([0]), 0)

    def test_first_step_matches_training_moments(self):
        rng = np.random.default_rng(13)
        numSamples = 32
        means = np.array([0.5, -0.3, 0.2, 0.0])
        data = means + 0.2 * rng.normal(size=(numSamples, 2, 4))
        latents = LatentSequenceTensor(data, np.arange(numSamples) % 2)
        params = _smallModel(seed=1)
        tape = GradientTape(params.namedArrays(), learningRate=1e-2)
        trained = trainLocalTcvae(params, latents, rng, epochs=600, batchSize=numSamples, klWeight=1.0,
                                  tape=tape).params

        conditions = conditionFromLabels(np.arange(500) % 2)
        generated = generateLatentSequence(trained, conditions, 2, seed=0)[:, 0]
        training = data[:, 0]
        standardError = np.sqrt(generated.var(axis=0) / 500 + training.var(axis=0) / numSamples)
        assert np.all(np.abs(generated.mean(axis=0) - training.mean(axis=0)) < 3 * standardError)
