import logging
from dataclasses import dataclass

import numpy as np

from lib_nn.gradientTape import GradientTape
from lib_stage1.binaryAutoencoder import (
    BaeParams,
    adaptDecoder,
    alignBaeArrays,
    applyDecoderPermutation,
    computeLatents,
    initBae,
    reconstructionLoss,
    trainLocalBae,
)
from lib_stage2.temporalCvae import conditionFromLabels, tcvaeElbo, trainLocalTcvae

from .federationConfig import (
    STREAM_BAE_INIT,
    STREAM_BAE_TRAIN,
    STREAM_TCVAE_TRAIN,
    STREAM_VALIDATION,
)

logger = logging.getLogger(__name__)


@dataclass
class EncoderUpload:
    """What a hospital sends the server after a Stage 1 local phase."""
    hospitalId: int
    encoder: object
    numSamples: int
    trainLoss: float


@dataclass
class TcvaeUpload:
    """What a hospital sends the server after a Stage 2 local phase."""
    hospitalId: int
    params: object
    summary: object
    numSamples: int
    trainLoss: float


class HospitalClient:
    """
    One simulated hospital. Its raw cohorts and latent tensors never leave the
    object; only EncoderUpload / TcvaeUpload values do.

    Every random draw comes from streams keyed by (seed, streamId, stage), so
    results do not depend on which worker thread runs the client.
    """

    def __init__(self, hospitalId, train, validation, config, streamId=None):
        if train.numSamples == 0:
            raise ValueError(f"hospital {hospitalId}: empty training cohort")
        self.hospitalId = hospitalId
        self.config = config
        self._train = train
        self._validation = validation if validation is not None and validation.numSamples else train
        streamId = hospitalId if streamId is None else streamId
        self._trainRng = np.random.default_rng([config.seed, streamId, STREAM_BAE_TRAIN])
        self._tcvaeRng = np.random.default_rng([config.seed, streamId, STREAM_TCVAE_TRAIN])
        self._initRng = np.random.default_rng([config.seed, streamId, STREAM_BAE_INIT])
        self._validationSeed = [config.seed, streamId, STREAM_VALIDATION]
        self.bae = None
        self._baeTape = None
        self._tcvaeTape = None
        self._latents = None
        self._validationLatents = None

    @property
    def numSamples(self):
        return self._train.numSamples

    @property
    def numSteps(self):
        return self._train.numSteps

    @property
    def numFeatures(self):
        return self._train.numFeatures

    @property
    def density(self):
        return self._train.density

    @property
    def labelMix(self):
        positive = float(self._train.labels.mean())
        return (1.0 - positive, positive)

    @property
    def decoder(self):
        if self.bae is None:
            raise ValueError(f"hospital {self.hospitalId}: BAE not trained yet")
        return self.bae.decoder

    # ------------------------------------------------------------------
    # Stage 1
    # ------------------------------------------------------------------
    def initializeBae(self, initial=None):
        config = self.config
        if initial is not None:
            self.bae = initial.copy()
        else:
            self.bae = initBae(self.numFeatures, self._initRng, config.hiddenWidths, config.latentWidth)
        self._baeTape = GradientTape(self.bae.namedArrays(), learningRate=config.learningRate)

    def trainBae(self, epochs):
        """Local training until convergence (epochs is the cap); returns the encoder upload."""
        if self.bae is None:
            self.initializeBae()
        result = trainLocalBae(self.bae, self._train, self._trainRng, epochs=epochs,
                               batchSize=self.config.batchSize, tape=self._baeTape)
        self.bae = result.params
        logger.debug("Hospital %d: BAE %d epochs, loss %.5f", self.hospitalId, result.epochsRun, result.history[-1])
        return self._encoderUpload(result.history[-1])

    def _alignTape(self, encoderPermutations):
        """Move the Adam state to the neuron order the server assigned this hospital."""
        self._baeTape.remap(lambda arrays: alignBaeArrays(arrays, encoderPermutations))

    def adaptAndTrainBae(self, globalEncoder, encoderPermutations, epochs):
        """Decoder adaptation to the broadcast encoder, then local retraining."""
        self._alignTape(encoderPermutations)
        adapted = adaptDecoder(self.bae, globalEncoder, encoderPermutations[-1], self._train, self._trainRng,
                               frozenEpochs=self.config.frozenEpochs, jointEpochs=self.config.jointEpochs,
                               batchSize=self.config.batchSize, tape=self._baeTape)
        self.bae = adapted.params
        return self.trainBae(epochs)

    def adoptGlobalEncoder(self, globalEncoder, encoderPermutations):
        """
        Final alignment: keep the global encoder fixed and fine-tune only the
        permuted decoder so that decoder(globalEncoder(x)) reconstructs x.
        """
        self._alignTape(encoderPermutations)
        adapted = adaptDecoder(self.bae, globalEncoder, encoderPermutations[-1], self._train, self._trainRng,
                               frozenEpochs=self.config.frozenEpochs, jointEpochs=0,
                               batchSize=self.config.batchSize, tape=self._baeTape)
        self.bae = BaeParams(globalEncoder.copy(), adapted.params.decoder)
        self._latents = computeLatents(globalEncoder, self._train)
        self._validationLatents = computeLatents(globalEncoder, self._validation)
        return self._latents

    def validationReconstruction(self, globalEncoder, latentPermutation):
        """Validation BCE of the broadcast encoder with this hospital's permuted decoder."""
        candidate = applyDecoderPermutation(self.bae, globalEncoder, latentPermutation)
        return reconstructionLoss(candidate, self._validation)

    def _encoderUpload(self, trainLoss):
        return EncoderUpload(self.hospitalId, self.bae.encoder.copy(), self.numSamples, float(trainLoss))

    # ------------------------------------------------------------------
    # Stage 2
    # ------------------------------------------------------------------
    @property
    def latents(self):
        if self._latents is None:
            raise ValueError(f"hospital {self.hospitalId}: latents not computed yet")
        return self._latents

    def trainTcvae(self, globalParams, klWeight):
        """Start from the broadcast parameters, run the local epoch(s), upload params and summary."""
        if self._tcvaeTape is None:
            self._tcvaeTape = GradientTape(globalParams.namedArrays(), learningRate=self.config.tcvaeLearningRate)
        result = trainLocalTcvae(globalParams, self.latents, self._tcvaeRng, epochs=self.config.tcvaeEpochs,
                                 batchSize=self.config.batchSize, klWeight=klWeight, tape=self._tcvaeTape)
        logger.debug("Hospital %d: TCVAE loss %.5f", self.hospitalId, result.trainLoss)
        return TcvaeUpload(self.hospitalId, result.params, result.summary, self.numSamples, result.trainLoss)

    def validationElbo(self, params, klWeight):
        """Negative ELBO on the validation latents with a fixed noise draw."""
        latents = self._validationLatents
        conditions = conditionFromLabels(latents.labels, params.conditionWidth)
        return tcvaeElbo(params, latents.data, conditions, klWeight, seed=self._validationSeed)
