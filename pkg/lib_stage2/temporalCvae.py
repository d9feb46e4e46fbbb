import logging
from dataclasses import dataclass, field

import numpy as np

from lib_nn.denseLayer import LayerStack, buildLayerStack
from lib_nn.errors import DimensionError, checkWidth
from lib_nn.gradientTape import DEFAULT_LEARNING_RATE, GradientTape
from lib_nn.losses import gaussianKlLogVar, gaussianNll, reparameterize
from lib_nn.lstmBackbone import LstmBackbone, initLstmBackbone, lstmStepBackward, lstmStepCached, zeroState

from .distributionAggregation import summarizeLatentDistribution

logger = logging.getLogger(__name__)

BACKBONE = "backbone"
POSTERIOR = "posterior"
PRIOR = "prior"
LIKELIHOOD = "likelihood"
COMPONENT_GROUPS = (POSTERIOR, PRIOR, LIKELIHOOD, BACKBONE)

CONDITION_WIDTH = 2
LOG_VAR_BOUNDS = (-12.0, 8.0)
DEFAULT_BATCH_SIZE = 512
DEFAULT_KL_WEIGHT = 0.1

'''
TCVAE ANNOTATION:

Per time step t, with recurrent state s_t and condition c (one-hot label):

    s_t            = LSTM(s_{t-1}, [h_{t-1}; c])          h_0 = 0, s_0 = 0
    posterior head : [h_t; s_t; c] -> (mu_q, logvar_q)
    prior head     : [s_t; c]      -> (mu_p, logvar_p)
    z_t            = mu_q + sigma_q * eps
    likelihood head: [z_t; s_t; c] -> (mu_x, logvar_x) over h_t

Loss per sequence: sum_t [ -log N(h_t; mu_x, var_x) + lambda * KL(q_t || p_t) ],
averaged over the batch. Every head is a two-layer tanh/identity stack whose
output is split into a mean half and a log-variance half; log-variances are
clipped to LOG_VAR_BOUNDS (zero gradient outside the bounds).
'''


@dataclass
class TcvaeParams:
    backbone: LstmBackbone
    posteriorHead: LayerStack
    priorHead: LayerStack
    likelihoodHead: LayerStack

    componentGroups = COMPONENT_GROUPS

    def __post_init__(self):
        checkWidth("prior head input", self.priorHead.inputWidth, self.stateWidth + self.conditionWidth)
        checkWidth("posterior head input", self.posteriorHead.inputWidth,
                   self.observationWidth + self.stateWidth + self.conditionWidth)
        checkWidth("likelihood head input", self.likelihoodHead.inputWidth,
                   self.latentWidth + self.stateWidth + self.conditionWidth)
        checkWidth("likelihood head output", self.likelihoodHead.outputWidth, 2 * self.observationWidth)

    @property
    def stateWidth(self):
        return self.backbone.outputWidth

    @property
    def conditionWidth(self):
        return self.priorHead.inputWidth - self.stateWidth

    @property
    def observationWidth(self):
        return self.backbone.inputWidth - self.conditionWidth

    @property
    def latentWidth(self):
        return self.priorHead.outputWidth // 2

    def groupArrays(self, group):
        if group == BACKBONE:
            return self.backbone.namedArrays(BACKBONE)
        stack = {POSTERIOR: self.posteriorHead, PRIOR: self.priorHead, LIKELIHOOD: self.likelihoodHead}[group]
        return stack.namedArrays(group)

    def namedArrays(self):
        arrays = {}
        for group in COMPONENT_GROUPS:
            arrays.update(self.groupArrays(group))
        return arrays

    def copy(self):
        return TcvaeParams(self.backbone.copy(), self.posteriorHead.copy(),
                           self.priorHead.copy(), self.likelihoodHead.copy())


def initTcvae(observationWidth, rng, latentWidth=16, headWidth=64, stateWidth=64,
              conditionWidth=CONDITION_WIDTH):
    """Random TCVAE over d-dimensional latent observations."""
    backbone = initLstmBackbone(observationWidth + conditionWidth, stateWidth, rng)
    headActivations = ["tanh", "identity"]
    posterior = buildLayerStack(
        [observationWidth + stateWidth + conditionWidth, headWidth, 2 * latentWidth], headActivations, rng)
    prior = buildLayerStack([stateWidth + conditionWidth, headWidth, 2 * latentWidth], headActivations, rng)
    likelihood = buildLayerStack(
        [latentWidth + stateWidth + conditionWidth, headWidth, 2 * observationWidth], headActivations, rng)
    return TcvaeParams(backbone, posterior, prior, likelihood)


def conditionFromLabels(labels, width=CONDITION_WIDTH):
    """One-hot condition vectors c for binary task labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= width):
        raise ValueError(f"labels must lie in [0, {width}), got range [{labels.min()}, {labels.max()}]")
    return np.eye(width)[labels]


def _splitMoments(output, width):
    low, high = LOG_VAR_BOUNDS
    rawLogVar = output[:, width:]
    mask = ((rawLogVar > low) & (rawLogVar < high)).astype(np.float64)
    return output[:, :width], np.clip(rawLogVar, low, high), mask


@dataclass
class StepOutput:
    state: object
    muQ: np.ndarray
    logVarQ: np.ndarray
    muP: np.ndarray
    logVarP: np.ndarray
    z: np.ndarray
    muX: np.ndarray
    logVarX: np.ndarray
    noise: np.ndarray
    cache: dict = field(default=None, repr=False)


def tcvaeForwardStep(params, state, hPrev, hCurrent, conditions, noise):
    """
    One step of training-time inference.

    All inputs are batched: hPrev/hCurrent (B, d), conditions (B, |c|),
    noise (B, d_z) drawn by the caller from N(0, I).
    """
    if state is None:
        raise ValueError("tcvaeForwardStep: recurrent state is not initialized")
    checkWidth("h_t", hCurrent.shape[1], params.observationWidth)
    checkWidth("condition", conditions.shape[1], params.conditionWidth)
    checkWidth("noise", noise.shape[1], params.latentWidth)

    stateNext, recurrent, lstmCache = lstmStepCached(params.backbone, state, np.concatenate([hPrev, conditions], axis=1))
    posteriorOut, posteriorCache = params.posteriorHead.forwardCached(
        np.concatenate([hCurrent, recurrent, conditions], axis=1))
    muQ, logVarQ, maskQ = _splitMoments(posteriorOut, params.latentWidth)
    priorOut, priorCache = params.priorHead.forwardCached(np.concatenate([recurrent, conditions], axis=1))
    muP, logVarP, maskP = _splitMoments(priorOut, params.latentWidth)

    z = reparameterize(muQ, np.exp(0.5 * logVarQ), noise)
    likelihoodOut, likelihoodCache = params.likelihoodHead.forwardCached(
        np.concatenate([z, recurrent, conditions], axis=1))
    muX, logVarX, maskX = _splitMoments(likelihoodOut, params.observationWidth)

    cache = {
        "lstm": lstmCache, "posterior": posteriorCache, "prior": priorCache, "likelihood": likelihoodCache,
        "maskQ": maskQ, "maskP": maskP, "maskX": maskX,
    }
    return StepOutput(stateNext, muQ, logVarQ, muP, logVarP, z, muX, logVarX, noise, cache)


@dataclass
class ElboBreakdown:
    loss: float
    nll: np.ndarray
    kl: np.ndarray
    steps: list = field(default_factory=list, repr=False)


def _checkBatch(params, latents, conditions):
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or latents.shape[0] == 0:
        raise ValueError(f"TCVAE batch must be a non-empty (B, T, d) array, got shape {latents.shape}")
    checkWidth("latent observations", latents.shape[2], params.observationWidth)
    if conditions.shape != (latents.shape[0], params.conditionWidth):
        raise DimensionError(f"conditions shape {conditions.shape} does not match batch {latents.shape}")
    return latents


def tcvaeLossAndGrad(params, latents, conditions, klWeight, noise, tape=None):
    """
    Sequential ELBO loss of a batch with teacher forcing on the real h_{t-1}.

    Args:
        latents: (B, T, d) latent sequences
        conditions: (B, |c|) one-hot conditions
        klWeight: lambda >= 0
        noise: (B, T, d_z) standard normal draws, one per (n, t)
        tape: if given, gradients of the mean loss are accumulated into it

    Returns an ElboBreakdown with per-(n, t) NLL and KL terms.
    """
    if klWeight < 0:
        raise ValueError(f"KL weight must be >= 0, got {klWeight}")
    latents = _checkBatch(params, latents, conditions)
    batchSize, numSteps, _ = latents.shape

    state = zeroState(params.backbone, batchSize)
    hPrev = np.zeros((batchSize, params.observationWidth))
    nll = np.zeros((batchSize, numSteps))
    kl = np.zeros((batchSize, numSteps))
    steps = []
    for t in range(numSteps):
        step = tcvaeForwardStep(params, state, hPrev, latents[:, t], conditions, noise[:, t])
        nll[:, t], dMuX, dLogVarX = gaussianNll(latents[:, t], step.muX, step.logVarX)
        kl[:, t], dMuQ, dLogVarQ, dMuP, dLogVarP = gaussianKlLogVar(step.muQ, step.logVarQ, step.muP, step.logVarP)
        step.cache["grads"] = (dMuX, dLogVarX, dMuQ, dLogVarQ, dMuP, dLogVarP)
        steps.append(step)
        state = step.state
        hPrev = latents[:, t]

    loss = float((nll + klWeight * kl).sum(axis=1).mean())
    if tape is not None:
        _backward(params, steps, klWeight, batchSize, tape)
    return ElboBreakdown(loss, nll, kl, steps)


def _backward(params, steps, klWeight, batchSize, tape):
    scale = 1.0 / batchSize
    latentWidth = params.latentWidth
    stateWidth = params.stateWidth
    observationWidth = params.observationWidth
    gradStateNext = None
    for step in reversed(steps):
        cache = step.cache
        dMuX, dLogVarX, dMuQ, dLogVarQ, dMuP, dLogVarP = cache["grads"]

        gradLikelihoodOut = np.concatenate([scale * dMuX, scale * dLogVarX * cache["maskX"]], axis=1)
        gradLikelihoodIn = params.likelihoodHead.backward(cache["likelihood"], gradLikelihoodOut, tape, LIKELIHOOD)
        gradZ = gradLikelihoodIn[:, :latentWidth]
        gradRecurrent = gradLikelihoodIn[:, latentWidth:latentWidth + stateWidth].copy()

        sigmaQ = np.exp(0.5 * step.logVarQ)
        gradMuQ = gradZ + klWeight * scale * dMuQ
        gradLogVarQ = (gradZ * step.noise * 0.5 * sigmaQ + klWeight * scale * dLogVarQ) * cache["maskQ"]
        gradPosteriorIn = params.posteriorHead.backward(
            cache["posterior"], np.concatenate([gradMuQ, gradLogVarQ], axis=1), tape, POSTERIOR)
        gradRecurrent += gradPosteriorIn[:, observationWidth:observationWidth + stateWidth]

        gradPriorOut = np.concatenate(
            [klWeight * scale * dMuP, klWeight * scale * dLogVarP * cache["maskP"]], axis=1)
        gradPriorIn = params.priorHead.backward(cache["prior"], gradPriorOut, tape, PRIOR)
        gradRecurrent += gradPriorIn[:, :stateWidth]

        _, gradStateNext = lstmStepBackward(params.backbone, cache["lstm"], gradRecurrent, gradStateNext, tape, BACKBONE)


def tcvaeElbo(params, latents, conditions, klWeight, seed=0, noise=None):
    """Scalar loss (negative ELBO, batch mean) with noise drawn from `seed` unless given."""
    latents = np.asarray(latents, dtype=np.float64)
    if noise is None:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal((latents.shape[0], latents.shape[1], params.latentWidth)) if latents.ndim == 3 else None
    return tcvaeLossAndGrad(params, latents, conditions, klWeight, noise).loss


def posteriorMoments(params, latents, conditions, chunk=2048):
    """
    Per-(n, t) posterior means and variances under teacher forcing (no sampling).

    Returns (means, variances), each of shape (N, T, d_z).
    """
    latents = _checkBatch(params, latents, conditions)
    numSamples, numSteps, _ = latents.shape
    means = np.empty((numSamples, numSteps, params.latentWidth))
    variances = np.empty_like(means)
    for start in range(0, numSamples, chunk):
        block = latents[start:start + chunk]
        blockConditions = conditions[start:start + chunk]
        state = zeroState(params.backbone, block.shape[0])
        hPrev = np.zeros((block.shape[0], params.observationWidth))
        for t in range(numSteps):
            state, recurrent, _ = lstmStepCached(params.backbone, state, np.concatenate([hPrev, blockConditions], axis=1))
            out = params.posteriorHead.forward(np.concatenate([block[:, t], recurrent, blockConditions], axis=1))
            mu, logVar, _ = _splitMoments(out, params.latentWidth)
            means[start:start + chunk, t] = mu
            variances[start:start + chunk, t] = np.exp(logVar)
            hPrev = block[:, t]
    return means, variances


@dataclass
class TcvaeTrainingResult:
    params: TcvaeParams
    summary: object
    trainLoss: float


def trainLocalTcvae(params, latents, rng, epochs=1, batchSize=DEFAULT_BATCH_SIZE, klWeight=DEFAULT_KL_WEIGHT,
                    tape=None, learningRate=DEFAULT_LEARNING_RATE):
    """
    Local TCVAE training: `epochs` passes of mini-batch Adam on the ELBO loss,
    then one fixed pass computing the hospital's latent distribution summary.

    Args:
        params: parameters received from the server (not modified)
        latents: LatentSequenceTensor H^(k) with labels
        rng: Generator for batch order and reparameterization noise

    Returns a TcvaeTrainingResult(params, summary, trainLoss).
    """
    if latents.numSamples == 0:
        raise ValueError("trainLocalTcvae: empty latent tensor")
    trained = params.copy()
    if tape is None:
        tape = GradientTape(trained.namedArrays(), learningRate=learningRate)
    conditions = conditionFromLabels(latents.labels, trained.conditionWidth)
    data = latents.data

    losses = []
    for _ in range(epochs):
        order = rng.permutation(latents.numSamples)
        for start in range(0, latents.numSamples, batchSize):
            batch = order[start:start + batchSize]
            noise = rng.standard_normal((batch.shape[0], latents.numSteps, trained.latentWidth))
            tape.zero()
            breakdown = tcvaeLossAndGrad(trained, data[batch], conditions[batch], klWeight, noise, tape)
            tape.applyAdam(trained.namedArrays())
            losses.append(breakdown.loss * batch.shape[0])

    trainLoss = float(np.sum(losses) / (epochs * latents.numSamples)) if losses else float("nan")
    summary = summarizeLatentDistribution(*posteriorMoments(trained, data, conditions))
    return TcvaeTrainingResult(trained, summary, trainLoss)


def generateLatentSequence(params, conditions, numSteps, seed=0, sampleEmission=False):
    """
    Autoregressive rollout from the prior: s_t from (s_{t-1}, h~_{t-1}, c),
    z~_t ~ prior, h~_t = likelihood mean (or a sample when sampleEmission).

    Only the backbone, prior head and likelihood head are read.

    Returns an array of shape (B, numSteps, d).
    """
    if numSteps < 1:
        raise ValueError(f"numSteps must be >= 1, got {numSteps}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    checkWidth("condition", conditions.shape[1], params.conditionWidth)
    batchSize = conditions.shape[0]

    state = zeroState(params.backbone, batchSize)
    hPrev = np.zeros((batchSize, params.observationWidth))
    sequence = np.empty((batchSize, numSteps, params.observationWidth))
    for t in range(numSteps):
        state, recurrent, _ = lstmStepCached(params.backbone, state, np.concatenate([hPrev, conditions], axis=1))
        muP, logVarP, _ = _splitMoments(params.priorHead.forward(np.concatenate([recurrent, conditions], axis=1)),
                                        params.latentWidth)
        z = muP + np.exp(0.5 * logVarP) * rng.standard_normal(muP.shape)
        muX, logVarX, _ = _splitMoments(params.likelihoodHead.forward(np.concatenate([z, recurrent, conditions], axis=1)),
                                        params.observationWidth)
        emission = rng.standard_normal(muX.shape)
        sequence[:, t] = muX + np.exp(0.5 * logVarX) * emission if sampleEmission else muX
        hPrev = sequence[:, t]
    return sequence
