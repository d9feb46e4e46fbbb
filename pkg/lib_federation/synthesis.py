import numpy as np

from lib_data.sequenceTensors import BinarySequenceTensor
from lib_nn.errors import checkWidth
from lib_stage2.temporalCvae import conditionFromLabels, generateLatentSequence

from .federationConfig import EMISSIONS


def generateSyntheticCohort(tcvae, decoder, numSamples, labelMix, numSteps, seed=0, emission="sample",
                            sampleEmission=False):
    """
    Hospital-specific synthetic records: roll out latent trajectories with the
    global TCVAE, decode them with the hospital's own decoder and emit bits.

    Args:
        tcvae: trained global TcvaeParams
        decoder: the hospital's decoder LayerStack (latent width -> D, sigmoid)
        labelMix: (P(label 0), P(label 1))
        emission: "sample" draws Bernoulli(p) per bit, "threshold" emits p >= 0.5

    Returns a BinarySequenceTensor of shape (numSamples, numSteps, D).
    """
    if tcvae is None or decoder is None:
        raise ValueError("generateSyntheticCohort: TCVAE and decoder must be trained first")
    if emission not in EMISSIONS:
        raise ValueError(f"unknown emission '{emission}', expected one of {EMISSIONS}")
    checkWidth("decoder input", decoder.inputWidth, tcvae.observationWidth)
    if numSamples < 0:
        raise ValueError(f"numSamples must be >= 0, got {numSamples}")
    labelMix = np.asarray(labelMix, dtype=np.float64)
    if labelMix.shape != (2,) or np.any(labelMix < 0) or abs(labelMix.sum() - 1.0) > 1e-9:
        raise ValueError(f"label mix must be two non-negative probabilities summing to 1, got {labelMix.tolist()}")

    numFeatures = decoder.outputWidth
    if numSamples == 0:
        return BinarySequenceTensor(np.zeros((0, numSteps, numFeatures), dtype=np.uint8), np.zeros(0, dtype=np.uint8))

    rng = np.random.default_rng(seed)
    labels = rng.choice(2, size=numSamples, p=labelMix).astype(np.uint8)
    latents = generateLatentSequence(tcvae, conditionFromLabels(labels, tcvae.conditionWidth), numSteps, rng,
                                     sampleEmission=sampleEmission)
    probs = decoder.forward(latents.reshape(-1, tcvae.observationWidth)).reshape(numSamples, numSteps, numFeatures)
    if emission == "sample":
        bits = rng.random(probs.shape) < probs
    else:
        bits = probs >= 0.5
    return BinarySequenceTensor(bits.astype(np.uint8), labels)
