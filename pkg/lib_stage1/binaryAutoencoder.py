import logging
from dataclasses import dataclass, field

import numpy as np

from lib_data.sequenceTensors import LatentSequenceTensor
from lib_nn.denseLayer import LayerStack, buildLayerStack
from lib_nn.errors import DimensionError, checkWidth
from lib_nn.gradientTape import DEFAULT_LEARNING_RATE, GradientTape
from lib_nn.losses import bceLogitGrad, bceLoss

from .permutation import Permutation

logger = logging.getLogger(__name__)

ENCODER_PREFIX = "encoder"
DECODER_PREFIX = "decoder"
DEFAULT_BATCH_SIZE = 512
MAX_EPOCHS = 200
CONVERGENCE_TOLERANCE = 1e-4
CONVERGENCE_PATIENCE = 3
FROZEN_EPOCHS = 20
JOINT_EPOCHS = 5
EVAL_CHUNK = 8192


@dataclass
class BaeParams:
    """Encoder f_phi (D -> ... -> d, tanh latent) and mirrored decoder g_theta (sigmoid output)."""
    encoder: LayerStack
    decoder: LayerStack

    def __post_init__(self):
        checkWidth("decoder input", self.decoder.inputWidth, self.encoder.outputWidth)
        checkWidth("decoder output", self.decoder.outputWidth, self.encoder.inputWidth)

    @property
    def inputWidth(self):
        return self.encoder.inputWidth

    @property
    def latentWidth(self):
        return self.encoder.outputWidth

    def namedArrays(self):
        return {**self.encoder.namedArrays(ENCODER_PREFIX), **self.decoder.namedArrays(DECODER_PREFIX)}

    def copy(self):
        return BaeParams(self.encoder.copy(), self.decoder.copy())


@dataclass
class LocalTrainingResult:
    params: object
    history: list = field(default_factory=list)

    @property
    def epochsRun(self):
        return len(self.history) - 1


def initBae(inputWidth, rng, hiddenWidths=(128,), latentWidth=32):
    """
    Random BAE with a relu hidden stack, tanh latent layer and a mirrored
    decoder ending in sigmoid.
    """
    hiddenWidths = list(hiddenWidths)
    encoderWidths = [inputWidth, *hiddenWidths, latentWidth]
    decoderWidths = [latentWidth, *reversed(hiddenWidths), inputWidth]
    encoder = buildLayerStack(encoderWidths, ["relu"] * len(hiddenWidths) + ["tanh"], rng)
    decoder = buildLayerStack(decoderWidths, ["relu"] * len(hiddenWidths) + ["sigmoid"], rng)
    return BaeParams(encoder, decoder)


def encode(params, x):
    """z = f_phi(x) for one row or a batch of rows."""
    checkWidth("encode", np.shape(x)[-1], params.inputWidth)
    return params.encoder.forward(np.asarray(x, dtype=np.float64))


def decode(params, z):
    """Bernoulli parameters g_theta(z) in (0, 1)^D."""
    checkWidth("decode", np.shape(z)[-1], params.latentWidth)
    return params.decoder.forward(np.asarray(z, dtype=np.float64))


def _asRows(data):
    if hasattr(data, "rows"):
        return data.rows()
    return np.asarray(data, dtype=np.float64)


def reconstructionLoss(params, data):
    """Mean BCE of decode(encode(x)) over every (n, t) row, evaluated in chunks."""
    rows = _asRows(data)
    if rows.shape[0] == 0:
        raise ValueError("reconstructionLoss: empty data")
    total = 0.0
    for start in range(0, rows.shape[0], EVAL_CHUNK):
        chunk = rows[start:start + EVAL_CHUNK]
        total += bceLoss(chunk, decode(params, encode(params, chunk))) * chunk.size
    return total / rows.size


def baeLossAndGrad(params, rows, tape):
    """
    BCE loss of one batch; parameter gradients are accumulated into `tape`.

    The sigmoid output and the BCE are differentiated together, so the
    decoder's last layer receives (p - x) / count directly.
    """
    latent, encoderCaches = params.encoder.forwardCached(rows)
    probs, decoderCaches = params.decoder.forwardCached(latent)
    loss = bceLoss(rows, probs)
    gradLatent = params.decoder.backward(
        decoderCaches, bceLogitGrad(rows, probs), tape, DECODER_PREFIX, skipLastActivation=True
    )
    params.encoder.backward(encoderCaches, gradLatent, tape, ENCODER_PREFIX)
    return loss


def trainLocalBae(params, data, rng, epochs=MAX_EPOCHS, batchSize=DEFAULT_BATCH_SIZE, tape=None,
                  learningRate=DEFAULT_LEARNING_RATE, frozenEncoder=False, untilConvergence=True):
    """
    Mini-batch Adam on the reconstruction BCE, batching over (n, t) rows.

    With untilConvergence, training stops once the epoch-over-epoch improvement
    stays below CONVERGENCE_TOLERANCE for CONVERGENCE_PATIENCE epochs;
    `epochs` is then the cap.

    Args:
        params: BaeParams (not modified; a trained copy is returned)
        data: BinarySequenceTensor or (rows, D) array
        rng: numpy Generator driving the batch order
        tape: GradientTape to reuse (keeps Adam moments across calls)

    Returns a LocalTrainingResult whose history starts with the pre-training loss.
    """
    rows = _asRows(data)
    if rows.shape[0] == 0:
        raise ValueError("trainLocalBae: empty data")
    if rows.shape[1] != params.inputWidth:
        raise DimensionError(f"trainLocalBae: data width {rows.shape[1]} != model width {params.inputWidth}")

    trained = params.copy()
    if tape is None:
        tape = GradientTape(trained.namedArrays(), learningRate=learningRate)
    frozen = (ENCODER_PREFIX,) if frozenEncoder else ()
    history = [reconstructionLoss(trained, rows)]
    stalled = 0
    for epoch in range(epochs):
        order = rng.permutation(rows.shape[0])
        for start in range(0, rows.shape[0], batchSize):
            tape.zero()
            baeLossAndGrad(trained, rows[order[start:start + batchSize]], tape)
            tape.applyAdam(trained.namedArrays(), frozenPrefixes=frozen)
        history.append(reconstructionLoss(trained, rows))
        if not untilConvergence:
            continue
        stalled = stalled + 1 if history[-2] - history[-1] < CONVERGENCE_TOLERANCE else 0
        if stalled >= CONVERGENCE_PATIENCE:
            logger.debug("BAE converged after %d epochs (loss %.5f)", epoch + 1, history[-1])
            break
    return LocalTrainingResult(trained, history)


def applyDecoderPermutation(params, globalEncoder, latentPermutation):
    """
    Swap in the global encoder and move the first decoder layer's input rows to
    the latent positions the server assigned: row i goes to mapping[i].
    """
    if globalEncoder.shapes != params.encoder.shapes:
        raise DimensionError(f"global encoder shapes {globalEncoder.shapes} != local {params.encoder.shapes}")
    if not isinstance(latentPermutation, Permutation):
        latentPermutation = Permutation(latentPermutation)
    checkWidth("latent permutation", latentPermutation.size, params.latentWidth)

    decoder = params.decoder.copy()
    firstLayer = decoder.layers[0]
    firstLayer.weights = latentPermutation.applyToRows(firstLayer.weights)
    return BaeParams(globalEncoder.copy(), decoder)


def alignBaeArrays(arrays, encoderPermutations):
    """
    Move a map shaped like BaeParams.namedArrays() (parameters, gradients or
    Adam moments) into the neuron order given by one permutation per encoder
    layer. Encoder layer l has its columns and bias moved by permutation l and
    its input rows by permutation l-1; the first decoder layer's input rows
    follow the latent permutation. Deeper decoder layers are untouched.
    """
    encoderPermutations = [p if isinstance(p, Permutation) else Permutation(p) for p in encoderPermutations]
    numLayers = sum(1 for name in arrays if name.startswith(f"{ENCODER_PREFIX}.") and name.endswith(".bias"))
    if len(encoderPermutations) != numLayers:
        raise ValueError(f"{len(encoderPermutations)} permutations for {numLayers} encoder layers")
    moved = {}
    for name, array in arrays.items():
        prefix, index, kind = name.split(".")
        index = int(index)
        if prefix == ENCODER_PREFIX:
            permutation = encoderPermutations[index]
            if kind == "bias":
                array = permutation.applyToVector(array)
            else:
                if index > 0:
                    array = encoderPermutations[index - 1].applyToRows(array)
                array = permutation.applyToColumns(array)
        elif index == 0 and kind == "weights":
            array = encoderPermutations[-1].applyToRows(array)
        moved[name] = array
    return moved


def adaptDecoder(params, globalEncoder, latentPermutation, data, rng, frozenEpochs=FROZEN_EPOCHS,
                 jointEpochs=JOINT_EPOCHS, batchSize=DEFAULT_BATCH_SIZE, tape=None,
                 learningRate=DEFAULT_LEARNING_RATE):
    """
    Local decoder adaptation: adopt the global encoder, permute decoder inputs,
    fine-tune the decoder with the encoder frozen, then fine-tune both jointly.
    """
    adapted = applyDecoderPermutation(params, globalEncoder, latentPermutation)
    if tape is None:
        tape = GradientTape(adapted.namedArrays(), learningRate=learningRate)
    frozenPhase = trainLocalBae(adapted, data, rng, epochs=frozenEpochs, batchSize=batchSize, tape=tape,
                                frozenEncoder=True, untilConvergence=False)
    jointPhase = trainLocalBae(frozenPhase.params, data, rng, epochs=jointEpochs, batchSize=batchSize,
                               tape=tape, untilConvergence=False)
    return LocalTrainingResult(jointPhase.params, frozenPhase.history + jointPhase.history[1:])


def computeLatents(encoder, data):
    """
    H = f_phi*(X): encode every (n, t) row with the aligned global encoder.

    Returns a LatentSequenceTensor of shape (N, T, d) carrying data.labels.
    """
    checkWidth("computeLatents", data.numFeatures, encoder.inputWidth)
    rows = data.rows()
    latent = encoder.forward(rows) if rows.shape[0] else np.zeros((0, encoder.outputWidth))
    return LatentSequenceTensor(latent.reshape(data.numSamples, data.numSteps, encoder.outputWidth), data.labels)
