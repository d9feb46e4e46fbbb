import logging
from dataclasses import dataclass

import numpy as np

from lib_nn.denseLayer import DenseLayer, LayerStack
from lib_nn.errors import DimensionError

from .permutation import Permutation, costMatrix, hungarianSolve

logger = logging.getLogger(__name__)

REFERENCE_MODES = ("fedavg_init", "majority_anchor")

'''
MATCHING AGGREGATION ANNOTATION:

- Hidden neurons of independently trained encoders are only defined up to a
  permutation. Averaging them position-by-position (FedAvg) mixes unrelated
  neurons, so the server first aligns each hospital's encoder to a reference.

- Layers are matched input-to-output. Before layer l is matched, its input
  rows are moved by the permutation solved for layer l-1, so the neuron
  vectors being compared live in the reference's coordinate system.

- A neuron vector is the column [incoming weights; bias].

- The latent layer is matched too; its permutation is what each hospital
  later applies to the input rows of its own decoder.
'''


@dataclass
class AggregationWeights:
    """Per-hospital weights alpha_k; non-negative and summing to 1."""
    alpha: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if self.alpha.size == 0 or np.any(self.alpha < 0.0) or abs(self.alpha.sum() - 1.0) > 1e-12:
            raise ValueError(f"aggregation weights must be non-negative and sum to 1, got {self.alpha.tolist()}")

    @classmethod
    def fromSampleSizes(cls, sizes):
        sizes = np.asarray(sizes, dtype=np.float64)
        if np.any(sizes <= 0):
            raise ValueError(f"sample sizes must be positive, got {sizes.tolist()}")
        return cls(sizes / sizes.sum())

    def __len__(self):
        return self.alpha.shape[0]


def asAlpha(weights):
    return weights.alpha if isinstance(weights, AggregationWeights) else np.asarray(weights, dtype=np.float64)


def weightedSum(arrays, alpha):
    total = np.zeros_like(arrays[0], dtype=np.float64)
    for array, weight in zip(arrays, alpha):
        total += weight * array
    return total


def fedavgAggregate(paramSets, weights):
    """
    Elementwise sum_k alpha_k * Theta^(k) over any parameter containers that
    expose namedArrays() and copy() (LayerStack, BaeParams, TcvaeParams).
    """
    alpha = asAlpha(weights)
    if len(paramSets) == 0 or len(paramSets) != alpha.shape[0]:
        raise ValueError(f"{len(paramSets)} parameter sets for {alpha.shape[0]} weights")
    namedSets = [paramSet.namedArrays() for paramSet in paramSets]
    reference = namedSets[0]
    for named in namedSets[1:]:
        if list(named) != list(reference) or any(named[key].shape != reference[key].shape for key in reference):
            raise DimensionError("fedavgAggregate: parameter sets have different shapes")

    result = paramSets[0].copy()
    for name, target in result.namedArrays().items():
        target[...] = weightedSum([named[name] for named in namedSets], alpha)
    return result


def neuronMatrix(layer, inputPermutation=None):
    """
    One row per output neuron: [incoming weights; bias], with the input rows
    first moved by `inputPermutation` (the previous layer's permutation).
    """
    weights = layer.weights if inputPermutation is None else inputPermutation.applyToRows(layer.weights)
    return np.concatenate([weights.T, layer.bias[:, None]], axis=1)


def matchEncoder(local, reference, metric="euclidean"):
    """
    Solve one permutation per encoder layer (latent layer included) aligning
    `local` to `reference`.

    Returns a list of Permutation, one per layer.
    """
    if local.shapes != reference.shapes:
        raise DimensionError(f"matchEncoder: local shapes {local.shapes} != reference shapes {reference.shapes}")
    permutations = []
    previous = None
    for localLayer, referenceLayer in zip(local.layers, reference.layers):
        cost = costMatrix(neuronMatrix(localLayer, previous), neuronMatrix(referenceLayer), metric)
        previous = hungarianSolve(cost)
        permutations.append(previous)
    return permutations


def permuteEncoder(encoder, permutations):
    """
    Move every layer's neurons (columns and bias) by its permutation and the
    next layer's input rows by the same permutation. The permuted encoder
    computes the same function up to the final latent permutation.
    """
    if len(permutations) != len(encoder.layers):
        raise ValueError(f"{len(permutations)} permutations for {len(encoder.layers)} layers")
    layers = []
    previous = None
    for layer, permutation in zip(encoder.layers, permutations):
        weights = layer.weights if previous is None else previous.applyToRows(layer.weights)
        layers.append(DenseLayer(
            permutation.applyToColumns(weights),
            permutation.applyToVector(layer.bias),
            layer.activation,
        ))
        previous = permutation
    return LayerStack(layers)


def matchedAverage(encoders, permutations, weights):
    """
    Permutation-aware averaging: W_l = sum_k alpha_k W_l^(k) Pi_l^(k), with the
    input rows of each layer pre-moved by the previous layer's permutation.
    """
    alpha = asAlpha(weights)
    if not len(encoders) == len(permutations) == alpha.shape[0]:
        raise ValueError(
            f"matchedAverage: {len(encoders)} encoders, {len(permutations)} permutation lists, {alpha.shape[0]} weights"
        )
    aligned = [permuteEncoder(encoder, perms) for encoder, perms in zip(encoders, permutations)]
    return fedavgAggregate(aligned, alpha)


def selectReference(roundIndex, previousGlobal, round0Locals, weights, mode="fedavg_init"):
    """
    Reference encoder for the matching step of round `roundIndex` (0-based).

    Round 0 uses either the FedAvg of the local encoders or the encoder of the
    largest hospital; every later round uses the previous matched global encoder.
    """
    if mode not in REFERENCE_MODES:
        raise ValueError(f"unknown reference mode '{mode}', expected one of {REFERENCE_MODES}")
    if roundIndex < 0:
        raise ValueError(f"round index must be >= 0, got {roundIndex}")
    if roundIndex >= 1:
        if previousGlobal is None:
            raise ValueError(f"round {roundIndex}: previous global encoder is required")
        return previousGlobal
    if not round0Locals:
        raise ValueError("round 0: local encoders are required to build the reference")
    if mode == "fedavg_init":
        return fedavgAggregate(round0Locals, weights)
    anchor = int(np.argmax(asAlpha(weights)))
    logger.debug("Majority anchor: hospital %d", anchor)
    return round0Locals[anchor].copy()


def aggregateEncoders(encoders, weights, reference, metric="euclidean"):
    """
    Full server step: match every encoder to `reference`, then average.

    Returns (globalEncoder, permutations per hospital).
    """
    permutations = [matchEncoder(encoder, reference, metric) for encoder in encoders]
    moved = sum(not perm.isIdentity for perms in permutations for perm in perms)
    logger.debug("Matching moved %d of %d layer permutations", moved, sum(len(p) for p in permutations))
    return matchedAverage(encoders, permutations, weights), permutations


def identityPermutations(encoder):
    return [Permutation.identity(layer.outputWidth) for layer in encoder.layers]
