from dataclasses import dataclass, field

import numpy as np

from .activations import getActivation
from .errors import DimensionError, checkWidth


@dataclass
class DenseLayer:
    """
    Fully connected layer with the neuron-column convention.

    Column i of `weights` (shape fanIn x fanOut) holds the incoming weights of
    output neuron i, so permuting neurons means permuting columns.
    """
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise DimensionError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} does not match weights {self.weights.shape}"
            )
        getActivation(self.activation)

    @property
    def inputWidth(self):
        return self.weights.shape[0]

    @property
    def outputWidth(self):
        return self.weights.shape[1]

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def initDenseLayer(fanIn, fanOut, activation, rng):
    """
    Create a layer with weights and bias drawn from uniform(-1/sqrt(fanIn), 1/sqrt(fanIn)).
    """
    bound = 1.0 / np.sqrt(fanIn)
    weights = rng.uniform(-bound, bound, size=(fanIn, fanOut))
    bias = rng.uniform(-bound, bound, size=fanOut)
    return DenseLayer(weights, bias, activation)


def _asRows(inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    return inputs.reshape(1, -1) if inputs.ndim == 1 else inputs


def denseForwardCached(layer, inputs):
    """
    Forward pass that also returns the cache needed by denseBackward.

    Args:
        layer: DenseLayer
        inputs: array of shape (batch, fanIn)

    Returns (outputs, cache) where cache = (inputs, preActivation, outputs).
    """
    if inputs.shape[-1] != layer.inputWidth:
        raise DimensionError(
            f"input shape {inputs.shape} incompatible with weights {layer.weights.shape}"
        )
    function, _ = getActivation(layer.activation)
    preActivation = inputs @ layer.weights + layer.bias
    outputs = function(preActivation)
    return outputs, (inputs, preActivation, outputs)


def denseForward(layer, inputs):
    """
    Compute activation(W^T x + b) for a single vector or a batch of row vectors.
    """
    single = np.ndim(inputs) == 1
    outputs, _ = denseForwardCached(layer, _asRows(inputs))
    return outputs[0] if single else outputs


def denseBackward(layer, cache, gradOutput, skipActivation=False):
    """
    Backpropagate through one layer.

    When skipActivation is set, gradOutput is already the gradient with respect
    to the pre-activation (used for the fused sigmoid + BCE output).

    Returns (gradInput, gradWeights, gradBias).
    """
    inputs, _, outputs = cache
    if skipActivation:
        gradPre = gradOutput
    else:
        _, derivative = getActivation(layer.activation)
        gradPre = gradOutput * derivative(outputs)
    gradWeights = inputs.T @ gradPre
    gradBias = gradPre.sum(axis=0)
    gradInput = gradPre @ layer.weights.T
    return gradInput, gradWeights, gradBias


@dataclass
class LayerStack:
    """Ordered stack of dense layers (an encoder, a decoder or a head)."""
    layers: list = field(default_factory=list)

    def __post_init__(self):
        for previous, current in zip(self.layers, self.layers[1:]):
            checkWidth("layer stack", current.inputWidth, previous.outputWidth)

    @property
    def inputWidth(self):
        return self.layers[0].inputWidth

    @property
    def outputWidth(self):
        return self.layers[-1].outputWidth

    @property
    def shapes(self):
        return [layer.weights.shape for layer in self.layers]

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, index):
        return self.layers[index]

    def copy(self):
        return LayerStack([layer.copy() for layer in self.layers])

    def namedArrays(self, prefix="layers"):
        """Return {name: array} references, in layer order, for optimizers and aggregation."""
        arrays = {}
        for index, layer in enumerate(self.layers):
            arrays[f"{prefix}.{index}.weights"] = layer.weights
            arrays[f"{prefix}.{index}.bias"] = layer.bias
        return arrays

    def forward(self, inputs):
        single = np.ndim(inputs) == 1
        outputs, _ = self.forwardCached(_asRows(inputs))
        return outputs[0] if single else outputs

    def forwardCached(self, inputs):
        caches = []
        outputs = inputs
        for layer in self.layers:
            outputs, cache = denseForwardCached(layer, outputs)
            caches.append(cache)
        return outputs, caches

    def backward(self, caches, gradOutput, tape=None, prefix="layers", skipLastActivation=False):
        """
        Backpropagate through the whole stack, accumulating parameter gradients
        into `tape` under the same names produced by namedArrays(prefix).

        Returns the gradient with respect to the stack input.
        """
        grad = gradOutput
        lastIndex = len(self.layers) - 1
        for index in range(lastIndex, -1, -1):
            layer = self.layers[index]
            grad, gradWeights, gradBias = denseBackward(
                layer, caches[index], grad, skipActivation=skipLastActivation and index == lastIndex
            )
            if tape is not None:
                tape.accumulate(f"{prefix}.{index}.weights", gradWeights)
                tape.accumulate(f"{prefix}.{index}.bias", gradBias)
        return grad


def buildLayerStack(widths, activations, rng):
    """
    Build a stack from a list of widths [in, h1, ..., out] and one activation per layer.
    """
    if len(activations) != len(widths) - 1:
        raise ValueError(f"{len(widths) - 1} layers need as many activations, got {len(activations)}")
    return LayerStack([
        initDenseLayer(fanIn, fanOut, activation, rng)
        for fanIn, fanOut, activation in zip(widths[:-1], widths[1:], activations)
    ])
