from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DimensionError

'''
LSTM ANNOTATION:

Two stacked LSTM cells. Gate pre-activations are laid out as [input, forget,
cell, output] blocks of width H along the last axis of each cell's weights.
Each cell's weights have shape (inputWidth + H, 4H): the rows multiply the
concatenation [x_t; h_{t-1}].

The backbone output at step t is the top cell's hidden vector s_t.
'''


@dataclass
class LstmCell:
    weights: np.ndarray
    bias: np.ndarray

    @property
    def hiddenWidth(self):
        return self.bias.shape[0] // 4

    @property
    def inputWidth(self):
        return self.weights.shape[0] - self.hiddenWidth

    def copy(self):
        return LstmCell(self.weights.copy(), self.bias.copy())


@dataclass
class LstmState:
    """Per-cell hidden and cell vectors, each of shape (batch, H)."""
    hidden: list
    cell: list

    def copy(self):
        return LstmState([h.copy() for h in self.hidden], [c.copy() for c in self.cell])


@dataclass
class LstmBackbone:
    cells: list

    @property
    def inputWidth(self):
        return self.cells[0].inputWidth

    @property
    def outputWidth(self):
        return self.cells[-1].hiddenWidth

    def copy(self):
        return LstmBackbone([cell.copy() for cell in self.cells])

    def namedArrays(self, prefix):
        arrays = {}
        for index, cell in enumerate(self.cells):
            arrays[f"{prefix}.{index}.weights"] = cell.weights
            arrays[f"{prefix}.{index}.bias"] = cell.bias
        return arrays


def initLstmBackbone(inputWidth, hiddenWidth, rng, numLayers=2):
    """
    Build a stacked LSTM with uniform(-1/sqrt(fanIn), 1/sqrt(fanIn)) gates and the
    forget-gate bias shifted by +1.
    """
    cells = []
    cellInput = inputWidth
    for _ in range(numLayers):
        fanIn = cellInput + hiddenWidth
        bound = 1.0 / np.sqrt(fanIn)
        weights = rng.uniform(-bound, bound, size=(fanIn, 4 * hiddenWidth))
        bias = rng.uniform(-bound, bound, size=4 * hiddenWidth)
        bias[hiddenWidth:2 * hiddenWidth] += 1.0
        cells.append(LstmCell(weights, bias))
        cellInput = hiddenWidth
    return LstmBackbone(cells)


def zeroState(backbone, batchSize):
    """The all-zeros recurrent state s_0."""
    hidden = [np.zeros((batchSize, cell.hiddenWidth)) for cell in backbone.cells]
    cell = [np.zeros((batchSize, c.hiddenWidth)) for c in backbone.cells]
    return LstmState(hidden, cell)


def _cellForward(cell, inputs, hiddenPrev, cellPrev):
    width = cell.hiddenWidth
    concat = np.concatenate([inputs, hiddenPrev], axis=1)
    gates = concat @ cell.weights + cell.bias
    inputGate = expit(gates[:, :width])
    forgetGate = expit(gates[:, width:2 * width])
    candidate = np.tanh(gates[:, 2 * width:3 * width])
    outputGate = expit(gates[:, 3 * width:])
    cellNext = forgetGate * cellPrev + inputGate * candidate
    cellTanh = np.tanh(cellNext)
    hiddenNext = outputGate * cellTanh
    cache = (concat, inputGate, forgetGate, candidate, outputGate, cellPrev, cellTanh)
    return hiddenNext, cellNext, cache


def _cellBackward(cell, cache, gradHidden, gradCell):
    concat, inputGate, forgetGate, candidate, outputGate, cellPrev, cellTanh = cache
    gradOutputGate = gradHidden * cellTanh
    gradCellTotal = gradCell + gradHidden * outputGate * (1.0 - cellTanh ** 2)
    gradGates = np.concatenate([
        gradCellTotal * candidate * inputGate * (1.0 - inputGate),
        gradCellTotal * cellPrev * forgetGate * (1.0 - forgetGate),
        gradCellTotal * inputGate * (1.0 - candidate ** 2),
        gradOutputGate * outputGate * (1.0 - outputGate),
    ], axis=1)
    gradWeights = concat.T @ gradGates
    gradBias = gradGates.sum(axis=0)
    gradConcat = gradGates @ cell.weights.T
    inputWidth = cell.inputWidth
    return gradConcat[:, :inputWidth], gradConcat[:, inputWidth:], gradCellTotal * forgetGate, gradWeights, gradBias


def lstmStepCached(backbone, state, inputs):
    """
    Advance the recurrent state by one step.

    Returns (newState, output, cache) with output = top-cell hidden vector.
    """
    if state is None:
        raise ValueError("lstmStep: recurrent state is not initialized")
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != backbone.inputWidth:
        raise DimensionError(f"lstmStep: input shape {inputs.shape}, expected (batch, {backbone.inputWidth})")
    if state.hidden[0].shape[0] != inputs.shape[0]:
        raise DimensionError(f"lstmStep: state batch {state.hidden[0].shape[0]} != input batch {inputs.shape[0]}")
    hiddenNext, cellNext, caches = [], [], []
    layerInput = inputs
    for index, cell in enumerate(backbone.cells):
        hidden, cellState, cache = _cellForward(cell, layerInput, state.hidden[index], state.cell[index])
        hiddenNext.append(hidden)
        cellNext.append(cellState)
        caches.append(cache)
        layerInput = hidden
    return LstmState(hiddenNext, cellNext), hiddenNext[-1], caches


def lstmStep(backbone, state, inputs):
    """Single-vector or batched step; returns (newState, output)."""
    single = np.ndim(inputs) == 1
    newState, output, _ = lstmStepCached(backbone, state, np.atleast_2d(inputs))
    return newState, (output[0] if single else output)


def lstmStepBackward(backbone, caches, gradOutput, gradStateNext=None, tape=None, prefix="backbone"):
    """
    Backpropagate one step.

    Args:
        caches: cache list from lstmStepCached
        gradOutput: dLoss/d(output) at this step, shape (batch, H_top)
        gradStateNext: dLoss/d(state) flowing back from step t+1, or None
        tape: GradientTape receiving parameter gradients under `prefix`

    Returns (gradInput, gradStatePrev).
    """
    numCells = len(backbone.cells)
    if gradStateNext is None:
        gradHidden = [np.zeros_like(cache[4]) for cache in caches]
        gradCell = [np.zeros_like(cache[4]) for cache in caches]
    else:
        gradHidden = [g.copy() for g in gradStateNext.hidden]
        gradCell = list(gradStateNext.cell)
    gradHidden[-1] = gradHidden[-1] + gradOutput
    gradHiddenPrev = [None] * numCells
    gradCellPrev = [None] * numCells
    gradBelow = None
    for index in range(numCells - 1, -1, -1):
        if gradBelow is not None:
            gradHidden[index] = gradHidden[index] + gradBelow
        gradBelow, gradHiddenPrev[index], gradCellPrev[index], gradWeights, gradBias = _cellBackward(
            backbone.cells[index], caches[index], gradHidden[index], gradCell[index]
        )
        if tape is not None:
            tape.accumulate(f"{prefix}.{index}.weights", gradWeights)
            tape.accumulate(f"{prefix}.{index}.bias", gradBias)
    return gradBelow, LstmState(gradHiddenPrev, gradCellPrev)
