from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from lib_nn.errors import DimensionError

COST_METRICS = {"euclidean": "sqeuclidean", "cosine": "cosine"}


@dataclass(eq=False)
class Permutation:
    """
    Bijection on {0..m-1}; mapping[i] is the destination index of source neuron i.
    """
    mapping: np.ndarray

    def __post_init__(self):
        self.mapping = np.asarray(self.mapping, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(self.mapping), np.arange(self.mapping.shape[0])):
            raise ValueError(f"not a permutation: {self.mapping.tolist()}")

    @classmethod
    def identity(cls, size):
        return cls(np.arange(size))

    @property
    def size(self):
        return self.mapping.shape[0]

    @property
    def isIdentity(self):
        return bool(np.array_equal(self.mapping, np.arange(self.size)))

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.mapping, other.mapping)

    def __repr__(self):
        return f"Permutation({self.mapping.tolist()})"

    def inverse(self):
        inverse = np.empty_like(self.mapping)
        inverse[self.mapping] = np.arange(self.size)
        return Permutation(inverse)

    def applyToVector(self, vector):
        moved = np.empty_like(vector)
        moved[self.mapping] = vector
        return moved

    def applyToRows(self, matrix):
        """Row i of `matrix` moves to row mapping[i]."""
        if matrix.shape[0] != self.size:
            raise DimensionError(f"permutation of size {self.size} applied to {matrix.shape[0]} rows")
        moved = np.empty_like(matrix)
        moved[self.mapping] = matrix
        return moved

    def applyToColumns(self, matrix):
        """Column i of `matrix` moves to column mapping[i]."""
        if matrix.shape[1] != self.size:
            raise DimensionError(f"permutation of size {self.size} applied to {matrix.shape[1]} columns")
        moved = np.empty_like(matrix)
        moved[:, self.mapping] = matrix
        return moved


def neuronCost(a, b, metric="euclidean"):
    """Similarity cost c(a, b) between two neuron vectors ([incoming weights; bias])."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"neuronCost: lengths {a.shape} and {b.shape} differ")
    return float(costMatrix(a[None, :], b[None, :], metric)[0, 0])


def costMatrix(localNeurons, referenceNeurons, metric="euclidean"):
    """
    Cost matrix with entry (i, j) = c(local neuron i, reference neuron j).

    Neurons are rows here (one row per neuron column of the weight matrix).
    """
    if metric not in COST_METRICS:
        raise ValueError(f"unknown neuron cost '{metric}', expected one of {sorted(COST_METRICS)}")
    return cdist(localNeurons, referenceNeurons, metric=COST_METRICS[metric])


def hungarianSolve(cost):
    """
    Minimum-cost assignment of local neuron i to reference position mapping[i].

    Raises ValueError for non-square or non-finite cost matrices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"hungarianSolve: cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarianSolve: cost matrix has non-finite entries")
    rowIndices, columnIndices = linear_sum_assignment(cost)
    mapping = np.empty(cost.shape[0], dtype=np.int64)
    mapping[rowIndices] = columnIndices
    return Permutation(mapping)


def assignmentCost(cost, permutation):
    return float(np.asarray(cost)[np.arange(permutation.size), permutation.mapping].sum())
