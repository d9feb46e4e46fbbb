from dataclasses import dataclass

import numpy as np

from lib_nn.errors import DimensionError


@dataclass
class BinarySequenceTensor:
    """
    N x T x D multi-hot observations with one binary label per sample.

    `data` is stored as uint8 with every element in {0, 1}.
    """
    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.data.ndim != 3:
            raise DimensionError(f"BinarySequenceTensor needs (N, T, D) data, got shape {self.data.shape}")
        if self.labels.shape[0] != self.data.shape[0]:
            raise DimensionError(f"{self.labels.shape[0]} labels for {self.data.shape[0]} samples")
        if self.data.size and not np.isin(self.data, (0, 1)).all():
            raise ValueError("BinarySequenceTensor data must be binary")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("BinarySequenceTensor labels must be binary")
        self.data = self.data.astype(np.uint8, copy=False)

    @property
    def numSamples(self):
        return self.data.shape[0]

    @property
    def numSteps(self):
        return self.data.shape[1]

    @property
    def numFeatures(self):
        return self.data.shape[2]

    @property
    def density(self):
        return float(self.data.mean()) if self.data.size else 0.0

    def rows(self):
        """Per-(n, t) observation rows as float64, shape (N*T, D)."""
        return self.data.reshape(-1, self.numFeatures).astype(np.float64)

    def subset(self, indices):
        return BinarySequenceTensor(self.data[indices], self.labels[indices])


@dataclass
class LatentSequenceTensor:
    """N x T x d real-valued latent trajectories H^(k), labels carried alongside."""
    data: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.data.ndim != 3:
            raise DimensionError(f"LatentSequenceTensor needs (N, T, d) data, got shape {self.data.shape}")
        if self.labels.shape[0] != self.data.shape[0]:
            raise DimensionError(f"{self.labels.shape[0]} labels for {self.data.shape[0]} samples")

    @property
    def numSamples(self):
        return self.data.shape[0]

    @property
    def numSteps(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


def concatenateTensors(tensors):
    """Stack cohorts along the sample axis, keeping their order."""
    first = tensors[0]
    data = np.concatenate([tensor.data for tensor in tensors], axis=0)
    labels = np.concatenate([tensor.labels for tensor in tensors], axis=0)
    return type(first)(data, labels)
