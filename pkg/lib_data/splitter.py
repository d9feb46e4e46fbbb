import math

import numpy as np
from sklearn.model_selection import train_test_split

DEFAULT_RATIOS = (0.70, 0.15, 0.15)
MIN_SAMPLES = 10


def _canStratify(labels):
    _, counts = np.unique(labels, return_counts=True)
    return len(counts) > 1 and counts.min() >= 2


def _heldOutSize(ratio, numSamples, bothClasses):
    size = math.floor(ratio * numSamples + 1e-9)
    # A held-out split needs room for one sample of each class
    return max(size, 2) if bothClasses else size


def splitIndices(labels, ratios=DEFAULT_RATIOS, seed=0):
    """
    Stratified 70/15/15-style partition of sample indices.

    Held-out sizes are floor(ratio * N) (raised to 2 when both classes are
    present), and the remainder goes to train.

    Returns (trainIdx, valIdx, testIdx), each sorted.
    """
    labels = np.asarray(labels)
    numSamples = labels.shape[0]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three values summing to 1, got {ratios}")
    if numSamples < MIN_SAMPLES:
        raise ValueError(f"cannot split a cohort of {numSamples} samples (need at least {MIN_SAMPLES})")

    stratify = _canStratify(labels)
    numVal = _heldOutSize(ratios[1], numSamples, stratify)
    numTest = _heldOutSize(ratios[2], numSamples, stratify)

    indices = np.arange(numSamples)
    trainValIdx, testIdx = train_test_split(
        indices, test_size=numTest, random_state=seed,
        stratify=labels if stratify else None,
    )
    stratifyRest = _canStratify(labels[trainValIdx])
    trainIdx, valIdx = train_test_split(
        trainValIdx, test_size=numVal, random_state=seed + 1,
        stratify=labels[trainValIdx] if stratifyRest else None,
    )
    return np.sort(trainIdx), np.sort(valIdx), np.sort(testIdx)


def splitCohort(tensor, ratios=DEFAULT_RATIOS, seed=0):
    """Split a BinarySequenceTensor into (train, val, test) cohorts."""
    trainIdx, valIdx, testIdx = splitIndices(tensor.labels, ratios, seed)
    return tensor.subset(trainIdx), tensor.subset(valIdx), tensor.subset(testIdx)
