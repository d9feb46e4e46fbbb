import logging

import numpy as np
from sklearn.linear_model import LogisticRegression

from lib_nn.errors import DimensionError

logger = logging.getLogger(__name__)

ATTACKERS = ("threshold", "logistic")
PRIVACY_MAX_SAMPLES = 2000
DISTANCE_CHUNK = 1024
LEAKAGE_THRESHOLD = 0.9

'''
PRIVACY ANNOTATION:

Records are compared as flattened T*D bit vectors under Hamming distance,
computed as |a| + |b| - 2 a.b so the work is one matrix product per chunk.
Rows are put in content order before any seeded subsampling or shuffling, so
both metrics are invariant to the order of the input records.

MIR: the attacker flags a record as a member when its distance to the
nearest synthetic record is at most a threshold. Members and holdout records
are each split 50/50; the threshold that maximizes TPR - FPR on the first half
is applied to the second half, whose TPR - FPR is the reported advantage.

NNAA: for each synthetic record, is its nearest neighbour in
real U (synthetic minus itself) a real record? Only a strictly closer real
record counts; ties go to the synthetic side.
'''


def flatBits(tensor):
    return tensor.data.reshape(tensor.numSamples, -1).astype(np.float64)


def hammingDistances(a, b):
    """Pairwise Hamming distances (bit counts) between rows of two 0/1 matrices."""
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"record widths differ: {a.shape[1]} vs {b.shape[1]}")
    return a.sum(axis=1)[:, None] + b.sum(axis=1)[None, :] - 2.0 * (a @ b.T)


def nearestDistances(records, references, excludeSelf=False):
    """Distance from every record to its nearest reference row, chunked over records."""
    nearest = np.empty(records.shape[0])
    for start in range(0, records.shape[0], DISTANCE_CHUNK):
        block = hammingDistances(records[start:start + DISTANCE_CHUNK], references)
        if excludeSelf:
            rows = np.arange(block.shape[0])
            block[rows, start + rows] = np.inf
        nearest[start:start + DISTANCE_CHUNK] = block.min(axis=1) if block.shape[1] else np.inf
    return nearest


def canonicalRows(rows):
    """Rows sorted lexicographically by content; equal rows are interchangeable."""
    if rows.shape[0] < 2:
        return rows
    return rows[np.lexsort(rows.T[::-1])]


def _subsampleRows(rows, size, rng):
    rows = canonicalRows(rows)
    if rows.shape[0] <= size:
        return rows
    return rows[np.sort(rng.choice(rows.shape[0], size, replace=False))]


def _bestThreshold(memberDistances, holdoutDistances):
    candidates = np.unique(np.concatenate([memberDistances, holdoutDistances]))
    bestThreshold, bestAdvantage = -np.inf, 0.0
    for threshold in candidates:
        advantage = np.mean(memberDistances <= threshold) - np.mean(holdoutDistances <= threshold)
        if advantage > bestAdvantage:
            bestThreshold, bestAdvantage = threshold, advantage
    return bestThreshold


def mir(members, holdout, syn, seed=0, attacker="threshold", maxSamples=PRIVACY_MAX_SAMPLES):
    """
    Membership inference advantage Pr(a(x_mem) = 1) - Pr(a(x_non) = 1), in [-1, 1].

    Args:
        members: records the generator was trained on
        holdout: real records it never saw
        syn: synthetic cohort
        attacker: "threshold" (distance cut-off) or "logistic" (logistic
            regression on the nearest-synthetic distance)
    """
    if attacker not in ATTACKERS:
        raise ValueError(f"unknown attacker '{attacker}', expected one of {ATTACKERS}")
    if members.numSamples < 2 or holdout.numSamples < 2:
        raise ValueError("MIR needs at least 2 member and 2 holdout records")
    if syn.numSamples == 0:
        raise ValueError("MIR needs a non-empty synthetic cohort")
    rng = np.random.default_rng(seed)
    synRows = _subsampleRows(flatBits(syn), maxSamples, rng)
    memberDistances = nearestDistances(_subsampleRows(flatBits(members), maxSamples, rng), synRows)
    holdoutDistances = nearestDistances(_subsampleRows(flatBits(holdout), maxSamples, rng), synRows)

    memberOrder = rng.permutation(memberDistances.shape[0])
    holdoutOrder = rng.permutation(holdoutDistances.shape[0])
    memberCalibration, memberEval = np.array_split(memberDistances[memberOrder], 2)
    holdoutCalibration, holdoutEval = np.array_split(holdoutDistances[holdoutOrder], 2)

    if attacker == "threshold":
        threshold = _bestThreshold(memberCalibration, holdoutCalibration)
        memberFlags = memberEval <= threshold
        holdoutFlags = holdoutEval <= threshold
    else:
        features = np.concatenate([memberCalibration, holdoutCalibration])[:, None]
        targets = np.concatenate([np.ones(memberCalibration.shape[0]), np.zeros(holdoutCalibration.shape[0])])
        model = LogisticRegression(random_state=seed).fit(features, targets)
        memberFlags = model.predict(memberEval[:, None]) == 1
        holdoutFlags = model.predict(holdoutEval[:, None]) == 1
    return float(np.mean(memberFlags) - np.mean(holdoutFlags))


def nnaa(real, syn, seed=0, maxSamples=PRIVACY_MAX_SAMPLES):
    """
    Fraction of synthetic records whose nearest neighbour in the pooled set
    real U (syn minus itself) is real, with both sides subsampled to the same size.
    """
    if real.numSamples == 0 or syn.numSamples == 0:
        raise ValueError("NNAA needs non-empty real and synthetic sets")
    size = min(real.numSamples, syn.numSamples, maxSamples)
    rng = np.random.default_rng(seed)
    realRows = _subsampleRows(flatBits(real), size, rng)
    synRows = _subsampleRows(flatBits(syn), size, rng)
    toReal = nearestDistances(synRows, realRows)
    toSyn = nearestDistances(synRows, synRows, excludeSelf=True)
    return float(np.mean(toReal < toSyn))
