import numpy as np
from scipy.spatial.distance import cdist, pdist

from lib_nn.errors import DimensionError

MMD_MAX_SAMPLES = 1000


def prevalence(tensor):
    """pi_d: mean activation of each feature over all (n, t)."""
    if tensor.numSamples == 0 or tensor.numSteps == 0:
        raise ValueError("prevalence of an empty tensor is undefined")
    return tensor.data.mean(axis=(0, 1), dtype=np.float64)


def perTimestepPrevalence(tensor):
    """T x D matrix of per-timestep means over samples."""
    if tensor.numSamples == 0:
        raise ValueError("prevalence of an empty tensor is undefined")
    return tensor.data.mean(axis=0, dtype=np.float64)


def _checkComparable(real, syn):
    if real.data.shape[1:] != syn.data.shape[1:]:
        raise DimensionError(f"real (T, D) = {real.data.shape[1:]} but synthetic (T, D) = {syn.data.shape[1:]}")


def r2Score(realMeans, synMeans):
    residual = np.sum((realMeans - synMeans) ** 2)
    total = np.sum((realMeans - realMeans.mean()) ** 2)
    if total == 0.0:
        raise ValueError("R^2 undefined: real feature means have zero variance (degenerate real tensor)")
    return float(1.0 - residual / total)


def r2Fidelity(real, syn):
    """
    Coefficient of determination between the per-(t, d) mean trajectories:
    1 - sum (mu_real - mu_syn)^2 / sum (mu_real - mean(mu_real))^2.
    """
    _checkComparable(real, syn)
    return r2Score(perTimestepPrevalence(real), perTimestepPrevalence(syn))


def prevalenceR2PerTimestep(real, syn):
    """R^2 over features computed separately at each timestep, then averaged (degenerate steps skipped)."""
    _checkComparable(real, syn)
    realMeans = perTimestepPrevalence(real)
    synMeans = perTimestepPrevalence(syn)
    scores = [
        r2Score(realMeans[t], synMeans[t])
        for t in range(realMeans.shape[0])
        if np.ptp(realMeans[t]) > 0.0
    ]
    return float(np.mean(scores)) if scores else float("nan")


def flattenSamples(tensor):
    """One row per patient: the T*D bits as float64."""
    return tensor.data.reshape(tensor.numSamples, -1).astype(np.float64)


def _subsample(samples, maxSamples, seed):
    if samples.shape[0] <= maxSamples:
        return samples
    rng = np.random.default_rng(seed)
    return samples[np.sort(rng.choice(samples.shape[0], maxSamples, replace=False))]


def medianBandwidth(pooled):
    """Median off-diagonal pairwise squared distance; 1.0 when that median is 0."""
    median = float(np.median(pdist(pooled, "sqeuclidean")))
    return median if median > 0.0 else 1.0


def mmd(realFlat, synFlat, seed=0, maxSamples=MMD_MAX_SAMPLES):
    """
    Squared MMD with the Gaussian kernel k(x, y) = exp(-||x - y||^2 / h):
    mean k(x, x') + mean k(y, y') - 2 mean k(x, y), all pairs included.

    Each side is subsampled to at most `maxSamples` rows with the same seeded
    draw, and h is the median heuristic over the pooled subsample.
    """
    realFlat = np.asarray(realFlat, dtype=np.float64)
    synFlat = np.asarray(synFlat, dtype=np.float64)
    if realFlat.shape[0] < 2 or synFlat.shape[0] < 2:
        raise ValueError(f"MMD needs >= 2 samples per side, got {realFlat.shape[0]} and {synFlat.shape[0]}")
    if realFlat.shape[1] != synFlat.shape[1]:
        raise DimensionError(f"MMD sample widths differ: {realFlat.shape[1]} vs {synFlat.shape[1]}")
    x = _subsample(realFlat, maxSamples, seed)
    y = _subsample(synFlat, maxSamples, seed)
    bandwidth = medianBandwidth(np.concatenate([x, y], axis=0))

    def kernelMean(a, b):
        return np.exp(-cdist(a, b, "sqeuclidean") / bandwidth).mean()

    return float(kernelMean(x, x) + kernelMean(y, y) - 2.0 * kernelMean(x, y))
