import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from lib_nn.errors import DimensionError
from lib_nn.losses import gaussianKl
from lib_stage1.matchAggregation import asAlpha, weightedSum

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
DEFAULT_TEMPERATURE = 5.0
DIVERGENCE_ESTIMATORS = ("moment", "monte_carlo")
MONTE_CARLO_DRAWS = 4096

'''
DISTRIBUTION-AWARE AGGREGATION ANNOTATION:

- Each hospital summarizes its posterior mixture q_t(z) = (1/N) sum_n N(mu_nt, var_nt)
  at every time step by one diagonal Gaussian with the mixture's mean and
  variance (law of total variance). Only these T x 2 x d_z numbers leave the client.

- d_kj = (1/T) sum_t KL(q_t^k || q_t^j); d_bar_k is the mean of row k off the diagonal.

- alpha_tilde_k is proportional to alpha_k * exp(-tau * d_bar_k). Subtracting
  min(d_bar) before exponentiating leaves the normalized result unchanged.
'''


@dataclass
class LatentDistributionSummary:
    """Per-timestep moment-matched diagonal Gaussians, each array (T, d_z)."""
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape != self.variances.shape:
            raise DimensionError(
                f"summary means {self.means.shape} and variances {self.variances.shape} must share a (T, d_z) shape"
            )
        if np.any(self.variances <= 0.0):
            raise ValueError("summary variances must be strictly positive")

    @property
    def numSteps(self):
        return self.means.shape[0]

    @property
    def width(self):
        return self.means.shape[1]


def summarizeLatentDistribution(posteriorMeans, posteriorVariances):
    """
    Moment-match the per-timestep posterior mixture of one hospital.

    Args:
        posteriorMeans: (N, T, d_z) per-sample posterior means
        posteriorVariances: (N, T, d_z) per-sample posterior variances

    Returns a LatentDistributionSummary with variances floored at VARIANCE_FLOOR.
    """
    posteriorMeans = np.asarray(posteriorMeans, dtype=np.float64)
    posteriorVariances = np.asarray(posteriorVariances, dtype=np.float64)
    if posteriorMeans.shape != posteriorVariances.shape or posteriorMeans.ndim != 3:
        raise DimensionError(
            f"posterior moments must be two (N, T, d_z) arrays, got {posteriorMeans.shape} and {posteriorVariances.shape}"
        )
    if posteriorMeans.shape[0] == 0:
        raise ValueError("summarizeLatentDistribution: no samples")
    if posteriorMeans.shape[0] < 2:
        logger.warning("Latent summary from a single sample: between-sample variance is zero")
    means = posteriorMeans.mean(axis=0)
    variances = posteriorVariances.mean(axis=0) + posteriorMeans.var(axis=0)
    return LatentDistributionSummary(means, np.maximum(variances, VARIANCE_FLOOR))


def _checkComparable(a, b):
    if a.means.shape != b.means.shape:
        raise DimensionError(f"summaries of shape {a.means.shape} and {b.means.shape} cannot be compared")


def _monteCarloKl(a, b, rng, draws):
    # KL(a_t || b_t) estimated as E_a[log a - log b], per timestep
    aSigma, bSigma = np.sqrt(a.variances), np.sqrt(b.variances)
    samples = a.means + aSigma * rng.standard_normal((draws, *a.means.shape))
    logRatio = norm.logpdf(samples, a.means, aSigma) - norm.logpdf(samples, b.means, bSigma)
    return logRatio.sum(axis=-1).mean(axis=0)


def temporalDivergence(a, b, estimator="moment", rng=None, draws=MONTE_CARLO_DRAWS):
    """
    Mean over timesteps of KL(a_t || b_t). Non-negative for the closed form;
    the Monte Carlo estimate is clamped at zero.
    """
    _checkComparable(a, b)
    if estimator == "moment":
        perStep = gaussianKl(a.means, a.variances, b.means, b.variances)
        return float(np.mean(perStep))
    if estimator == "monte_carlo":
        rng = rng if rng is not None else np.random.default_rng(0)
        return max(float(np.mean(_monteCarloKl(a, b, rng, draws))), 0.0)
    raise ValueError(f"unknown divergence estimator '{estimator}', expected one of {DIVERGENCE_ESTIMATORS}")


def divergenceMatrix(summaries, estimator="moment", seed=0):
    """K x K matrix d[k, j] = temporalDivergence(summaries[k], summaries[j]); zero diagonal."""
    numHospitals = len(summaries)
    rng = np.random.default_rng(seed)
    matrix = np.zeros((numHospitals, numHospitals))
    for k in range(numHospitals):
        for j in range(numHospitals):
            if k != j:
                matrix[k, j] = temporalDivergence(summaries[k], summaries[j], estimator, rng)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("divergence matrix has non-finite entries")
    return matrix


def averageDivergence(matrix):
    """d_bar_k: mean over j != k of d[k, j]."""
    matrix = np.asarray(matrix, dtype=np.float64)
    numHospitals = matrix.shape[0]
    if numHospitals < 2:
        return np.zeros(numHospitals)
    return (matrix.sum(axis=1) - np.diag(matrix)) / (numHospitals - 1)


def weightsFromAverageDivergence(averages, alpha, tau=DEFAULT_TEMPERATURE):
    averages = np.asarray(averages, dtype=np.float64)
    alpha = asAlpha(alpha)
    if tau < 0:
        raise ValueError(f"temperature tau must be >= 0, got {tau}")
    if averages.shape != alpha.shape:
        raise DimensionError(f"{averages.shape[0]} divergences for {alpha.shape[0]} weights")
    if alpha.shape[0] == 1:
        return np.ones(1)
    # Exact reduction to alpha whenever the exponent carries no information
    if tau == 0 or np.ptp(averages) == 0.0:
        return alpha.copy()
    unnormalized = alpha * np.exp(-tau * (averages - averages.min()))
    return unnormalized / unnormalized.sum()


def distributionWeights(divergences, alpha, tau=DEFAULT_TEMPERATURE):
    """
    alpha_tilde_k = alpha_k exp(-tau d_bar_k) / sum_j alpha_j exp(-tau d_bar_j).

    K = 1 returns [1.0].
    """
    divergences = np.asarray(divergences, dtype=np.float64)
    if divergences.ndim != 2 or divergences.shape[0] != divergences.shape[1]:
        raise DimensionError(f"divergence matrix must be square, got shape {divergences.shape}")
    return weightsFromAverageDivergence(averageDivergence(divergences), alpha, tau)


def distributionAwareAggregate(paramSets, weights, groups=None):
    """
    Component-wise weighted average of TCVAE parameter sets; every group
    (posterior, prior, likelihood, backbone) uses the same weights.
    """
    alpha = asAlpha(weights)
    if len(paramSets) == 0 or len(paramSets) != alpha.shape[0]:
        raise ValueError(f"{len(paramSets)} parameter sets for {alpha.shape[0]} weights")
    result = paramSets[0].copy()
    groups = groups if groups is not None else result.componentGroups
    for group in groups:
        groupSets = [paramSet.groupArrays(group) for paramSet in paramSets]
        for name, target in result.groupArrays(group).items():
            arrays = [named[name] for named in groupSets]
            if any(array.shape != target.shape for array in arrays):
                raise DimensionError(f"distributionAwareAggregate: '{name}' shapes differ across hospitals")
            target[...] = weightedSum(arrays, alpha)
    return result
