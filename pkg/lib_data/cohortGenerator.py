from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .sequenceTensors import BinarySequenceTensor

'''
COHORT GENERATOR ANNOTATION:

Every hospital draws patients from the same linear-Gaussian state-space process:

    z_1 ~ N(0, I),   z_t = A z_{t-1} + sqrt(1 - rho^2) * eps_t

and emits multi-hot rows through Bernoulli logits

    logit_{t,d} = intercept + profile_d + (z_t L)_d + offset_d + shift * ramp_t * trend_d

The loadings L, transition A, power-law profile and temporal trend live in the
SharedFactorBank (common structure across hospitals). The per-hospital
offset vector is the covariate shift knob and `shift` is the temporal shift
knob. The intercept is solved by bracketing root search so that the mean
Bernoulli probability equals the sparsity target before any bit is drawn.

Labels come from a logistic rule on the time-averaged factor activity, with a
threshold solved the same way against the requested prevalence.
'''

LABEL_SHARPNESS = 4.0
CALIBRATION_BRACKET = (-40.0, 40.0)


@dataclass
class SharedFactorBank:
    loadings: np.ndarray
    transition: np.ndarray
    featureProfile: np.ndarray
    temporalTrend: np.ndarray
    labelWeights: np.ndarray
    persistence: float
    numSteps: int

    @property
    def latentDim(self):
        return self.loadings.shape[0]

    @property
    def numFeatures(self):
        return self.loadings.shape[1]


@dataclass
class HospitalCohortSpec:
    hospitalId: int
    numSamples: int
    sparsity: float
    prevalence: float
    seed: int
    covariateOffset: np.ndarray = None
    temporalShift: float = 0.0

    def validate(self, numFeatures):
        if self.numSamples < 1:
            raise ValueError(f"hospital {self.hospitalId}: numSamples must be >= 1, got {self.numSamples}")
        if not 0.0 < self.sparsity <= 0.5:
            raise ValueError(f"hospital {self.hospitalId}: sparsity must be in (0, 0.5], got {self.sparsity}")
        if not 0.0 < self.prevalence < 1.0:
            raise ValueError(f"hospital {self.hospitalId}: prevalence must be in (0, 1), got {self.prevalence}")
        if self.covariateOffset is not None and np.shape(self.covariateOffset) != (numFeatures,):
            raise ValueError(
                f"hospital {self.hospitalId}: covariate offset shape {np.shape(self.covariateOffset)} "
                f"does not match D={numFeatures}"
            )


def buildFactorBank(numFeatures, numSteps, latentDim=8, seed=0, persistence=0.8, powerLawExponent=1.0):
    """
    Draw the structure shared by all hospitals of one experiment.

    The feature profile follows a power law over randomly assigned ranks, so a
    few features are common and most are rare.
    """
    rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(rng.normal(size=(latentDim, latentDim)))
    loadings = rng.normal(scale=1.0 / np.sqrt(latentDim), size=(latentDim, numFeatures)) * 2.0
    ranks = rng.permutation(numFeatures) + 1.0
    profile = -powerLawExponent * np.log(ranks)
    profile -= profile.mean()
    trend = rng.normal(size=numFeatures)
    labelWeights = rng.normal(size=latentDim)
    labelWeights /= np.linalg.norm(labelWeights)
    return SharedFactorBank(
        loadings=loadings,
        transition=persistence * rotation,
        featureProfile=profile,
        temporalTrend=trend,
        labelWeights=labelWeights,
        persistence=persistence,
        numSteps=numSteps,
    )


def _sampleFactors(bank, numSamples, rng):
    factors = np.empty((numSamples, bank.numSteps, bank.latentDim))
    factors[:, 0] = rng.normal(size=(numSamples, bank.latentDim))
    noiseScale = np.sqrt(1.0 - bank.persistence ** 2)
    for t in range(1, bank.numSteps):
        noise = rng.normal(size=(numSamples, bank.latentDim))
        factors[:, t] = factors[:, t - 1] @ bank.transition.T + noiseScale * noise
    return factors


def _calibrateShift(baseLogits, target):
    # Solve mean(sigmoid(base + b)) = target for b
    return brentq(lambda shift: expit(baseLogits + shift).mean() - target, *CALIBRATION_BRACKET, xtol=1e-10)


def generateCohort(spec, bank):
    """
    Generate one hospital's cohort.

    A pure function of (spec, bank): the hospital id does not enter the random
    stream, only spec.seed does.

    Returns a BinarySequenceTensor of shape (spec.numSamples, bank.numSteps, bank.numFeatures).
    """
    spec.validate(bank.numFeatures)
    rng = np.random.default_rng(spec.seed)
    factors = _sampleFactors(bank, spec.numSamples, rng)

    baseLogits = factors @ bank.loadings + bank.featureProfile
    if spec.covariateOffset is not None:
        baseLogits += spec.covariateOffset
    if spec.temporalShift:
        ramp = np.linspace(-0.5, 0.5, bank.numSteps)[None, :, None]
        baseLogits += spec.temporalShift * ramp * bank.temporalTrend

    intercept = _calibrateShift(baseLogits, spec.sparsity)
    probs = expit(baseLogits + intercept)
    data = (rng.random(probs.shape) < probs).astype(np.uint8)

    score = LABEL_SHARPNESS * (factors.mean(axis=1) @ bank.labelWeights)
    threshold = -_calibrateShift(score, spec.prevalence)
    labels = (rng.random(spec.numSamples) < expit(score - threshold)).astype(np.uint8)
    return BinarySequenceTensor(data, labels)


def hospitalSizes(numHospitals, largest=1500, smallest=300):
    """Long-tail hospital sizes, geometric from largest down to smallest."""
    if numHospitals == 1:
        return [largest]
    return [int(round(size)) for size in np.geomspace(largest, smallest, numHospitals)]


def buildHospitalSpecs(numHospitals, numFeatures, sizes, sparsity, prevalence, seed,
                       covariateShift=0.0, temporalShift=0.0, outlierHospital=None, outlierShift=0.0):
    """
    Build one HospitalCohortSpec per hospital with distinct seeds.

    Hospital k gets a covariate offset of scale `covariateShift` (plus
    `outlierShift` for the planted outlier) and a temporal shift drawn from
    uniform(-temporalShift, temporalShift).
    """
    if len(sizes) != numHospitals:
        raise ValueError(f"{len(sizes)} sizes given for {numHospitals} hospitals")
    specs = []
    for k in range(numHospitals):
        rng = np.random.default_rng([seed, k, 17])
        scale = covariateShift + (outlierShift if outlierHospital == k else 0.0)
        offset = scale * rng.normal(size=numFeatures) if scale else None
        shift = temporalShift * rng.uniform(-1.0, 1.0) if temporalShift else 0.0
        specs.append(HospitalCohortSpec(
            hospitalId=k,
            numSamples=int(sizes[k]),
            sparsity=sparsity,
            prevalence=prevalence,
            seed=seed * 1000 + k + 1,
            covariateOffset=offset,
            temporalShift=shift,
        ))
    return specs
