import numpy as np

from .errors import DimensionError, checkSameShape

PROBABILITY_CLAMP = 1e-7
LOG_TWO_PI = np.log(2.0 * np.pi)


def bceLoss(target, prob, eps=PROBABILITY_CLAMP):
    """
    Mean binary cross-entropy over all elements.

    Probabilities are clamped to [eps, 1 - eps] before taking logs. For a
    batch of rows the mean runs over rows and features alike, which equals the
    mean of the per-row losses.
    """
    target = np.asarray(target, dtype=np.float64)
    prob = np.asarray(prob, dtype=np.float64)
    checkSameShape("bceLoss", target, prob)
    if target.size == 0:
        raise DimensionError("bceLoss: empty input")
    clamped = np.clip(prob, eps, 1.0 - eps)
    losses = -(target * np.log(clamped) + (1.0 - target) * np.log(1.0 - clamped))
    return float(losses.mean())


def bceLogitGrad(target, prob):
    """Gradient of the mean BCE with respect to the sigmoid pre-activations."""
    return (prob - target) / target.size


def gaussianKl(muQ, varQ, muP, varP):
    """
    Closed-form KL(N(muQ, varQ) || N(muP, varP)) for diagonal Gaussians,
    summed over the last axis.

    Returns a float for vectors and an array of per-row values for batches.
    """
    muQ, varQ, muP, varP = (np.asarray(a, dtype=np.float64) for a in (muQ, varQ, muP, varP))
    for name, other in (("varQ", varQ), ("muP", muP), ("varP", varP)):
        checkSameShape(f"gaussianKl {name}", muQ, other)
    if np.any(varQ <= 0.0) or np.any(varP <= 0.0):
        raise ValueError("gaussianKl: variances must be strictly positive")
    terms = np.log(varP / varQ) + (varQ + (muQ - muP) ** 2) / varP - 1.0
    kl = 0.5 * terms.sum(axis=-1)
    return float(kl) if np.ndim(kl) == 0 else kl


def gaussianKlLogVar(muQ, logVarQ, muP, logVarP):
    """
    KL between diagonal Gaussians given log-variances, with its gradients.

    Returns (kl per row, dMuQ, dLogVarQ, dMuP, dLogVarP); gradients are per
    element, for a unit upstream gradient on each row's KL.
    """
    varQ = np.exp(logVarQ)
    varP = np.exp(logVarP)
    diff = muQ - muP
    kl = 0.5 * (logVarP - logVarQ + (varQ + diff ** 2) / varP - 1.0).sum(axis=-1)
    dMuQ = diff / varP
    dLogVarQ = 0.5 * (varQ / varP - 1.0)
    dLogVarP = 0.5 * (1.0 - (varQ + diff ** 2) / varP)
    return kl, dMuQ, dLogVarQ, -dMuQ, dLogVarP


def gaussianNll(target, mu, logVar):
    """
    Negative log-likelihood of `target` under N(mu, exp(logVar)), summed over the
    last axis, including the 0.5 * log(2 pi sigma^2) normaliser.

    Returns (nll per row, dMu, dLogVar).
    """
    var = np.exp(logVar)
    residual = target - mu
    nll = 0.5 * (LOG_TWO_PI + logVar + residual ** 2 / var).sum(axis=-1)
    dMu = -residual / var
    dLogVar = 0.5 * (1.0 - residual ** 2 / var)
    return nll, dMu, dLogVar


def reparameterize(mu, sigma, noise):
    """Return mu + sigma * noise; noise is drawn by the caller from N(0, I)."""
    mu, sigma, noise = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, noise))
    checkSameShape("reparameterize sigma", mu, sigma)
    checkSameShape("reparameterize noise", mu, noise)
    if np.any(sigma < 0.0):
        raise ValueError("reparameterize: sigma must be non-negative")
    return mu + sigma * noise
