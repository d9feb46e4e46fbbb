import logging

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import average_precision_score, roc_auc_score

from lib_data.sequenceTensors import BinarySequenceTensor, concatenateTensors

logger = logging.getLogger(__name__)

REGIMES = ("real", "synth", "hybrid")
MAX_ITERATIONS = 2000


def timePooledFeatures(tensor):
    """Per-feature means over time: one D-vector per patient."""
    return tensor.data.mean(axis=1, dtype=np.float64)


def _checkTwoClasses(labels, what):
    if np.unique(labels).shape[0] < 2:
        raise ValueError(f"{what} has a single class; AUROC/AUPRC and logistic regression need both labels")


def trainDownstream(train, seed=0):
    """
    Logistic regression on time-pooled feature means, fit by L-BFGS to convergence.
    """
    if train.numSamples == 0:
        raise ValueError("downstream training set is empty")
    _checkTwoClasses(train.labels, "downstream training set")
    classifier = LogisticRegression(max_iter=MAX_ITERATIONS, random_state=seed)
    classifier.fit(timePooledFeatures(train), train.labels)
    return classifier


def trainFederatedDownstream(trainSets, seed=0):
    """
    One logistic regression per hospital, combined by sample-size weighted
    averaging of coefficients and intercepts. Hospitals whose training set
    has a single class are left out.
    """
    fitted = []
    sizes = []
    for k, train in enumerate(trainSets):
        if train.numSamples == 0 or np.unique(train.labels).shape[0] < 2:
            logger.warning("Hospital %d skipped in federated downstream training: single-class labels", k)
            continue
        fitted.append(trainDownstream(train, seed))
        sizes.append(train.numSamples)
    if not fitted:
        raise ValueError("no hospital has a two-class downstream training set")
    weights = np.asarray(sizes, dtype=np.float64) / np.sum(sizes)
    combined = LogisticRegression(max_iter=MAX_ITERATIONS, random_state=seed)
    combined.classes_ = fitted[0].classes_
    combined.coef_ = np.sum([w * model.coef_ for w, model in zip(weights, fitted)], axis=0)
    combined.intercept_ = np.sum([w * model.intercept_ for w, model in zip(weights, fitted)], axis=0)
    combined.n_features_in_ = fitted[0].n_features_in_
    return combined


def scoreDownstream(classifier, test):
    """(AUROC, AUPRC) of the classifier on a real test cohort."""
    _checkTwoClasses(test.labels, "downstream test set")
    scores = classifier.predict_proba(timePooledFeatures(test))[:, 1]
    return auroc(test.labels, scores), auprc(test.labels, scores)


def auroc(labels, scores):
    """Rank-statistic AUROC; tied scores count one half."""
    _checkTwoClasses(labels, "AUROC input")
    return float(roc_auc_score(labels, scores))


def auprc(labels, scores):
    """Average precision: step-wise integral of the precision-recall curve."""
    _checkTwoClasses(labels, "AUPRC input")
    return float(average_precision_score(labels, scores))


def regimeTrainingSets(realSets, syntheticSets, regime):
    """Per-hospital training sets for one regime; hybrid appends each hospital's synthetic cohort to its real one."""
    if regime not in REGIMES:
        raise ValueError(f"unknown regime '{regime}', expected one of {REGIMES}")
    if regime == "real":
        return list(realSets)
    if regime == "synth":
        return list(syntheticSets)
    return [concatenateTensors([real, syn]) for real, syn in zip(realSets, syntheticSets)]


def evaluateUtility(realSets, syntheticSets, test, federated=True, seed=0):
    """
    Train one downstream model per regime and score it on the real test set.

    Returns {regime: (auroc, auprc)}.
    """
    if not isinstance(test, BinarySequenceTensor):
        raise TypeError("the downstream test set must be a real BinarySequenceTensor")
    results = {}
    for regime in REGIMES:
        trainSets = regimeTrainingSets(realSets, syntheticSets, regime)
        if federated:
            classifier = trainFederatedDownstream(trainSets, seed)
        else:
            classifier = trainDownstream(concatenateTensors(trainSets), seed)
        results[regime] = scoreDownstream(classifier, test)
        logger.debug("Downstream %s: AUROC %.4f, AUPRC %.4f", regime, *results[regime])
    return results
