import numpy as np
from scipy.special import expit

'''
ACTIVATIONS ANNOTATION:

Each activation is stored with the derivative expressed in terms of its OUTPUT.
All four activations used by the models here have that property, so the
backward pass only needs the cached output of a layer, never the pre-activation.
'''


def _relu(x):
    return np.maximum(x, 0.0)


ACTIVATIONS = {
    "identity": (lambda x: x, lambda y: np.ones_like(y)),
    "sigmoid": (expit, lambda y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "relu": (_relu, lambda y: (y > 0.0).astype(np.float64)),
}


def getActivation(name):
    """
    Look up an activation pair (function, derivative-from-output) by name.

    Raises ValueError for unknown names.
    """
    if name not in ACTIVATIONS:
        raise ValueError(f"Unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}")
    return ACTIVATIONS[name]
