import numpy as np

from .errors import DimensionError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8
DEFAULT_LEARNING_RATE = 1e-3


class GradientTape:
    """
    Gradient accumulators matched 1:1 to a model's named parameter arrays,
    plus the Adam moment estimates for those same parameters.

    A tape is owned by exactly one simulated client (or by the centralized
    trainer); nothing in it is shared.
    """

    def __init__(self, namedParams, learningRate=DEFAULT_LEARNING_RATE, betas=ADAM_BETAS, eps=ADAM_EPSILON):
        self.learningRate = learningRate
        self.betas = betas
        self.eps = eps
        self.grads = {name: np.zeros_like(array) for name, array in namedParams.items()}
        self.firstMoment = {name: np.zeros_like(array) for name, array in namedParams.items()}
        self.secondMoment = {name: np.zeros_like(array) for name, array in namedParams.items()}
        self.stepCount = 0

    def zero(self):
        for grad in self.grads.values():
            grad.fill(0.0)

    def accumulate(self, name, grad):
        if name not in self.grads:
            raise KeyError(f"No accumulator for parameter '{name}'")
        if grad.shape != self.grads[name].shape:
            raise DimensionError(f"{name}: gradient shape {grad.shape} != {self.grads[name].shape}")
        self.grads[name] += grad

    def remap(self, transform):
        """
        Re-index gradients and both moment estimates with `transform`, a
        function from a {name: array} map to one of the same names and shapes.
        Used when the parameters themselves were moved (neuron permutations).
        """
        for attribute in ("grads", "firstMoment", "secondMoment"):
            current = getattr(self, attribute)
            moved = transform(current)
            if set(moved) != set(current):
                raise KeyError(f"remap changed the parameter names of {attribute}")
            for name, array in moved.items():
                if array.shape != current[name].shape:
                    raise DimensionError(f"{name}: remapped shape {array.shape} != {current[name].shape}")
            setattr(self, attribute, {name: np.array(moved[name], dtype=np.float64) for name in current})

    def applyAdam(self, namedParams, frozenPrefixes=()):
        """
        One in-place Adam update of every parameter not matching a frozen prefix.

        Frozen parameters keep both their values and their moment estimates.
        """
        beta1, beta2 = self.betas
        self.stepCount += 1
        correction1 = 1.0 - beta1 ** self.stepCount
        correction2 = 1.0 - beta2 ** self.stepCount
        for name, param in namedParams.items():
            if any(name.startswith(prefix) for prefix in frozenPrefixes):
                continue
            grad = self.grads[name]
            m = self.firstMoment[name]
            v = self.secondMoment[name]
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            param -= self.learningRate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
