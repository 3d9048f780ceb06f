import numpy as np

from ..errors import ShapeError
from .tensor import Parameter


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Parameter:
    """He-style uniform init, bound sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name)


def zeros(shape, name: str) -> Parameter:
    return Parameter(np.zeros(shape), name)


class SGD:
    """Momentum SGD: ``v <- momentum * v + grad``, ``p <- p - lr * v``."""

    def __init__(self, params, lr=0.01, momentum=0.0, weight_decay=0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is None:
                continue
            sgd_step(p, self.lr, self.momentum, self._velocity[id(p)], self.weight_decay)

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the prior norm."""
        grads = [p.grad for p in self.params if p.grad is not None]
        total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        if total > max_norm > 0:
            for p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * (max_norm / total)
        return total


def sgd_step(p: Parameter, lr: float, momentum: float = 0.0, velocity=None, weight_decay: float = 0.0):
    g = p.grad
    if g.shape != p.data.shape:
        raise ShapeError(f"gradient {g.shape} does not match parameter {p.name} {p.data.shape}")
    if weight_decay:
        g = g + weight_decay * p.data
    if velocity is not None:
        velocity *= momentum
        velocity += g
        g = velocity
    p.data -= lr * g
