"""Central finite-difference verification of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:.0e}"


def _rel_error(a, b):
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, tensors, tolerance=1e-6, step=1e-5, seed=0, names=None) -> GradcheckReport:
    """Compare backprop against central differences for every tensor in ``tensors``.

    ``fn()`` must rebuild the graph from the current ``tensors`` and return a
    Tensor. Non-scalar outputs are contracted with a fixed random weighting so
    every output element contributes. The error per tensor is
    ``||analytic - numeric|| / (||analytic|| + ||numeric||)``.
    """
    tensors = list(tensors)
    names = names or [getattr(t, "name", f"input{i}") for i, t in enumerate(tensors)]
    probe = fn()
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def objective():
        return float((fn().data * weights).sum())

    base = objective()
    if objective() != base:
        raise ContractViolation("fragment is non-deterministic: two forward passes differ")

    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    out = fn()
    out.backward(weights)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    report = GradcheckReport(0.0, tolerance)
    for t, name, ana in zip(tensors, names, analytic):
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * step)
        err = _rel_error(ana, num)
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    for t, flag in zip(tensors, flags):
        t.requires_grad = flag
        t.grad = None
    return report
