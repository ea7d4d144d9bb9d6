"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    errors: list = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors)

    def per_input(self) -> list:
        return [(i, e, e < self.tol) for i, e in enumerate(self.errors)]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Largest entrywise deviation, relative to the largest gradient magnitude.

    Scaling by the tensor-wide magnitude keeps entries whose true gradient
    is ~0 from turning finite-difference noise into huge ratios.
    """
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
    return g


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    Each input is perturbed in place, so ``f`` must read the tensors it is
    given and be deterministic.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f(*inputs)
    backward(out)
    report = GradCheckReport(tol=tol)
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        numeric = numeric_grad(lambda: f(*inputs), x, eps)
        report.errors.append(relative_error(analytic, numeric))
    return report
