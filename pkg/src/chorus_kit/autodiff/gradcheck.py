"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(np.isfinite(e) and e <= self.tolerance for e in self.errors.values())

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        verdict = "PASS" if self.passed else "FAIL"
        return "\n".join(lines + [f"max {self.max_error:.3e} (tol {self.tolerance:g}) {verdict}"])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``‖a − n‖₂ / ‖n‖₂``; zero when both vanish."""
    diff = float(np.linalg.norm((analytic - numeric).ravel()))
    ref = float(np.linalg.norm(numeric.ravel()))
    if ref == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / ref


def grad_check(
    fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-6,
    tolerance: float = 1e-5,
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``backward`` gradients of ``fn()`` with central differences.

    ``fn`` must rebuild its graph on each call and return a scalar. Parameters
    should be float64; finite differences in float32 are noise. With
    ``sample=k`` only ``k`` randomly chosen entries of each larger tensor are
    perturbed, and the error is measured over those entries.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.data = np.ascontiguousarray(p.data)
        p.grad = None
    backward(fn())
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    errors = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        if sample is not None and flat.size > sample:
            picks = np.sort(rng.choice(flat.size, size=sample, replace=False))
        else:
            picks = np.arange(flat.size)
        numeric = np.empty(len(picks), dtype=flat.dtype)
        for slot, i in enumerate(picks):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            numeric[slot] = (up - down) / (2 * eps)
        err = relative_error(analytic[name].reshape(-1)[picks], numeric)
        errors[name] = err if np.isfinite(err) else float("inf")
    for p in params.values():
        p.grad = None
    return GradCheckReport(errors, tolerance)
