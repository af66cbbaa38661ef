"""FISTA with pluggable smooth and non-smooth parts.

Solves ``min_x g(x) + h(x)`` where ``g`` has an ``L``-Lipschitz gradient
and ``h`` has a cheap proximal operator. The step size is fixed at ``1/L``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from repsel.errors import ConvergenceError, SolverError

MOMENTUM_SCHEDULES = ("standard", "paper")


@dataclass(frozen=True)
class SmoothPart:
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    objective: Callable[[np.ndarray], float]

    def __post_init__(self):
        lip = float(self.lipschitz)
        if not (math.isfinite(lip) and lip > 0):
            raise ValueError(f"Lipschitz constant must be positive and finite, got {self.lipschitz!r}")
        object.__setattr__(self, "lipschitz", lip)


@dataclass(frozen=True)
class ProxPart:
    prox: Callable[[np.ndarray, float], np.ndarray]
    penalty_value: Callable[[np.ndarray], float]


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 1000
    rel_tol: float = 1e-6
    momentum: str = "standard"
    lipschitz_mode: str = "spectral"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.momentum not in MOMENTUM_SCHEDULES:
            raise ValueError(f"momentum must be one of {MOMENTUM_SCHEDULES}, got {self.momentum!r}")
        if self.lipschitz_mode not in ("spectral", "paper"):
            raise ValueError(f"lipschitz_mode must be 'spectral' or 'paper', got {self.lipschitz_mode!r}")


@dataclass
class SolverReport:
    solution: np.ndarray
    iterations: int
    objective_trace: list = field(default_factory=list)
    terminated_by: str = "max_iter"


def prox_l21(x: np.ndarray, threshold: float) -> np.ndarray:
    """Row-wise group soft-thresholding, the prox of ``threshold * ||x||_{2,1}``.

    Rows whose l2 norm is at most ``threshold`` become exactly zero.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if threshold == 0:
        return x.copy()
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    scale = np.zeros_like(norms)
    keep = norms > threshold
    scale[keep] = 1.0 - threshold / norms[keep]
    return x * scale[:, None]


def prox_l1(x: np.ndarray, threshold: float) -> np.ndarray:
    """Elementwise soft-thresholding, the prox of ``threshold * ||x||_1``."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return x - np.clip(x, -threshold, threshold)


def l21_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x, axis=1).sum())


def l21_part(weight: float) -> ProxPart:
    return ProxPart(
        prox=lambda v, step: prox_l21(v, weight * step),
        penalty_value=lambda v: weight * l21_norm(v),
    )


def l1_part(weight: float) -> ProxPart:
    return ProxPart(
        prox=lambda v, step: prox_l1(v, weight * step),
        penalty_value=lambda v: weight * float(np.abs(v).sum()),
    )


ZERO_PENALTY = ProxPart(prox=lambda v, step: v, penalty_value=lambda v: 0.0)


def fista(
    smooth: SmoothPart,
    nonsmooth: ProxPart,
    x0: np.ndarray,
    max_iter: int = 1000,
    rel_tol: float = 1e-6,
    momentum: str = "standard",
) -> SolverReport:
    """Accelerated proximal gradient descent with a fixed ``1/L`` step.

    Each iteration extrapolates ``y = x_{k-1} + beta_k (x_{k-1} - x_{k-2})``
    and sets ``x_k = prox(y - grad(y) / L, 1 / L)``. With
    ``momentum="standard"`` ``beta_k`` follows the Beck-Teboulle sequence
    ``t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2``, ``beta_k = (t_{k-1} - 1) / t_k``;
    ``momentum="paper"`` uses ``beta_k = (k - 2) / (k - 1)``.

    Stops once ``||x_k - x_{k-1}||_F / max(1, ||x_{k-1}||_F) < rel_tol``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not rel_tol > 0:
        raise ValueError("rel_tol must be > 0")
    if momentum not in MOMENTUM_SCHEDULES:
        raise ValueError(f"momentum must be one of {MOMENTUM_SCHEDULES}, got {momentum!r}")
    x = np.array(x0, dtype=np.float64, copy=True)
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 contains non-finite values")

    step = 1.0 / smooth.lipschitz
    x_prev = x
    t = 1.0
    trace = []
    terminated_by = "max_iter"
    k = 0
    for k in range(1, max_iter + 1):
        if momentum == "standard":
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
        else:
            beta = (k - 2) / (k - 1) if k >= 2 else 0.0
        if beta != 0.0:
            y = x - x_prev
            y *= beta
            y += x
        else:
            y = x
        grad = smooth.gradient(y)
        if not math.isfinite(float(np.sum(grad))):
            raise SolverError(f"non-finite gradient at iteration {k}", iteration=k)
        point = grad * -step
        point += y
        x_new = nonsmooth.prox(point, step)
        obj = float(smooth.objective(x_new)) + float(nonsmooth.penalty_value(x_new))
        if not math.isfinite(obj):
            raise SolverError(f"non-finite objective at iteration {k}", iteration=k)
        trace.append(obj)
        diff = x_new - x
        change = math.sqrt(float(np.vdot(diff, diff))) / max(1.0, math.sqrt(float(np.vdot(x, x))))
        x_prev, x = x, x_new
        if change < rel_tol:
            terminated_by = "tolerance"
            break
    return SolverReport(solution=x, iterations=k, objective_trace=trace, terminated_by=terminated_by)


def power_iteration(apply, dim, rel_tol=1e-8, max_steps=10000, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD operator given as ``apply(v)``.

    Raises ``ConvergenceError`` if the Rayleigh quotient has not settled to
    ``rel_tol`` within ``max_steps``.
    """
    if dim == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_steps):
        w = apply(v)
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam_new - lam) <= rel_tol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise ConvergenceError(f"power iteration did not converge to {rel_tol:g} in {max_steps} steps")
