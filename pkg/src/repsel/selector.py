"""Sparse, non-redundant representative selection.

Solves::

    min_X ||Z - Z X||_F^2 + lambda1 ||Z0^T Z X||_F^2 + lambda2 ||X||_{2,1}

where ``Z`` (d x n) holds the unlabeled pool and ``Z0`` (d x n0) the
already-labeled columns. Nonzero rows of ``X`` index the representatives.
The second term penalises reconstructions that correlate with labeled
columns, steering each new batch away from what is already annotated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from repsel.data import FeatureMatrix, LabeledDictionary
from repsel.errors import ShapeError
from repsel.solver import SmoothPart, SolverConfig, SolverReport, fista, l21_part, power_iteration

ROW_CUTOFF = 1e-8


def _as_columns(m) -> np.ndarray:
    if isinstance(m, (FeatureMatrix, LabeledDictionary)):
        return np.asarray(m.data, dtype=np.float64)
    return np.asarray(m, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    z: np.ndarray
    z0: np.ndarray
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        z = _as_columns(self.z)
        if z.ndim != 2:
            raise ShapeError(f"Z must be 2-D (d, n), got shape {z.shape}")
        z0 = np.zeros((z.shape[0], 0)) if self.z0 is None else _as_columns(self.z0)
        if z0.ndim != 2 or z0.shape[0] != z.shape[0]:
            raise ShapeError(f"Z0 must have {z.shape[0]} rows to match Z, got shape {z0.shape}")
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "z0", z0)

    @classmethod
    def centered(cls, pool, labeled=None, lambda1=0.0, lambda2=0.0) -> "SelectionProblem":
        """Center pool and labeled columns with the pool's mean column."""
        z = _as_columns(pool)
        z0 = np.zeros((z.shape[0], 0)) if labeled is None else _as_columns(labeled)
        if z.shape[1] == 0:
            raise ValueError("empty input")
        mean = z.mean(axis=1, keepdims=True)
        return cls(z - mean, z0 - mean if z0.shape[1] else z0, lambda1, lambda2)

    @property
    def n(self) -> int:
        return self.z.shape[1]

    def with_lambda2(self, lambda2: float) -> "SelectionProblem":
        return SelectionProblem(self.z, self.z0, self.lambda1, lambda2)


@dataclass(frozen=True, eq=False)
class SelectionMatrix:
    x: np.ndarray
    row_norms: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "row_norms", np.linalg.norm(x, axis=1))


def _matrix(x) -> np.ndarray:
    return x.x if isinstance(x, SelectionMatrix) else np.asarray(x, dtype=np.float64)


def _check_x(p: SelectionProblem, x: np.ndarray):
    if x.shape != (p.n, p.n):
        raise ShapeError(f"X must be {p.n} x {p.n}, got {x.shape}")


def objective_g(p: SelectionProblem, x) -> float:
    """Smooth part: reconstruction error plus the decorrelation penalty."""
    x = _matrix(x)
    _check_x(p, x)
    r = p.z @ x
    val = float(np.sum((p.z - r) ** 2))
    if p.lambda1 and p.z0.shape[1]:
        val += p.lambda1 * float(np.sum((p.z0.T @ r) ** 2))
    return val


def grad_g(p: SelectionProblem, x, form: str = "gram") -> np.ndarray:
    """Gradient ``2(-Z'Z + Z'Z X + lambda1 Z'Z0 Z0'Z X)``.

    ``form="gram"`` multiplies the n x n Gram matrices into ``X`` as the
    expression is written (O(n^3) per call); ``form="factored"`` pushes
    ``X`` through ``Z`` first (O(d n^2)). Both give the same matrix.
    """
    x = _matrix(x)
    _check_x(p, x)
    z, z0 = p.z, p.z0
    if form == "gram":
        ztz = z.T @ z
        g = -ztz + ztz @ x
        if p.lambda1 and z0.shape[1]:
            zz0 = z.T @ z0
            g += p.lambda1 * ((zz0 @ zz0.T) @ x)
        return 2.0 * g
    if form == "factored":
        r = z @ x
        inner = r - z
        if p.lambda1 and z0.shape[1]:
            inner += p.lambda1 * (z0 @ (z0.T @ r))
        return 2.0 * (z.T @ inner)
    raise ValueError(f"unknown gradient form {form!r}")


def _curvature_op(p: SelectionProblem):
    """``v -> (Z'Z + lambda1 Z'Z0 Z0'Z) v`` without forming n x n matrices."""
    z, z0, lam = p.z, p.z0, p.lambda1
    use_z0 = lam != 0 and z0.shape[1] > 0

    def apply(v):
        r = z @ v
        if use_z0:
            r = r + lam * (z0 @ (z0.T @ r))
        return z.T @ r

    return apply


def lipschitz_g(p: SelectionProblem, mode: str = "spectral") -> float:
    """Lipschitz constant of ``grad_g``.

    ``spectral`` is the tight value ``2 lambda_max(Z'Z + lambda1 Z'Z0 Z0'Z)``
    (power iteration). ``paper`` is ``2(||Z'Z||_F^2 + lambda1 ||Z'Z0 Z0'Z||_F^2)``,
    which is not an upper bound when the operator norm is below 1.
    """
    if p.n == 0:
        raise ValueError("empty input")
    if mode == "paper":
        ztz = p.z.T @ p.z
        val = float(np.sum(ztz ** 2))
        if p.lambda1 and p.z0.shape[1]:
            zz0 = p.z.T @ p.z0
            val += p.lambda1 * float(np.sum((zz0 @ zz0.T) ** 2))
        return 2.0 * val
    if mode == "spectral":
        return 2.0 * power_iteration(_curvature_op(p), p.n)
    raise ValueError(f"unknown Lipschitz mode {mode!r}")


def lambda0(p: SelectionProblem) -> float:
    """Smallest ``lambda2`` at which ``X = 0`` is optimal.

    At ``X = 0`` the gradient is ``-2 Z'Z`` (the Z0 term vanishes), so zero is
    optimal exactly when every row of ``2 Z'Z`` has l2 norm <= ``lambda2``.
    """
    if p.n == 0:
        raise ValueError("empty input")
    ztz = p.z.T @ p.z
    return 2.0 * float(np.max(np.linalg.norm(ztz, axis=1)))


def smooth_part(p: SelectionProblem, mode: str = "spectral") -> SmoothPart | None:
    """Smooth part for the solver, or None when ``Z`` is identically zero."""
    lip = lipschitz_g(p, mode)
    if lip == 0.0:
        return None
    d, n = p.z.shape
    form = "factored" if d < n else "gram"
    if form == "gram":
        ztz = p.z.T @ p.z
        curv = ztz.copy()
        if p.lambda1 and p.z0.shape[1]:
            zz0 = p.z.T @ p.z0
            curv += p.lambda1 * (zz0 @ zz0.T)
        return SmoothPart(
            gradient=lambda x: 2.0 * (curv @ x - ztz),
            lipschitz=lip,
            objective=lambda x: objective_g(p, x),
        )
    return SmoothPart(
        gradient=lambda x: grad_g(p, x, form="factored"),
        lipschitz=lip,
        objective=lambda x: objective_g(p, x),
    )


def merge_duplicate_rows(z: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Move the rows of identical columns of ``z`` onto the first copy.

    ``Z X`` only sees the sum of rows belonging to identical columns, and the
    l2,1 norm of that sum never exceeds the sum of norms, so the merged
    matrix is at least as good and strictly sparser.
    """
    _, first, inverse = np.unique(z.T, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(first) == z.shape[1]:
        return x
    out = np.zeros_like(x)
    np.add.at(out, first[inverse], x)
    return out


def support(x: np.ndarray, k: int | None = None) -> list[int]:
    """Indices of nonzero rows, largest row norm first, capped at ``k``."""
    norms = np.linalg.norm(x, axis=1)
    top = norms.max(initial=0.0)
    if top == 0.0:
        return []
    nz = np.flatnonzero(norms > ROW_CUTOFF * top)
    order = sorted(nz, key=lambda i: (-norms[i], i))
    if k is not None:
        order = order[:k]
    return [int(i) for i in order]


def _row_space_part(p: SelectionProblem, lip: float) -> tuple[SmoothPart, np.ndarray]:
    """The selection program restricted to ``X = W V^T``.

    With ``Z = U S V^T`` (thin SVD, ``V`` is n x r) we have ``Z = Z V V^T``,
    so ``g(W V^T)`` equals ``||Z V - Z W||^2 + lambda1 ||Z0^T Z W||^2`` and
    ``grad g(W V^T) = grad h(W) V^T``. Right-multiplying by ``V^T`` keeps
    row norms, so prox steps commute with it too, and FISTA started from
    zero produces exactly ``X_k = W_k V^T``. Each iteration then costs
    O(d n r) instead of O(d n^2).
    """
    z, z0, lam = p.z, p.z0, p.lambda1
    _, _, vt = np.linalg.svd(z, full_matrices=False)
    v = vt.T
    target = z @ v
    use_z0 = lam != 0 and z0.shape[1] > 0

    def residuals(w):
        r = z @ w
        return r, (z0.T @ r if use_z0 else None)

    def gradient(w):
        r, c = residuals(w)
        inner = r - target
        if use_z0:
            inner += lam * (z0 @ c)
        g = z.T @ inner
        g *= 2.0
        return g

    def objective(w):
        r, c = residuals(w)
        val = float(np.sum((target - r) ** 2))
        if use_z0:
            val += lam * float(np.sum(c ** 2))
        return val

    return SmoothPart(gradient=gradient, lipschitz=lip, objective=objective), v


def select_representatives(
    p: SelectionProblem,
    k: int,
    config: SolverConfig = SolverConfig(),
    reduce: bool = True,
) -> tuple[list[int], SolverReport]:
    """Solve the selection program from ``X = 0`` and return up to ``k`` rows.

    Rows are ranked by l2 norm (ties to the smaller index). The report's
    ``solution`` has duplicate-column rows merged, see ``merge_duplicate_rows``.
    With ``reduce`` (and ``d < n``) the iterations run in the row space of
    ``Z``; the iterates are the same as the full n x n run up to rounding.
    """
    if not 1 <= k <= p.n:
        raise ValueError(f"k must be in [1, {p.n}], got {k}")
    n = p.n
    d = p.z.shape[0]
    lip = lipschitz_g(p, config.lipschitz_mode)
    if lip == 0.0:
        x0 = np.zeros((n, n))
        return [], SolverReport(solution=x0, iterations=0, objective_trace=[], terminated_by="tolerance")

    def solve(smooth, x0):
        return fista(
            smooth, l21_part(p.lambda2), x0, config.max_iter, config.rel_tol, config.momentum
        )

    if reduce and d < n:
        smooth, v = _row_space_part(p, lip)
        report = solve(smooth, np.zeros((n, v.shape[1])))
        report.solution = merge_duplicate_rows(p.z, report.solution) @ v.T
    else:
        report = solve(smooth_part(p, config.lipschitz_mode), np.zeros((n, n)))
        report.solution = merge_duplicate_rows(p.z, report.solution)
    return support(report.solution, k), report
