"""Sparse-reconstruction classification with a graph-Laplacian smoother.

Test columns ``Y`` are coded over the labeled dictionary ``D``::

    min_C ||Y - D C||_F^2 + alpha ||C||_1 + beta tr(C L C^T)

where ``L`` is the Laplacian of a k-NN heat-kernel graph over the test
columns, so similar test images receive similar codes. Class evidence is the
absolute coefficient mass per dictionary label. Adding labeled columns
updates the classifier; there is nothing to retrain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from repsel.data import QUERIED, FeatureMatrix, LabeledDictionary
from repsel.errors import ShapeError
from repsel.solver import SmoothPart, SolverConfig, SolverReport, fista, l1_part, power_iteration

DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.3
DEFAULT_KNN = 5


@dataclass(frozen=True, eq=False)
class LaplacianGraph:
    w: np.ndarray
    l: np.ndarray
    knn_k: int
    kernel_bandwidth: float

    @property
    def sparse_l(self):
        return sp.csr_matrix(self.l)


@dataclass(frozen=True, eq=False)
class SparseCodeMatrix:
    c: np.ndarray
    report: SolverReport | None = None


@dataclass(frozen=True, eq=False)
class ClassProbabilities:
    classes: np.ndarray   # sorted label values
    probs: np.ndarray     # (N, len(classes))

    @property
    def predicted(self) -> np.ndarray:
        # argmax picks the first maximum, i.e. the smaller class id on ties
        return self.classes[np.argmax(self.probs, axis=1)]


def _columns(m) -> np.ndarray:
    if isinstance(m, (FeatureMatrix, LabeledDictionary)):
        return m.data
    return np.asarray(m, dtype=np.float64)


def build_laplacian(y, knn_k: int = DEFAULT_KNN) -> LaplacianGraph:
    """Unnormalised Laplacian ``D - W`` of a symmetrised k-NN heat-kernel graph.

    An edge joins i and j when either is among the other's ``knn_k`` nearest
    neighbours; its weight is ``exp(-||y_i - y_j||^2 / (2 sigma^2))`` with
    ``sigma`` the median pairwise distance.
    """
    x = _columns(y)
    n = x.shape[1]
    if knn_k < 1:
        raise ValueError("knn_k must be >= 1")
    if n < knn_k + 1:
        raise ValueError(f"need at least knn_k + 1 = {knn_k + 1} test columns, got {n}")

    sq = np.sum(x * x, axis=0)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x.T @ x), 0.0)
    np.fill_diagonal(d2, 0.0)
    dist = np.sqrt(d2)
    iu = np.triu_indices(n, 1)
    sigma = float(np.median(dist[iu]))
    if sigma == 0.0:
        # more than half the pairs coincide; fall back to the mean distance
        sigma = float(dist[iu].mean()) or 1.0

    ranked = dist.copy()
    np.fill_diagonal(ranked, np.inf)
    nbrs = np.argsort(ranked, axis=1, kind="stable")[:, :knn_k]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), knn_k), nbrs.ravel()] = True
    mask |= mask.T

    w = np.where(mask, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
    lap = np.diag(w.sum(axis=1)) - w
    return LaplacianGraph(w=w, l=lap, knn_k=knn_k, kernel_bandwidth=sigma)


class _CodingProblem:
    """Smooth part ``||Y - D C||^2 + beta tr(C L C^T)`` with cached products.

    Works on ``V = C^T`` (one row per test column) so that the sparse
    Laplacian multiplies contiguous data: ``tr(C L C^T) = <V, L V>``.
    """

    def __init__(self, d, y, beta, graph):
        if d.shape[0] != y.shape[0]:
            raise ShapeError(f"dictionary has dimension {d.shape[0]}, test features {y.shape[0]}")
        self.dtd = d.T @ d
        self.beta = float(beta)
        # with fewer feature rows than atoms, go through the residual V D^T - Y^T instead of V D^T D
        self.factored = d.shape[0] < d.shape[1]
        self.d = d
        self.yt = np.ascontiguousarray(y.T)
        self.ytd = self.yt @ d
        self.yy = float(np.sum(y * y))
        self.lap = None
        if self.beta and graph is not None:
            if graph.l.shape != (y.shape[1], y.shape[1]):
                raise ShapeError(f"graph is over {graph.l.shape[0]} nodes, test set has {y.shape[1]}")
            self.lap = graph.sparse_l
            self.lap_dense = graph.l

    def gradient(self, v):
        if self.factored:
            r = v @ self.d.T
            r -= self.yt
            g = r @ self.d
        else:
            g = v @ self.dtd
            g -= self.ytd
        if self.lap is not None:
            g += self.beta * (self.lap @ v)
        g *= 2.0
        return g

    def objective(self, v):
        if self.factored:
            r = v @ self.d.T
            r -= self.yt
            val = float(np.vdot(r, r))
        else:
            val = self.yy - 2.0 * float(np.vdot(v, self.ytd)) + float(np.vdot(v, v @ self.dtd))
        if self.lap is not None:
            val += self.beta * float(np.vdot(v, self.lap @ v))
        return val

    def lipschitz(self, mode):
        if mode == "paper":
            val = float(np.sum(self.dtd ** 2))
            if self.lap is not None:
                val += self.beta * float(np.sum(self.lap_dense ** 2))
            return 2.0 * val
        # the Hessian is the Kronecker sum of D'D and beta L; its top eigenvalue is the sum
        top = power_iteration(lambda u: self.dtd @ u, self.dtd.shape[0])
        if self.lap is not None:
            top += self.beta * power_iteration(lambda u: self.lap @ u, self.lap.shape[0])
        return 2.0 * top


def laplacian_penalty(c: np.ndarray, graph: LaplacianGraph) -> float:
    """``tr(C L C^T)``."""
    return float(np.trace(c @ graph.l @ c.T))


def src_objective(dictionary, y, c, alpha, beta, graph) -> float:
    c = np.asarray(c, dtype=np.float64)
    prob = _CodingProblem(_columns(dictionary), _columns(y), beta, graph)
    return prob.objective(c.T) + alpha * float(np.abs(c).sum())


def src_gradient(dictionary, y, c, beta, graph) -> np.ndarray:
    """Gradient of the smooth part, ``2(-D'Y + D'D C + beta C L)``."""
    prob = _CodingProblem(_columns(dictionary), _columns(y), beta, graph)
    return prob.gradient(np.asarray(c, dtype=np.float64).T.copy()).T


def src_solve(
    dictionary: LabeledDictionary,
    y,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    graph: LaplacianGraph | None = None,
    config: SolverConfig = SolverConfig(),
) -> SparseCodeMatrix:
    """Sparse codes of the test columns ``y`` over ``dictionary``, from ``C = 0``."""
    d = _columns(dictionary)
    yc = _columns(y)
    if d.shape[1] == 0:
        raise ValueError("dictionary is empty")
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be >= 0")
    if beta and graph is None:
        raise ValueError("beta > 0 needs a Laplacian graph over the test columns")
    prob = _CodingProblem(d, yc, beta, graph)
    lip = prob.lipschitz(config.lipschitz_mode)
    if lip == 0.0:
        # all-zero dictionary: every code reconstructs equally badly
        c0 = np.zeros((d.shape[1], yc.shape[1]))
        return SparseCodeMatrix(c0, SolverReport(c0, 0, [], "tolerance"))
    smooth = SmoothPart(gradient=prob.gradient, lipschitz=lip, objective=prob.objective)
    v0 = np.zeros((yc.shape[1], d.shape[1]))
    report = fista(smooth, l1_part(alpha), v0, config.max_iter, config.rel_tol, config.momentum)
    report.solution = np.ascontiguousarray(report.solution.T)
    return SparseCodeMatrix(report.solution, report)


def class_probabilities(c, labels) -> ClassProbabilities:
    """Per test column, normalised absolute coefficient mass per label.

    A column with no mass gets the uniform distribution over known classes.
    """
    c = c.c if isinstance(c, SparseCodeMatrix) else np.asarray(c, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape[0] != c.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for a code with {c.shape[0]} rows")
    classes, inverse = np.unique(labels, return_inverse=True)
    onehot = np.zeros((len(labels), len(classes)))
    onehot[np.arange(len(labels)), inverse.reshape(-1)] = 1.0
    scores = np.abs(c).T @ onehot
    totals = scores.sum(axis=1, keepdims=True)
    probs = np.full_like(scores, 1.0 / max(len(classes), 1))
    nz = totals[:, 0] > 0
    probs[nz] = scores[nz] / totals[nz]
    return ClassProbabilities(classes=classes, probs=probs)


def add_labeled(
    dictionary: LabeledDictionary,
    columns,
    labels,
    provenance=None,
    image_ids=None,
    normalize: bool = False,
) -> LabeledDictionary:
    """Append labeled columns; existing columns keep their positions.

    With ``normalize`` each new column is scaled to unit l2 norm (the
    experiment loop does this so atoms compete on direction, not length).
    """
    new = np.array(_columns(columns), dtype=np.float64)
    if new.ndim == 1:
        new = new[:, None]
    if new.shape[0] != dictionary.d:
        raise ShapeError(f"dictionary has dimension {dictionary.d}, new columns {new.shape[0]}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    m = new.shape[1]
    if labels.shape[0] != m:
        raise ShapeError(f"{labels.shape[0]} labels for {m} columns")
    if normalize and m:
        norms = np.linalg.norm(new, axis=0)
        new[:, norms > 0] /= norms[norms > 0]
    if provenance is None:
        provenance = (QUERIED,) * m
    if image_ids is None:
        image_ids = (
            columns.image_ids
            if isinstance(columns, FeatureMatrix)
            else tuple(f"dict{dictionary.n0 + i}" for i in range(m))
        )
    return LabeledDictionary(
        np.concatenate([dictionary.data, new], axis=1),
        np.concatenate([dictionary.labels, labels]),
        tuple(dictionary.provenance) + tuple(provenance),
        tuple(dictionary.image_ids) + tuple(image_ids),
    )


def classify(
    dictionary: LabeledDictionary,
    test,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    knn_k: int = DEFAULT_KNN,
    config: SolverConfig = SolverConfig(),
    graph: LaplacianGraph | None = None,
) -> ClassProbabilities:
    """Build the test graph (unless given), code the test set and group by label."""
    if graph is None and beta:
        graph = build_laplacian(test, knn_k)
    codes = src_solve(dictionary, test, alpha, beta, graph, config)
    return class_probabilities(codes, dictionary.labels)
