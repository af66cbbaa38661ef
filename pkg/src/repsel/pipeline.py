"""The active-labeling loop and everything needed to run it as an experiment.

One trial: draw a pool and a disjoint test set, embed the pool once, then
repeatedly select a batch, collapse redundant members, ask the oracle for
one label per group, grow the dictionary and score the classifier on the
test set. The curve records (queries, total labeled, accuracy) after each
round.
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from repsel import classifier as clf
from repsel.data import PROPAGATED, FeatureMatrix, LabeledDictionary, PoolSpec, build_pools, load_dataset
from repsel.embed import EmbeddingConfig, embed
from repsel.redundancy import build_groups, propagate_label
from repsel.selector import SelectionProblem, grad_g, lambda0, select_representatives
from repsel.solver import SolverConfig

log = logging.getLogger(__name__)

METHODS = ("proposed", "smrs", "random")
GROUP_SPACES = ("embedded", "original")


@dataclass(frozen=True)
class SyntheticSpec:
    identities: int = 50
    cameras: int = 3
    images_per_camera: int = 6
    dim: int = 30
    cluster_std: float = 0.3
    camera_shift: float = 1.0
    seed: int = 0


def gen_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> FeatureMatrix:
    """Gaussian identity clusters with a per-camera offset.

    Identity anchors and camera shifts are standard normal vectors (shifts
    scaled by ``camera_shift``); each image adds isotropic noise with
    standard deviation ``cluster_std``. Columns are ordered by identity,
    then camera, then image.
    """
    for name in ("identities", "cameras", "images_per_camera", "dim"):
        if getattr(spec, name) < 1:
            raise ValueError(f"{name} must be >= 1")
    rng = np.random.default_rng(spec.seed)
    anchors = rng.standard_normal((spec.identities, spec.dim))
    shifts = spec.camera_shift * rng.standard_normal((spec.cameras, spec.dim))
    m = spec.images_per_camera
    cols, ids, cams, labels = [], [], [], []
    for p in range(spec.identities):
        for c in range(spec.cameras):
            noise = spec.cluster_std * rng.standard_normal((m, spec.dim))
            cols.append(anchors[p] + shifts[c] + noise)
            ids += [f"p{p}_c{c}_{i}" for i in range(m)]
            cams += [c] * m
            labels += [p] * m
    data = np.concatenate(cols, axis=0).T
    return FeatureMatrix(data, tuple(ids), np.array(cams), np.array(labels))


def batch_size(pool_size: int, fraction: float, round_to: int | None = None) -> int:
    """``ceil(fraction * pool_size)``, optionally up to a multiple of ``round_to``."""
    k = math.ceil(fraction * pool_size - 1e-9)
    if round_to:
        k = round_to * math.ceil(k / round_to)
    return max(k, 1)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    synthetic: SyntheticSpec = SyntheticSpec()
    pool: PoolSpec = PoolSpec()
    embedding: EmbeddingConfig = EmbeddingConfig()
    lambda1: float = 2.0
    gamma: float = 2.5
    tau: float = 0.8
    group_space: str = "original"
    alpha: float = clf.DEFAULT_ALPHA
    beta: float = clf.DEFAULT_BETA
    knn_k: int = clf.DEFAULT_KNN
    batch: int | None = None
    batch_fraction: float = 0.05
    budget: int | None = None
    budget_fraction: float = 0.7
    trials: int = 5
    seeds: tuple = (0, 1, 2, 3, 4)
    method: str = "proposed"
    strict: bool = False
    selection_solver: SolverConfig = SolverConfig()
    coding_solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.trials != len(self.seeds):
            raise ValueError(f"trials ({self.trials}) must equal the number of seeds ({len(self.seeds)})")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.group_space not in GROUP_SPACES:
            raise ValueError(f"group_space must be one of {GROUP_SPACES}, got {self.group_space!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.lambda1 < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("lambda1, alpha and beta must be >= 0")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be >= 0")
        if not 0.0 <= self.budget_fraction <= 1.0:
            raise ValueError("budget_fraction must lie in [0, 1]")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be >= 1")

    def budget_for(self, pool_size: int) -> int:
        budget = self.budget if self.budget is not None else math.floor(self.budget_fraction * pool_size + 1e-9)
        if budget > pool_size:
            raise ValueError(f"budget {budget} exceeds pool size {pool_size}")
        return budget

    def batch_for(self, pool_size: int) -> int:
        return self.batch if self.batch is not None else batch_size(pool_size, self.batch_fraction)


@dataclass
class AccuracyCurve:
    points: list = field(default_factory=list)     # (queries, total_labeled, accuracy)
    warnings: list = field(default_factory=list)

    def xs(self, axis: str = "queries") -> np.ndarray:
        col = {"queries": 0, "total_labeled": 1}[axis]
        return np.array([p[col] for p in self.points], dtype=np.float64)

    @property
    def accuracy(self) -> np.ndarray:
        return np.array([p[2] for p in self.points], dtype=np.float64)


@dataclass
class IterationRecord:
    batch: list            # pool indices selected this round
    groups: int
    pool_size: int         # after the round
    dictionary_size: int
    discarded: int
    lambda2: float | None = None
    solver_iterations: int | None = None


@dataclass
class TrialResult:
    seed: int
    method: str
    curve: AccuracyCurve
    iterations: list
    dictionary: LabeledDictionary


@dataclass
class TrialContext:
    """Everything shared by all methods for one seed."""
    pool: FeatureMatrix
    test: FeatureMatrix
    embedded: np.ndarray     # (target_dim, n)
    graph: clf.LaplacianGraph | None


class Oracle:
    """Answers identity queries for pool columns; the only reader of ground truth."""

    def __init__(self, pool: FeatureMatrix):
        self._labels = pool.true_labels
        self.queries = 0

    def annotate(self, index: int) -> int:
        self.queries += 1
        return int(self._labels[index])


def load_source(cfg: ExperimentConfig) -> FeatureMatrix:
    return load_dataset(cfg.dataset) if cfg.dataset else gen_synthetic(cfg.synthetic)


def prepare_trial(cfg: ExperimentConfig, seed: int, dataset: FeatureMatrix | None = None) -> TrialContext:
    dataset = load_source(cfg) if dataset is None else dataset
    pool, test = build_pools(dataset, cfg.pool, seed)
    emb = embed(pool, replace(cfg.embedding, seed=seed)).data
    graph = clf.build_laplacian(test, cfg.knn_k) if cfg.beta and test.n > cfg.knn_k else None
    return TrialContext(pool=pool, test=test, embedded=emb, graph=graph)


def _accuracy(dictionary: LabeledDictionary, ctx: TrialContext, cfg: ExperimentConfig) -> float:
    truth = ctx.test.true_labels
    if ctx.test.n == 0:
        return 0.0
    if dictionary.n0 == 0:
        return 1.0 / len(np.unique(truth))
    beta = cfg.beta if ctx.graph is not None else 0.0
    probs = clf.classify(dictionary, ctx.test, cfg.alpha, beta, cfg.knn_k, cfg.coding_solver, graph=ctx.graph)
    return float(np.mean(probs.predicted == truth))


def run_trial(
    cfg: ExperimentConfig,
    seed: int,
    context: TrialContext | None = None,
    method: str | None = None,
) -> TrialResult:
    """One pass of the active-labeling loop for ``seed``."""
    method = method or cfg.method
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    ctx = context if context is not None else prepare_trial(cfg, seed)
    pool, emb = ctx.pool, ctx.embedded
    n = pool.n
    budget = cfg.budget_for(n)
    k = cfg.batch_for(n)
    lambda1 = 0.0 if method == "smrs" else cfg.lambda1
    rng = np.random.default_rng([seed, 1])
    oracle = Oracle(pool)

    remaining = list(range(n))
    labeled = []          # pool indices whose features are in the dictionary
    discarded = []
    dictionary = LabeledDictionary.empty(pool.d)
    curve = AccuracyCurve(points=[(0, 0, _accuracy(dictionary, ctx, cfg))])
    history = []

    while oracle.queries < budget:
        if not remaining:
            msg = f"pool exhausted after {oracle.queries} queries, budget was {budget}"
            log.warning(msg)
            curve.warnings.append(msg)
            break
        cap = min(k, budget - oracle.queries, len(remaining))
        lam2 = iters = None
        if method == "random":
            picked = sorted(rng.choice(len(remaining), size=cap, replace=False).tolist())
        else:
            prob = SelectionProblem.centered(emb[:, remaining], emb[:, labeled], lambda1)
            lam2 = lambda0(prob) / cfg.gamma
            prob = prob.with_lambda2(lam2)
            picked, report = select_representatives(prob, cap, cfg.selection_solver)
            iters = report.iterations
            if not picked:
                # degenerate pool (all remaining columns coincide): nothing to rank
                picked = [0]
        batch = [remaining[i] for i in picked]

        space = emb if cfg.group_space == "embedded" else pool.data
        groups = build_groups(space[:, batch], cfg.tau)
        new_idx, new_labels, new_prov = [], [], []
        for gid in range(groups.n_queries):
            label = oracle.annotate(batch[groups.query_index[gid]])
            for member, lab, prov in propagate_label(groups, gid, label):
                if cfg.strict and prov == PROPAGATED:
                    discarded.append(batch[member])
                    continue
                new_idx.append(batch[member])
                new_labels.append(lab)
                new_prov.append(prov)

        taken = set(batch)
        remaining = [i for i in remaining if i not in taken]
        labeled.extend(new_idx)
        dictionary = clf.add_labeled(
            dictionary,
            pool.data[:, new_idx],
            new_labels,
            provenance=new_prov,
            image_ids=tuple(pool.image_ids[i] for i in new_idx),
            normalize=True,
        )
        history.append(
            IterationRecord(batch, groups.n_queries, len(remaining), dictionary.n0, len(discarded), lam2, iters)
        )
        curve.points.append((oracle.queries, dictionary.n0, _accuracy(dictionary, ctx, cfg)))
        log.info("seed %d %s: queries=%d labeled=%d acc=%.4f", seed, method, *curve.points[-1])

    return TrialResult(seed=seed, method=method, curve=curve, iterations=history, dictionary=dictionary)


def run_experiment(cfg: ExperimentConfig, methods=None, dataset: FeatureMatrix | None = None) -> dict:
    """All trials for each method; every method sees the same pool, test set and embedding per seed."""
    methods = tuple(methods) if methods else (cfg.method,)
    dataset = load_source(cfg) if dataset is None else dataset
    results = {m: [] for m in methods}
    for seed in cfg.seeds:
        ctx = prepare_trial(cfg, seed, dataset)
        for m in methods:
            results[m].append(run_trial(cfg, seed, ctx, m))
    return results


# --------------------------------------------------------------------------
# curves

def _curve_xy(curve, axis):
    x = curve.xs(axis)
    y = curve.accuracy
    # keep the last accuracy recorded at each x
    keep = np.r_[x[1:] != x[:-1], True]
    return x[keep], y[keep]


def common_support(curves, axis: str = "queries") -> tuple[float, float]:
    lo = max(_curve_xy(c, axis)[0].min() for c in curves)
    hi = min(_curve_xy(c, axis)[0].max() for c in curves)
    return lo, hi


def default_grid(curves, axis: str = "queries", points: int = 51) -> np.ndarray:
    lo, hi = common_support(curves, axis)
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, points)


def aggregate_curves(curves, grid, axis: str = "queries") -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and (population) standard deviation on ``grid``.

    Each curve is resampled with monotone piecewise-cubic (PCHIP)
    interpolation, which cannot overshoot between recorded accuracies.
    """
    if not curves:
        raise ValueError("need at least one curve")
    grid = np.asarray(grid, dtype=np.float64)
    rows = []
    for i, c in enumerate(curves):
        x, y = _curve_xy(c, axis)
        outside = grid[(grid < x.min() - 1e-9) | (grid > x.max() + 1e-9)]
        if outside.size:
            raise ValueError(
                f"grid point {outside[0]:g} lies outside curve {i}'s support [{x.min():g}, {x.max():g}]"
            )
        if len(x) == 1:
            rows.append(np.full(grid.shape, y[0]))
        else:
            rows.append(PchipInterpolator(x, y)(np.clip(grid, x.min(), x.max())))
    stack = np.vstack(rows)
    return stack.mean(axis=0), stack.std(axis=0)


# --------------------------------------------------------------------------
# complexity benchmark

@dataclass
class BenchResult:
    rows: list      # (n, mean_seconds, instance_digest)
    slope: float


def bench_instance(n: int, d: int = 10, n0: int = 20, seed: int = 0):
    rng = np.random.default_rng([seed, n])
    prob = SelectionProblem(rng.standard_normal((d, n)), rng.standard_normal((d, n0)), lambda1=2.0)
    x = rng.standard_normal((n, n))
    return prob, x


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def grad_digest(prob: SelectionProblem, x: np.ndarray) -> str:
    """Digest of one gradient evaluation, for checking runs agree."""
    return _digest(grad_g(prob, x))


def bench_complexity(sizes, d: int = 10, n0: int = 20, repeats: int = 5, seed: int = 0) -> BenchResult:
    """Mean wall time of one ``grad_g`` evaluation per pool size, plus the log-log slope."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 4:
        raise ValueError("need at least 4 sizes to fit a slope")
    if sizes != sorted(sizes):
        raise ValueError("sizes must be sorted ascending")
    rows = []
    for n in sizes:
        prob, x = bench_instance(n, d, n0, seed)
        grad_g(prob, x)  # warm-up
        t0 = time.perf_counter()
        for _ in range(repeats):
            grad_g(prob, x)
        rows.append((n, (time.perf_counter() - t0) / repeats, _digest(prob.z, prob.z0, x)))
    logn = np.log([r[0] for r in rows])
    logt = np.log([r[1] for r in rows])
    slope = float(np.polyfit(logn, logt, 1)[0])
    return BenchResult(rows=rows, slope=slope)
