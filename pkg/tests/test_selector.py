import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import best_subset_error, central_diff, correlation_sum, rel_err, selection_objective, subset_error
from repsel.errors import ShapeError
from repsel.selector import (
    SelectionMatrix,
    SelectionProblem,
    grad_g,
    lambda0,
    lipschitz_g,
    merge_duplicate_rows,
    objective_g,
    select_representatives,
    support,
)
from repsel.solver import SolverConfig

TIGHT = SolverConfig(max_iter=50000, rel_tol=1e-12)


def _instance(seed, d=4, n=8, n0=3, lam1=1.5, lam2=0.0):
    rng = np.random.default_rng(seed)
    return SelectionProblem(rng.standard_normal((d, n)), rng.standard_normal((d, n0)), lam1, lam2)


# ---------------------------------------------------------------- problem types

def test_problem_validation():
    with pytest.raises(ShapeError):
        SelectionProblem(np.ones((3, 4)), np.ones((2, 1)))
    with pytest.raises(ValueError):
        SelectionProblem(np.ones((3, 4)), None, lambda1=-1.0)
    with pytest.raises(ValueError):
        SelectionProblem(np.ones((3, 4)), None, lambda2=np.inf)
    assert SelectionProblem(np.ones((3, 4)), None).z0.shape == (3, 0)


def test_centered_uses_pool_mean(rng):
    z = rng.standard_normal((3, 6)) + 5.0
    z0 = rng.standard_normal((3, 2))
    p = SelectionProblem.centered(z, z0, 2.0)
    mean = z.mean(axis=1, keepdims=True)
    assert np.allclose(p.z, z - mean)
    assert np.allclose(p.z0, z0 - mean)
    assert np.abs(p.z.mean(axis=1)).max() < 1e-12


def test_selection_matrix_row_norms(rng):
    x = rng.standard_normal((5, 5))
    m = SelectionMatrix(x)
    for i in range(5):
        assert abs(m.row_norms[i] - np.sqrt(np.sum(x[i] ** 2))) <= 1e-12


# ---------------------------------------------------------------- gradient

def test_gradient_at_zero():
    p = _instance(0)
    g = grad_g(p, np.zeros((8, 8)))
    assert np.allclose(g, -2 * p.z.T @ p.z, atol=1e-12)


def test_gradient_identity_stationary():
    p = SelectionProblem(np.eye(2), None, 3.0)
    assert np.array_equal(grad_g(p, SelectionMatrix(np.eye(2))), np.zeros((2, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_finite_differences(seed):
    p = _instance(seed)
    x = np.random.default_rng(100 + seed).standard_normal((8, 8))
    fd = central_diff(lambda v: selection_objective(p.z, p.z0, p.lambda1, v), x)
    assert rel_err(grad_g(p, x), fd) <= 1e-5


def test_objective_matches_oracle():
    p = _instance(3)
    x = np.random.default_rng(1).standard_normal((8, 8))
    assert objective_g(p, x) == pytest.approx(selection_objective(p.z, p.z0, p.lambda1, x), rel=1e-12)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 9), st.integers(0, 4), st.floats(0, 20))
def test_gram_and_factored_agree(seed, d, n, n0, lam1):
    rng = np.random.default_rng(seed)
    p = SelectionProblem(rng.standard_normal((d, n)), rng.standard_normal((d, n0)), lam1)
    x = rng.standard_normal((n, n))
    a, b = grad_g(p, x, "gram"), grad_g(p, x, "factored")
    assert np.max(np.abs(a - b)) <= 1e-9 * max(1.0, np.abs(a).max())


def test_gradient_shape_checks():
    p = _instance(0)
    with pytest.raises(ShapeError):
        grad_g(p, np.zeros((8, 7)))
    with pytest.raises(ShapeError):
        objective_g(p, np.zeros((7, 7)))
    with pytest.raises(ValueError):
        grad_g(p, np.zeros((8, 8)), form="sideways")


# ---------------------------------------------------------------- Lipschitz

def test_lipschitz_identity_examples():
    p = SelectionProblem(np.eye(2), None)
    assert lipschitz_g(p, "paper") == 4.0
    assert lipschitz_g(p, "spectral") == pytest.approx(2.0, rel=1e-8)
    with pytest.raises(ValueError):
        lipschitz_g(p, "tight")


@pytest.mark.parametrize("seed", range(6))
def test_lipschitz_spectral_vs_eigvalsh(seed):
    p = _instance(seed, d=5, n=9, n0=2, lam1=4.0)
    h = p.z.T @ p.z + p.lambda1 * (p.z.T @ p.z0) @ (p.z0.T @ p.z)
    top = float(np.linalg.eigvalsh(h).max())
    assert lipschitz_g(p, "spectral") == pytest.approx(2 * top, rel=1e-6)
    if np.linalg.norm(h) >= 1:
        assert lipschitz_g(p, "spectral") <= lipschitz_g(p, "paper") * (1 + 1e-8)


def test_paper_lipschitz_can_underestimate():
    p = SelectionProblem(0.1 * np.eye(3), None)
    assert lipschitz_g(p, "paper") < lipschitz_g(p, "spectral")


# ---------------------------------------------------------------- lambda0

def test_lambda0_identity():
    p = SelectionProblem(np.eye(2), None)
    assert lambda0(p) == pytest.approx(2.0)
    idx, rep = select_representatives(p.with_lambda2(2.0), 2, TIGHT)
    assert idx == [] and np.linalg.norm(rep.solution) < 1e-12
    idx, rep = select_representatives(p.with_lambda2(1.0), 2, TIGHT)
    assert np.linalg.norm(rep.solution) > 1e-3


@given(st.integers(0, 10**6), st.floats(0.01, 100))
def test_lambda0_quadratic_scaling(seed, c):
    z = np.random.default_rng(seed).standard_normal((3, 5))
    base = lambda0(SelectionProblem(z, None))
    assert lambda0(SelectionProblem(c * z, None)) == pytest.approx(c * c * base, rel=1e-10)


def test_lambda0_ignores_labeled_term():
    p = _instance(2, lam1=5.0)
    assert lambda0(p) == lambda0(SelectionProblem(p.z, None))


@pytest.mark.parametrize("seed", range(3))
def test_lambda0_brackets_zero_solution(seed):
    p = _instance(seed, d=6, n=12, n0=2, lam1=2.0)
    lam = lambda0(p)
    _, above = select_representatives(p.with_lambda2(1.01 * lam), 12, TIGHT)
    _, below = select_representatives(p.with_lambda2(0.5 * lam), 12, TIGHT)
    assert np.linalg.norm(above.solution) < 1e-6
    assert np.linalg.norm(below.solution) > 1e-3


# ---------------------------------------------------------------- selection

def test_duplicate_pair_and_orthogonal_column():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    z = np.column_stack([z[:, 0], z[:, 0], z[:, 1]])
    p = SelectionProblem(z, None)
    p = p.with_lambda2(lambda0(p) / 2.5)
    idx, _ = select_representatives(p, 3, TIGHT)
    assert len(idx) == 2
    assert 2 in idx and len({0, 1} & set(idx)) == 1
    assert subset_error(z, idx) == pytest.approx(best_subset_error(z, 2), abs=1e-12)


def test_k_caps_selection_by_row_norm():
    p = _instance(5, d=6, n=12, n0=0, lam1=0.0)
    p = p.with_lambda2(lambda0(p) / 10)
    full, rep = select_representatives(p, 12, TIGHT)
    capped, _ = select_representatives(p, 3, TIGHT)
    assert capped == full[:3]
    norms = np.linalg.norm(rep.solution, axis=1)
    assert all(norms[a] >= norms[b] for a, b in zip(full, full[1:]))


def test_k_bounds():
    p = _instance(0)
    with pytest.raises(ValueError):
        select_representatives(p, 0)
    with pytest.raises(ValueError):
        select_representatives(p, 9)


def test_zero_pool_selects_nothing():
    idx, rep = select_representatives(SelectionProblem(np.zeros((3, 4)), None, 0.0, 1.0), 2)
    assert idx == [] and rep.iterations == 0


@pytest.mark.parametrize("lam1", [0.0, 3.0])
def test_row_space_reduction_matches_full_solve(lam1):
    p = _instance(9, d=5, n=20, n0=4, lam1=lam1)
    p = p.with_lambda2(lambda0(p) / 3)
    cfg = SolverConfig(max_iter=400, rel_tol=1e-9)
    a_idx, a = select_representatives(p, 20, cfg, reduce=True)
    b_idx, b = select_representatives(p, 20, cfg, reduce=False)
    assert a_idx == b_idx
    assert a.iterations == b.iterations
    assert np.max(np.abs(a.solution - b.solution)) <= 1e-9
    assert np.allclose(a.objective_trace, b.objective_trace, rtol=1e-9)


def test_optimality_conditions_small():
    p = _instance(4, d=5, n=15, n0=3, lam1=2.0)
    lam2 = lambda0(p) / 4
    p = p.with_lambda2(lam2)
    _, rep = select_representatives(p, 15, TIGHT)
    x = rep.solution
    g = grad_g(p, x)
    for i in range(15):
        nrm = np.linalg.norm(x[i])
        if nrm > 0:
            assert np.linalg.norm(g[i] + lam2 * x[i] / nrm) <= 1e-4 * lam2
        else:
            assert np.linalg.norm(g[i]) <= lam2 + 1e-4


def test_duplicate_of_labeled_column_excluded():
    rng = np.random.default_rng(21)
    z = rng.standard_normal((6, 10))
    z0 = z[:, [3]].copy()
    p = SelectionProblem(z, z0, 50.0)
    p = p.with_lambda2(lambda0(p) / 5)
    _, rep = select_representatives(p, 10, TIGHT)
    assert np.linalg.norm(rep.solution[3]) < 1e-6


def test_decorrelation_increases_with_lambda1():
    drops = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((5, 16))
        z0 = z[:, rng.choice(16, 4, replace=False)]
        vals = []
        for lam1 in (0.0, 10.0):
            p = SelectionProblem.centered(z, z0, lam1)
            p = p.with_lambda2(lambda0(p) / 2.5)
            _, rep = select_representatives(p, 16, SolverConfig(max_iter=3000, rel_tol=1e-9))
            vals.append(float(np.sum((p.z0.T @ p.z @ rep.solution) ** 2)))
        drops.append(vals[0] - vals[1])
    assert np.mean(drops) > 0


# ---------------------------------------------------------------- helpers

def test_support_cutoff_and_ties():
    x = np.zeros((5, 2))
    x[1] = [1.0, 0.0]
    x[3] = [0.0, 1.0]
    x[4] = [1e-9, 0.0]
    assert support(x) == [1, 3]
    assert support(x, 1) == [1]
    assert support(np.zeros((3, 3))) == []


def test_merge_duplicate_rows():
    z = np.array([[1.0, 2.0, 1.0], [0.0, 1.0, 0.0]])
    x = np.arange(9.0).reshape(3, 3)
    merged = merge_duplicate_rows(z, x)
    assert np.array_equal(merged[0], x[0] + x[2])
    assert np.array_equal(merged[2], np.zeros(3))
    assert np.allclose(z @ merged, z @ x)
    distinct = np.eye(3)
    assert merge_duplicate_rows(distinct, x) is x


# ---------------------------------------------------------------- correlation identity

@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 5), st.integers(1, 6))
def test_correlation_identity(seed, d, n0, m):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, n0))
    b = rng.standard_normal((d, m))
    a -= a.mean(axis=0)
    b -= b.mean(axis=0)
    lhs = float(np.sum((a.T @ b) ** 2))
    assert lhs == pytest.approx(correlation_sum(a, b), rel=1e-9, abs=1e-12)
