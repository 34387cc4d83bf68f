import numpy as np
import pytest

from predpca.errors import ValidationError
from predpca.predictive import (
    CovariateBasis,
    assemble_basis,
    fit_predictive,
    rank1_predictive,
    solve_alpha,
)
from predpca.spca import ExposureDataset, fit_traditional, project_scores, rank1_sparse
from predpca.splines import tps_basis


def make_basis(rng, n, n_gis=3, spline_rank=5):
    locs = rng.uniform(0, 1000, size=(n, 2))
    gis = rng.normal(size=(n, n_gis))
    spline = tps_basis(locs, rank=spline_rank, seed=0)
    return locs, assemble_basis(gis, spline.basis)


def predictive_oracle(R, Zt, lam, rng, n_starts=100, iters=400):
    """Independent alternating descent from random loading starts."""
    frob2 = np.sum(R * R)
    gram_inv = np.linalg.inv(Zt.T @ Zt)
    best = np.inf
    for _ in range(n_starts):
        v = rng.normal(size=R.shape[1])
        for _ in range(iters):
            W = R @ v / (v @ v)
            alpha = gram_inv @ (Zt.T @ W)
            Za = Zt @ alpha
            nrm = np.linalg.norm(Za)
            if nrm < 1e-12:
                break
            w = Za / nrm
            y = R.T @ w
            v = np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)
            if not np.any(v):
                break
        if np.any(v):
            obj = frob2 - 2 * y @ v + v @ v + 2 * lam * np.abs(v).sum()
            best = min(best, obj)
    return best


def test_assemble_basis_layout():
    rng = np.random.default_rng(0)
    _, basis = make_basis(rng, 30, n_gis=2, spline_rank=4)
    assert basis.column_names[0] == "intercept"
    assert basis.column_names[1:3] == ["gis_pc_1", "gis_pc_2"]
    assert basis.column_names[3:] == ["spline_1", "spline_2", "spline_3", "spline_4"]
    np.testing.assert_allclose(basis.Zt[:, 0], 1.0)


def test_assemble_basis_rejects_collinear():
    rng = np.random.default_rng(1)
    n = 20
    gis = rng.normal(size=(n, 2))
    gis = np.column_stack([gis, gis[:, 0] + gis[:, 1]])  # exactly dependent
    with pytest.raises(ValidationError, match="collinear basis"):
        CovariateBasis(np.column_stack([np.ones(n), gis]), ["intercept", "a", "b", "c"])


def test_solve_alpha_orthonormal_basis():
    rng = np.random.default_rng(2)
    n = 12
    q, _ = np.linalg.qr(rng.normal(size=(n, 4)))
    basis = CovariateBasis(q, [f"c{j}" for j in range(4)])
    R = rng.normal(size=(n, 3))
    v = rng.normal(size=3)
    W = R @ v / (v @ v)
    np.testing.assert_allclose(solve_alpha(basis, R, v), q.T @ W, atol=1e-10)


def test_solve_alpha_square_invertible_reproduces_target():
    rng = np.random.default_rng(3)
    n = 5
    Z = rng.normal(size=(n, n - 1))  # wide enough to stay full rank, n > m
    basis = CovariateBasis(np.column_stack([np.ones(n), Z[:, : n - 2]]), ["i"] + [f"c{j}" for j in range(n - 2)])
    # build a target exactly inside the span
    coef = rng.normal(size=basis.m)
    v = rng.normal(size=4)
    R = np.outer(basis.Zt @ coef, v)
    alpha = solve_alpha(basis, R, v)
    np.testing.assert_allclose(basis.Zt @ alpha, R @ v / (v @ v), atol=1e-10)


def test_solve_alpha_hand_normal_equations():
    # 5x2 design, explicit 2x2 inversion oracle
    Zt = np.array([[1.0, 0.5], [1.0, -0.3], [1.0, 1.2], [1.0, 0.1], [1.0, -0.8]])
    basis = CovariateBasis(Zt, ["i", "z"])
    R = np.array(
        [[0.2, -1.0], [1.4, 0.3], [-0.6, 0.8], [0.9, 0.1], [0.5, -0.7]]
    )
    v = np.array([0.7, -0.2])
    W = R @ v / (v @ v)
    g11 = np.sum(Zt[:, 0] ** 2)
    g12 = np.sum(Zt[:, 0] * Zt[:, 1])
    g22 = np.sum(Zt[:, 1] ** 2)
    det = g11 * g22 - g12 * g12
    ginv = np.array([[g22, -g12], [-g12, g11]]) / det
    oracle = ginv @ (Zt.T @ W)
    np.testing.assert_allclose(solve_alpha(basis, R, v), oracle, atol=1e-10)


def test_rank1_predictive_exact_recovery():
    rng = np.random.default_rng(4)
    _, basis = make_basis(rng, 25)
    alpha0 = rng.normal(size=basis.m)
    w0 = basis.Zt @ alpha0
    w0 /= np.linalg.norm(w0)
    v0 = rng.normal(size=6)
    R = np.outer(w0, v0)
    fit = rank1_predictive(R, basis, 0.0)
    assert fit.objective == pytest.approx(0.0, abs=1e-12)
    v = fit.vtilde / np.linalg.norm(fit.vtilde)
    ref = v0 / np.linalg.norm(v0)
    assert min(np.abs(v - ref).max(), np.abs(v + ref).max()) < 1e-8


def test_rank1_predictive_vacuous_constraint_matches_sparse():
    # a square full-rank basis spans R^n, so the constraint changes nothing
    rng = np.random.default_rng(5)
    n = 9
    Zt = np.column_stack([np.ones(n), rng.normal(size=(n, n - 1))])
    basis = CovariateBasis(Zt + 1e-3 * np.eye(n), [f"c{j}" for j in range(n)])
    R = rng.normal(size=(n + 0, 5))
    free = rank1_sparse(R, 0.0)
    constrained = rank1_predictive(R, basis, 0.0)
    assert constrained.objective == pytest.approx(free.objective, abs=1e-8)
    v1 = free.vtilde / np.linalg.norm(free.vtilde)
    v2 = constrained.vtilde / np.linalg.norm(constrained.vtilde)
    assert min(np.abs(v1 - v2).max(), np.abs(v1 + v2).max()) < 1e-6


def test_rank1_predictive_matches_multistart_oracle():
    rng = np.random.default_rng(6)
    R = np.asarray(np.random.default_rng(77).normal(size=(20, 5)))
    locs = rng.uniform(0, 100, size=(20, 2))
    gis = rng.normal(size=(20, 1))
    Zt = np.column_stack([np.ones(20), gis, locs / locs.std(axis=0)])
    basis = CovariateBasis(Zt, ["i", "g", "x", "y"])
    fit = rank1_predictive(R, basis, 0.2)
    best = predictive_oracle(R, basis.Zt, 0.2, np.random.default_rng(123))
    assert fit.objective <= best + 1e-6


def test_rank1_predictive_monotone_objective_and_unit_w():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(15, 40))
        _, basis = make_basis(rng, n)
        R = rng.normal(size=(n, int(rng.integers(3, 8))))
        fit = rank1_predictive(R, basis, float(rng.uniform(0, 0.5)))
        assert np.all(np.diff(fit.objective_trace) <= 1e-12)
        assert np.linalg.norm(fit.u) == pytest.approx(1.0, abs=1e-12)


def test_one_alternation_is_projected_power_step():
    rng = np.random.default_rng(8)
    n = 16
    q, _ = np.linalg.qr(rng.normal(size=(n, 5)))
    basis = CovariateBasis(q, [f"c{j}" for j in range(5)])
    R = rng.normal(size=(n, 4))
    v = rng.normal(size=4)
    alpha = solve_alpha(basis, R, v)
    w = q @ alpha / np.linalg.norm(q @ alpha)
    projector = q @ q.T
    expected = projector @ R @ v
    expected /= np.linalg.norm(expected)
    assert min(np.abs(w - expected).max(), np.abs(w + expected).max()) < 1e-10


def test_fit_predictive_spanned_data_matches_traditional():
    rng = np.random.default_rng(9)
    n = 120
    locs, basis = make_basis(rng, n, n_gis=4, spline_rank=6)
    coef = rng.normal(size=(basis.m, 8)) * 1.5
    X = basis.Zt @ coef + 0.01 * rng.normal(size=(n, 8))
    data = ExposureDataset(locs, X, [f"p{j}" for j in range(8)])
    trad = fit_traditional(data, 3, [0.0] * 3)
    pred = fit_predictive(data, basis, 3, [0.0] * 3)
    for l in range(3):
        inner = abs(float(trad.components[l].loading @ pred.components[l].loading))
        assert inner > 0.99


def test_fit_predictive_single_component_full_variance():
    rng = np.random.default_rng(10)
    n = 40
    locs, basis = make_basis(rng, n)
    alpha0 = rng.normal(size=basis.m)
    w0 = basis.Zt @ alpha0
    v0 = rng.normal(size=5)
    X = np.outer(w0, v0)
    X = X - X.mean(axis=0)  # keep the dataset invariant: columns centered
    data = ExposureDataset(locs, X, [f"p{j}" for j in range(5)])
    model = fit_predictive(data, basis, 1, [0.0])
    c = model.components[0]
    resid = data.X - np.outer(c.deflation_u, c.deflation_u @ data.X)
    assert np.linalg.norm(resid) < 1e-8 * np.linalg.norm(data.X)


def test_scores_come_from_x_not_fitted_u():
    rng = np.random.default_rng(11)
    n = 60
    locs, basis = make_basis(rng, n)
    X = rng.normal(size=(n, 6))
    data = ExposureDataset(locs, X, [f"p{j}" for j in range(6)])
    model = fit_predictive(data, basis, 2, [0.0, 0.1])
    for c in model.components:
        np.testing.assert_allclose(c.score, data.X @ c.loading, atol=1e-12)
        # the constrained factor is a different vector altogether
        assert np.linalg.norm(c.score / np.linalg.norm(c.score) - c.deflation_u) > 1e-3
        np.testing.assert_allclose(np.linalg.norm(c.deflation_u), 1.0, atol=1e-10)


def test_projection_ignores_basis_and_alpha():
    rng = np.random.default_rng(12)
    n = 50
    locs, basis = make_basis(rng, n)
    X = rng.normal(size=(n, 6))
    data = ExposureDataset(locs, X, [f"p{j}" for j in range(6)])
    model = fit_predictive(data, basis, 2, [0.0, 0.0])
    X_new = rng.normal(size=(7, 6))
    before = project_scores(X_new, model)
    for c in model.components:
        c.alpha = rng.normal(size=basis.m)  # corrupt the geography side
    model.basis_columns = ["bogus"]
    np.testing.assert_allclose(project_scores(X_new, model), before, atol=0)


def test_fit_predictive_stores_alpha_and_manifest():
    rng = np.random.default_rng(13)
    n = 45
    locs, basis = make_basis(rng, n)
    data = ExposureDataset(locs, rng.normal(size=(n, 5)), [f"p{j}" for j in range(5)])
    model = fit_predictive(data, basis, 2, [0.0, 0.05])
    assert model.basis_columns == basis.column_names
    for c in model.components:
        assert c.alpha is not None and c.alpha.shape == (basis.m,)
        w = basis.Zt @ c.alpha
        np.testing.assert_allclose(w / np.linalg.norm(w), c.deflation_u, atol=1e-10)
