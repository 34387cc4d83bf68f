"""Predictive (sparse) PCA: rank-1 fits with a geography-constrained left factor.

The left factor of every rank-1 term is restricted to the span of a
geographic design matrix (intercept, GIS score columns, spline columns) and
renormalized to unit length, so the resulting component scores are
predictable from geography.  The loading update is the same soft-threshold
step as unconstrained sparse PCA; the left-factor update is a least-squares
solve followed by normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalError, ValidationError
from .spca import (
    CONVERGENCE_TOL,
    MAX_ITERATIONS,
    ExposureDataset,
    PcComponent,
    PcModel,
    _rank1_objective,
    leading_right_singular_vector,
    orient_sign,
    soft_threshold,
)

DEGENERATE_NORM = 1e-12
RIDGE = 1e-8


@dataclass
class CovariateBasis:
    """Geographic design matrix [intercept | GIS scores | spline columns]."""

    Zt: np.ndarray  # n x m, full column rank
    column_names: list[str]

    def __post_init__(self):
        self.Zt = np.asarray(self.Zt, dtype=float)
        n, m = self.Zt.shape
        if len(self.column_names) != m:
            raise ValidationError("basis column names do not match matrix width")
        if n < m:
            raise ValidationError(f"need at least as many rows as basis columns (n={n}, m={m})")
        s = np.linalg.svd(self.Zt, compute_uv=False)
        if s[-1] <= s[0] * 1e-10:
            raise ValidationError("collinear basis: reduce GIS components or spline rank")

    @property
    def n(self) -> int:
        return self.Zt.shape[0]

    @property
    def m(self) -> int:
        return self.Zt.shape[1]

    @cached_property
    def _gram_factor(self):
        return cho_factor(self.Zt.T @ self.Zt)


def assemble_basis(gis_scores: np.ndarray, spline_matrix: np.ndarray) -> CovariateBasis:
    """Stack intercept, GIS score columns and spline columns into one design."""
    gis_scores = np.atleast_2d(np.asarray(gis_scores, dtype=float))
    spline_matrix = np.atleast_2d(np.asarray(spline_matrix, dtype=float))
    n = gis_scores.shape[0]
    if spline_matrix.shape[0] != n:
        raise ValidationError("GIS and spline matrices must have the same rows")
    m = 1 + gis_scores.shape[1] + spline_matrix.shape[1]
    if n <= m:
        raise ValidationError(f"need more rows than basis columns (n={n}, m={m})")
    names = (
        ["intercept"]
        + [f"gis_pc_{j + 1}" for j in range(gis_scores.shape[1])]
        + [f"spline_{j + 1}" for j in range(spline_matrix.shape[1])]
    )
    Zt = np.column_stack([np.ones(n), gis_scores, spline_matrix])
    return CovariateBasis(Zt, names)


def solve_alpha(basis: CovariateBasis, R: np.ndarray, vtilde: np.ndarray) -> np.ndarray:
    """Least-squares basis coefficients for a fixed loading.

    Solves ``alpha = (Z^T Z)^{-1} Z^T W`` with ``W = R v / (v^T v)``; after
    normalization ``Z alpha / ||Z alpha||`` is the best unit-norm left
    factor inside the basis span.
    """
    vtilde = np.asarray(vtilde, dtype=float)
    vv = float(vtilde @ vtilde)
    if vv == 0.0:
        raise ValidationError("zero loading vector")
    W = (R @ vtilde) / vv
    try:
        return cho_solve(basis._gram_factor, basis.Zt.T @ W)
    except (LinAlgError, ValueError) as exc:
        raise ValidationError("collinear basis: reduce GIS components or spline rank") from exc


@dataclass
class PredictiveRank1Fit:
    """One constrained rank-1 factor: unit left factor in the basis span."""

    u: np.ndarray  # unit-norm Z alpha / ||Z alpha||
    vtilde: np.ndarray
    alpha: np.ndarray
    objective_trace: list[float]
    converged: bool
    n_iter: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _fitted_factor(basis: CovariateBasis, alpha: np.ndarray):
    Za = basis.Zt @ alpha
    return Za, float(np.linalg.norm(Za))


def rank1_predictive(
    R: np.ndarray,
    basis: CovariateBasis,
    lam: float,
    init: np.ndarray | None = None,
    tol: float = CONVERGENCE_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> PredictiveRank1Fit:
    """Penalized rank-1 fit with the left factor constrained to the basis span.

    Alternates the coefficient update (least squares for ``alpha``) with the
    loading update ``v_j <- soft_threshold((R^T w)_j, lam)`` where
    ``w = Z alpha / ||Z alpha||``; the objective
    ``||R - w v^T||_F^2 + 2 lam ||v||_1`` is non-increasing.
    """
    R = np.asarray(R, dtype=float)
    if lam < 0:
        raise ValidationError("penalty must be non-negative")
    if R.shape[0] != basis.n:
        raise ValidationError("residual rows do not match basis rows")
    frob2 = float(np.sum(R * R))
    if frob2 == 0.0:
        raise ValidationError("zero residual matrix")
    v = leading_right_singular_vector(R) if init is None else np.asarray(init, dtype=float).copy()
    if np.all(v == 0.0):
        raise ValidationError("zero initial loading")
    trace: list[float] = []
    converged = False
    n_iter = 0
    alpha = np.zeros(basis.m)
    w = np.zeros(basis.n)
    for n_iter in range(1, max_iter + 1):
        alpha = solve_alpha(basis, R, v)
        Za, nrm = _fitted_factor(basis, alpha)
        if nrm < DEGENERATE_NORM:
            # restart from a ridge-regularized solve; the plain normal
            # equations are undefined when the projection collapses to zero
            gram = basis.Zt.T @ basis.Zt + RIDGE * np.eye(basis.m)
            W = (R @ v) / float(v @ v)
            alpha = np.linalg.solve(gram, basis.Zt.T @ W)
            Za, nrm = _fitted_factor(basis, alpha)
            if nrm < DEGENERATE_NORM:
                raise NumericalError("degenerate fitted factor: residual orthogonal to basis span")
        w = Za / nrm
        y = R.T @ w
        v_new = soft_threshold(y, lam)
        if not np.any(v_new):
            raise NumericalError("fully thresholded component: penalty zeroes every loading")
        trace.append(_rank1_objective(frob2, y, v_new, lam))
        if np.linalg.norm(v_new - v) <= tol * max(np.linalg.norm(v), 1e-300):
            v = v_new
            converged = True
            break
        v = v_new
    return PredictiveRank1Fit(w, v, alpha, trace, converged, n_iter)


def fit_predictive(data: ExposureDataset, basis: CovariateBasis, k: int, lambdas) -> PcModel:
    """Sequential predictive (sparse) PCA.

    Deflation subtracts the constrained fit ``w vtilde^T``; reported scores
    are still projections of the original centered matrix onto the
    normalized loadings.  Penalized components are warm-started from the
    unpenalized predictive solution of the same residual.
    """
    lambdas = list(lambdas)
    if k < 1 or k > min(data.n, data.p):
        raise ValidationError(f"k={k} outside [1, min(n, p)]")
    if len(lambdas) != k:
        raise ValidationError("need one penalty per component")
    if data.n != basis.n:
        raise ValidationError("exposure rows do not match basis rows")
    X = data.X
    R = X.copy()
    comps = []
    for lam in lambdas:
        base = rank1_predictive(R, basis, 0.0)
        fit = base if lam == 0.0 else rank1_predictive(R, basis, lam, init=base.vtilde)
        vtilde, w, alpha = orient_sign(fit.vtilde, fit.u, fit.alpha)
        v = vtilde / np.linalg.norm(vtilde)
        comps.append(
            PcComponent(
                loading=v,
                score=X @ v,
                lam=float(lam),
                deflation_u=w,
                alpha=alpha,
                objective_trace=fit.objective_trace,
                converged=fit.converged,
            )
        )
        R = R - np.outer(w, vtilde)
    return PcModel(
        method="predictive",
        components=comps,
        pollutant_names=list(data.pollutant_names),
        centering=data.centering,
        scaling=data.scaling,
        basis_columns=list(basis.column_names),
    )
