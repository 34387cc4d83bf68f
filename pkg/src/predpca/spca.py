"""Traditional PCA and sparse PCA by penalized rank-1 approximation.

Components are extracted sequentially: each one is the best (optionally
L1-penalized) rank-1 approximation of the current residual matrix, found by
alternating a unit-norm left factor with a soft-thresholded loading.  The
residual is deflated and the next component is extracted.  Reported scores
are always projections of the original centered data onto the normalized
loadings, never the deflation-internal left factors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError

CONVERGENCE_TOL = 1e-6
MAX_ITERATIONS = 500


@dataclass
class ExposureDataset:
    """Multi-pollutant measurements at monitor locations.

    ``values`` holds the (possibly square-root transformed) measurements;
    ``X`` is the column-centered (optionally scaled) matrix that every PCA
    routine consumes.  Centering statistics are kept so held-out rows can be
    centered consistently with a training fit.
    """

    locations: np.ndarray  # n x 2 planar km
    values: np.ndarray  # n x p, uncentered
    pollutant_names: list[str]
    scale: bool = False
    centering: np.ndarray = field(init=False)
    scaling: np.ndarray | None = field(init=False)
    X: np.ndarray = field(init=False)

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("exposure values must be an (n, p) matrix")
        if self.locations.shape != (self.values.shape[0], 2):
            raise ValidationError("locations must be (n, 2) and align with exposure rows")
        if len(self.pollutant_names) != self.values.shape[1]:
            raise ValidationError("pollutant names do not match exposure columns")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("non-finite exposure value")
        self.centering = self.values.mean(axis=0)
        X = self.values - self.centering
        if self.scale:
            sd = X.std(axis=0, ddof=0)
            if np.any(sd == 0.0):
                raise ValidationError("cannot scale a constant pollutant column")
            self.scaling = sd
            X = X / sd
        else:
            self.scaling = None
        self.X = X

    @classmethod
    def from_raw(cls, locations, values, pollutant_names, sqrt=False, scale=False):
        values = np.asarray(values, dtype=float)
        if sqrt:
            if np.any(values < 0):
                raise ValidationError("square-root transform requires non-negative values")
            values = np.sqrt(values)
        return cls(locations, values, list(pollutant_names), scale=scale)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "ExposureDataset":
        """New dataset on a row subset, re-centered on those rows."""
        idx = np.asarray(idx)
        return ExposureDataset(
            self.locations[idx], self.values[idx], list(self.pollutant_names), scale=self.scale
        )

    def center_new(self, values_new: np.ndarray) -> np.ndarray:
        """Center (and scale) held-out rows with this dataset's statistics."""
        out = np.asarray(values_new, dtype=float) - self.centering
        if self.scaling is not None:
            out = out / self.scaling
        return out


def soft_threshold(y, lam: float):
    """Soft-thresholding sign(y) * max(|y| - lam, 0); works elementwise."""
    if lam < 0:
        raise ValidationError("penalty must be non-negative")
    return np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)


@dataclass
class Rank1Fit:
    """One penalized rank-1 factor pair with its optimization trace."""

    u: np.ndarray  # unit-norm left factor
    vtilde: np.ndarray  # un-normalized (sparse) loading
    objective_trace: list[float]
    converged: bool
    n_iter: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _rank1_objective(frob2: float, y: np.ndarray, v: np.ndarray, lam: float) -> float:
    # ||R - u v^T||_F^2 + 2 lam ||v||_1 with unit u and y = R^T u
    return frob2 - 2.0 * float(y @ v) + float(v @ v) + 2.0 * lam * float(np.abs(v).sum())


def leading_right_singular_vector(R: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(R, full_matrices=False)
    return vt[0].copy()


def rank1_sparse(
    R: np.ndarray,
    lam: float,
    init: np.ndarray | None = None,
    tol: float = CONVERGENCE_TOL,
    max_iter: int = MAX_ITERATIONS,
) -> Rank1Fit:
    """Best rank-1 approximation of ``R`` with an L1 penalty on the loading.

    Alternates u <- Rv/||Rv|| and v_j <- soft_threshold((R^T u)_j, lam)
    until the loading stabilizes.  The objective
    ``||R - u v^T||_F^2 + 2 lam ||v||_1`` is non-increasing across
    iterations.  At ``lam = 0`` this recovers the leading singular pair.

    Raises
    ------
    NumericalError
        If the loading is thresholded to all zeros (penalty too large).
    """
    R = np.asarray(R, dtype=float)
    if lam < 0:
        raise ValidationError("penalty must be non-negative")
    frob2 = float(np.sum(R * R))
    if frob2 == 0.0:
        raise ValidationError("zero residual matrix")
    v = leading_right_singular_vector(R) if init is None else np.asarray(init, dtype=float).copy()
    if np.all(v == 0.0):
        raise ValidationError("zero initial loading")
    trace: list[float] = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        Rv = R @ v
        nrm = np.linalg.norm(Rv)
        if nrm == 0.0:
            raise NumericalError("degenerate left factor: residual annihilates the loading")
        u = Rv / nrm
        y = R.T @ u
        v_new = soft_threshold(y, lam)
        if not np.any(v_new):
            raise NumericalError("fully thresholded component: penalty zeroes every loading")
        trace.append(_rank1_objective(frob2, y, v_new, lam))
        if np.linalg.norm(v_new - v) <= tol * max(np.linalg.norm(v), 1e-300):
            v = v_new
            converged = True
            break
        v = v_new
    return Rank1Fit(u, v, trace, converged, n_iter)


@dataclass
class PcComponent:
    """One extracted component: normalized loading, score, and fit metadata."""

    loading: np.ndarray  # unit-norm p-vector
    score: np.ndarray | None  # n-vector X @ loading (original X)
    lam: float
    deflation_u: np.ndarray | None = None  # left factor used in deflation
    alpha: np.ndarray | None = None  # basis coefficients (predictive only)
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def sparsity(self) -> float:
        """Fraction of exactly-zero loading entries."""
        return float(np.mean(self.loading == 0.0))


@dataclass
class PcModel:
    """Ordered components from sequential deflation, plus dataset metadata."""

    method: str  # "traditional" or "predictive"
    components: list[PcComponent]
    pollutant_names: list[str]
    centering: np.ndarray
    scaling: np.ndarray | None = None
    basis_columns: list[str] | None = None  # predictive only

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def loadings(self) -> np.ndarray:
        """p x k matrix of normalized loadings."""
        return np.column_stack([c.loading for c in self.components])

    @property
    def scores(self) -> np.ndarray:
        """n x k matrix of training scores X @ V."""
        return np.column_stack([c.score for c in self.components])

    @property
    def sparsity(self) -> float:
        """Fraction of zero loadings across all retained components."""
        return float(np.mean(self.loadings == 0.0))

    def to_dict(self) -> dict:
        return {
            "format": "predpca-model",
            "method": self.method,
            "k": self.k,
            "pollutants": self.pollutant_names,
            "centering": self.centering.tolist(),
            "scaling": None if self.scaling is None else self.scaling.tolist(),
            "basis_columns": self.basis_columns,
            "components": [
                {
                    "loading": c.loading.tolist(),
                    "lambda": c.lam,
                    "converged": bool(c.converged),
                    "alpha": None if c.alpha is None else c.alpha.tolist(),
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcModel":
        if d.get("format") != "predpca-model":
            raise ValidationError("not a PC model document")
        comps = [
            PcComponent(
                loading=np.asarray(c["loading"], dtype=float),
                score=None,
                lam=float(c["lambda"]),
                alpha=None if c.get("alpha") is None else np.asarray(c["alpha"], dtype=float),
                converged=bool(c.get("converged", True)),
            )
            for c in d["components"]
        ]
        scaling = d.get("scaling")
        return cls(
            method=d["method"],
            components=comps,
            pollutant_names=list(d["pollutants"]),
            centering=np.asarray(d["centering"], dtype=float),
            scaling=None if scaling is None else np.asarray(scaling, dtype=float),
            basis_columns=d.get("basis_columns"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PcModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def orient_sign(vtilde: np.ndarray, u: np.ndarray, alpha: np.ndarray | None = None):
    """Flip the factor pair so the largest-|.| loading entry is positive."""
    if vtilde[np.argmax(np.abs(vtilde))] < 0:
        vtilde = -vtilde
        u = -u
        alpha = None if alpha is None else -alpha
    return vtilde, u, alpha


def fit_traditional(data: ExposureDataset, k: int, lambdas) -> PcModel:
    """Sequential (sparse) PCA of the centered exposure matrix.

    Component ``l`` is fit on the deflated residual; its reported score is
    the projection of the original centered matrix onto the normalized
    loading.  With all penalties zero the loadings match the SVD right
    singular vectors up to sign.
    """
    lambdas = list(lambdas)
    if k < 1 or k > min(data.n, data.p):
        raise ValidationError(f"k={k} outside [1, min(n, p)]")
    if len(lambdas) != k:
        raise ValidationError("need one penalty per component")
    X = data.X
    R = X.copy()
    comps = []
    for lam in lambdas:
        fit = rank1_sparse(R, lam)
        vtilde, u, _ = orient_sign(fit.vtilde, fit.u)
        v = vtilde / np.linalg.norm(vtilde)
        comps.append(
            PcComponent(
                loading=v,
                score=X @ v,
                lam=float(lam),
                deflation_u=u,
                objective_trace=fit.objective_trace,
                converged=fit.converged,
            )
        )
        R = R - np.outer(u, vtilde)
    return PcModel(
        method="traditional",
        components=comps,
        pollutant_names=list(data.pollutant_names),
        centering=data.centering,
        scaling=data.scaling,
    )


def project_scores(X_new: np.ndarray, model: PcModel) -> np.ndarray:
    """Scores of new rows: X_new @ V.  Rows must use the training centering."""
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim != 2 or X_new.shape[1] != len(model.pollutant_names):
        raise ValidationError(
            f"expected {len(model.pollutant_names)} pollutant columns, got shape {X_new.shape}"
        )
    return X_new @ model.loadings


def lambda_grid(R: np.ndarray, u0: np.ndarray, size: int = 30) -> np.ndarray:
    """Penalty grid [0, ..., lam_max] with log spacing.

    ``lam_max = max_j |(R^T u0)_j|`` computed from the unpenalized
    solution's left factor ``u0`` provably thresholds every loading entry.
    """
    if size < 2:
        raise ValidationError("grid needs at least two points")
    lam_max = float(np.abs(R.T @ u0).max())
    grid = np.concatenate([[0.0], np.geomspace(lam_max * 1e-3, lam_max, size - 1)])
    return grid
