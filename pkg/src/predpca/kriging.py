"""Universal kriging with an exponential covariance.

The mean is a regression on geographic covariates (intercept plus GIS score
columns, never spline terms); residuals are a stationary Gaussian process
with covariance psi*I(i=j) + kappa*exp(-d/phi).  Parameters are estimated
by maximum likelihood with the mean coefficients profiled out by
generalized least squares, and predictions at new locations are the
conditional mean and variance of the joint normal.  Cross-covariances
between distinct location sets never carry the nugget.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import NumericalError, ValidationError

PHI_BOUNDS_KM = (1e-3, 1e5)
JITTER = 1e-8
LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class CovParams:
    """Exponential-covariance parameters: nugget, partial sill, range (km)."""

    psi: float
    kappa: float
    phi: float

    def __post_init__(self):
        if not (np.isfinite(self.psi) and np.isfinite(self.kappa) and np.isfinite(self.phi)):
            raise ValidationError("covariance parameters must be finite")
        if self.psi < 0 or self.kappa <= 0 or self.phi <= 0:
            raise ValidationError("need psi >= 0, kappa > 0, phi > 0")


def exp_cov(
    locs_a: np.ndarray, locs_b: np.ndarray, cov: CovParams, include_nugget: bool | None = None
) -> np.ndarray:
    """Covariance matrix between two location sets.

    The nugget contributes only to like-with-like entries of a single set
    (i == j of the same locations); by default that is detected by object
    identity of the two arguments.
    """
    locs_a = np.asarray(locs_a, dtype=float)
    locs_b = np.asarray(locs_b, dtype=float)
    if include_nugget is None:
        include_nugget = locs_a is locs_b
    C = cov.kappa * np.exp(-cdist(locs_a, locs_b) / cov.phi)
    if include_nugget:
        if C.shape[0] != C.shape[1]:
            raise ValidationError("nugget applies only within a single location set")
        C[np.diag_indices_from(C)] += cov.psi
    return C


@dataclass
class UkOptions:
    """Knobs for the maximum-likelihood fit."""

    n_starts: int = 5  # deterministic starts spanning the distance decades
    polish_top: int = 2  # how many screened starts get a full simplex run
    maxiter: int = 200
    xatol: float = 1e-3
    fatol: float = 1e-4
    fixed: dict | None = None  # fix parameters by name, e.g. {"kappa": 1e-10}
    warm_start: CovParams | None = None


@dataclass
class KrigingModel:
    """Fitted universal-kriging model with cached training-side solves."""

    alpha: np.ndarray
    cov: CovParams
    train_locs: np.ndarray
    train_values: np.ndarray
    train_Z: np.ndarray
    loglik: float
    converged: bool = True
    mean_columns: list[str] | None = None
    _chol: tuple = field(default=None, repr=False)
    _siginv_resid: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._chol is None:
            sigma = exp_cov(self.train_locs, self.train_locs, self.cov, include_nugget=True)
            self._chol = _factor_with_jitter(sigma, self.cov.kappa)
        if self._siginv_resid is None:
            resid = self.train_values - self.train_Z @ self.alpha
            self._siginv_resid = cho_solve(self._chol, resid)

    def to_dict(self) -> dict:
        return {
            "format": "predpca-kriging",
            "psi": self.cov.psi,
            "kappa": self.cov.kappa,
            "phi": self.cov.phi,
            "alpha": self.alpha.tolist(),
            "mean_columns": self.mean_columns,
            "loglik": self.loglik,
            "converged": bool(self.converged),
            "train_locs": self.train_locs.tolist(),
            "train_values": self.train_values.tolist(),
            "train_Z": self.train_Z.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KrigingModel":
        if d.get("format") != "predpca-kriging":
            raise ValidationError("not a kriging model document")
        return cls(
            alpha=np.asarray(d["alpha"], dtype=float),
            cov=CovParams(float(d["psi"]), float(d["kappa"]), float(d["phi"])),
            train_locs=np.asarray(d["train_locs"], dtype=float),
            train_values=np.asarray(d["train_values"], dtype=float),
            train_Z=np.asarray(d["train_Z"], dtype=float),
            loglik=float(d["loglik"]),
            converged=bool(d.get("converged", True)),
            mean_columns=d.get("mean_columns"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "KrigingModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class KrigingPrediction:
    """Conditional mean and pointwise variance at prediction locations."""

    mean: np.ndarray
    variance: np.ndarray


def _factor_with_jitter(sigma: np.ndarray, kappa: float):
    try:
        return cho_factor(sigma, lower=True)
    except LinAlgError:
        warnings.warn("near-singular covariance; adding jitter", RuntimeWarning, stacklevel=3)
        return cho_factor(sigma + JITTER * kappa * np.eye(sigma.shape[0]), lower=True)


def _gls(L, Z: np.ndarray, u: np.ndarray):
    """GLS coefficients and the quadratic form of the residual, given chol(Sigma)."""
    Zw = solve_triangular(L[0], Z, lower=L[1])
    uw = solve_triangular(L[0], u, lower=L[1])
    alpha, _, _, _ = np.linalg.lstsq(Zw, uw, rcond=None)
    resid = uw - Zw @ alpha
    return alpha, float(resid @ resid)


def _profile_nll_scaled(log_ratio: float, log_phi: float, D: np.ndarray, Z: np.ndarray, u: np.ndarray):
    """Negative profile log-likelihood with the overall scale kappa profiled out.

    The correlation-shaped matrix C = (psi/kappa) I + exp(-D/phi) fixes the
    likelihood up to the scale, for which the maximizing value has a closed
    form; this cuts the simplex search to two parameters.
    """
    n = u.size
    if not (np.isfinite(log_ratio) and np.isfinite(log_phi)):
        return np.inf, None
    if not (np.log(PHI_BOUNDS_KM[0]) <= log_phi <= np.log(PHI_BOUNDS_KM[1])):
        return np.inf, None
    ratio = np.exp(log_ratio)
    phi = np.exp(log_phi)
    if not np.isfinite(ratio):
        return np.inf, None
    C = np.exp(-D / phi)
    C[np.diag_indices_from(C)] += ratio
    try:
        L = _factor_with_jitter(C, 1.0)
    except LinAlgError:
        return np.inf, None
    logdet = 2.0 * float(np.sum(np.log(np.diag(L[0]))))
    alpha, quad = _gls(L, Z, u)
    if quad <= 0.0:
        return np.inf, None
    kappa = quad / n
    nll = 0.5 * (n * LOG2PI + n * np.log(kappa) + logdet + n)
    return nll, (alpha, kappa, ratio * kappa, phi)


def _full_nll(params: CovParams, locs: np.ndarray, D: np.ndarray, Z: np.ndarray, u: np.ndarray):
    n = u.size
    sigma = params.kappa * np.exp(-D / params.phi)
    sigma[np.diag_indices_from(sigma)] += params.psi
    try:
        L = _factor_with_jitter(sigma, params.kappa)
    except LinAlgError:
        return np.inf, None
    logdet = 2.0 * float(np.sum(np.log(np.diag(L[0]))))
    alpha, quad = _gls(L, Z, u)
    nll = 0.5 * (n * LOG2PI + logdet + quad)
    return nll, alpha


def _deterministic_starts(D: np.ndarray, n_starts: int) -> list[tuple[float, float]]:
    """(nugget/sill ratio, range) pairs spanning the observed distance decades."""
    off = D[np.triu_indices_from(D, k=1)]
    off = off[off > 0]
    if off.size == 0:
        off = np.array([1.0])
    qs = np.quantile(off, np.linspace(0.1, 0.9, max(n_starts, 1)))
    ratios = [1.0 / 9.0, 1.0, 9.0, 1.0 / 9.0, 1.0]
    starts = []
    for i in range(max(n_starts, 1)):
        phi = float(np.clip(qs[i % len(qs)], *PHI_BOUNDS_KM))
        starts.append((ratios[i % len(ratios)], phi))
    return starts


def fit_uk(
    values: np.ndarray,
    Z: np.ndarray,
    locs: np.ndarray,
    opts: UkOptions | None = None,
    mean_columns: list[str] | None = None,
) -> KrigingModel:
    """Maximum-likelihood universal kriging fit.

    Mean coefficients are profiled out by GLS at every candidate covariance;
    the covariance parameters are optimized by Nelder-Mead in log space from
    several deterministic starts (screened first, best ones polished).

    Raises
    ------
    NumericalError
        If no start yields a finite likelihood ("ML did not converge").
    """
    opts = opts or UkOptions()
    values = np.asarray(values, dtype=float)
    Z = np.asarray(Z, dtype=float)
    locs = np.asarray(locs, dtype=float)
    n = values.size
    if Z.shape[0] != n or locs.shape != (n, 2):
        raise ValidationError("values, mean design and locations must align")
    if n < Z.shape[1] + 3:
        raise ValidationError(f"need at least m'+3 = {Z.shape[1] + 3} observations, got {n}")
    if np.unique(locs, axis=0).shape[0] != n:
        raise ValidationError("coincident points: training locations must be distinct")
    D = cdist(locs, locs)
    if opts.fixed:
        return _fit_uk_fixed(values, Z, locs, D, opts, mean_columns)

    ols_resid = values - Z @ np.linalg.lstsq(Z, values, rcond=None)[0]
    s2 = max(float(ols_resid.var()), 1e-12)

    def objective(theta):
        return _profile_nll_scaled(theta[0], theta[1], D, Z, values)[0]

    starts = _deterministic_starts(D, opts.n_starts)
    if opts.warm_start is not None:
        ws = opts.warm_start
        # clip so a degenerate warm start (nugget underflowed to 0) stays finite in log space
        starts = [(float(np.clip(ws.psi / ws.kappa, 1e-10, 1e10)), ws.phi)] + starts
    screened = []
    for ratio, phi in starts:
        theta = np.array([np.log(ratio), np.log(phi)])
        screened.append((objective(theta), theta))
    screened.sort(key=lambda t: t[0])

    best_nll, best_theta, any_success = np.inf, None, False
    for nll0, theta0 in screened[: max(opts.polish_top, 1)]:
        if not np.isfinite(nll0):
            continue
        res = minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={"maxiter": opts.maxiter, "xatol": opts.xatol, "fatol": opts.fatol},
        )
        any_success = any_success or bool(res.success)
        if res.fun < best_nll:
            best_nll, best_theta = res.fun, res.x
    if best_theta is None or not np.isfinite(best_nll):
        raise NumericalError("ML did not converge: no start produced a finite likelihood")

    _, packed = _profile_nll_scaled(best_theta[0], best_theta[1], D, Z, values)
    alpha, kappa, psi, phi = packed
    kappa = max(kappa, 1e-12 * s2)
    cov = CovParams(psi=float(psi), kappa=float(kappa), phi=float(phi))
    return KrigingModel(
        alpha=np.asarray(alpha, dtype=float),
        cov=cov,
        train_locs=locs,
        train_values=values,
        train_Z=Z,
        loglik=-float(best_nll),
        converged=any_success,
        mean_columns=mean_columns,
    )


def _fit_uk_fixed(values, Z, locs, D, opts: UkOptions, mean_columns):
    """Slow path: simplex over whichever of (psi, kappa, phi) are not fixed."""
    fixed = dict(opts.fixed)
    names = [p for p in ("psi", "kappa", "phi") if p not in fixed]

    def build(theta):
        vals = dict(fixed)
        for name, t in zip(names, theta):
            vals[name] = float(np.exp(t))
        vals.setdefault("psi", 0.0)
        return CovParams(max(vals["psi"], 0.0), vals["kappa"], vals["phi"])

    def objective(theta):
        try:
            params = build(theta)
        except ValidationError:
            return np.inf
        if not (PHI_BOUNDS_KM[0] <= params.phi <= PHI_BOUNDS_KM[1]):
            return np.inf
        return _full_nll(params, locs, D, Z, values)[0]

    ols_resid = values - Z @ np.linalg.lstsq(Z, values, rcond=None)[0]
    s2 = max(float(ols_resid.var()), 1e-12)
    defaults = {"psi": 0.5 * s2, "kappa": 0.5 * s2}
    best_nll, best_theta, any_success = np.inf, None, False
    for _, phi0 in _deterministic_starts(D, opts.n_starts):
        theta0 = np.array(
            [np.log(defaults.get(nm, phi0) if nm != "phi" else phi0) for nm in names]
        )
        if not names:
            best_nll, best_theta, any_success = objective(theta0), theta0, True
            break
        res = minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={"maxiter": opts.maxiter, "xatol": opts.xatol, "fatol": opts.fatol},
        )
        any_success = any_success or bool(res.success)
        if res.fun < best_nll:
            best_nll, best_theta = res.fun, res.x
    if best_theta is None or not np.isfinite(best_nll):
        raise NumericalError("ML did not converge: no start produced a finite likelihood")
    params = build(best_theta)
    nll, alpha = _full_nll(params, locs, D, Z, values)
    return KrigingModel(
        alpha=np.asarray(alpha, dtype=float),
        cov=params,
        train_locs=locs,
        train_values=values,
        train_Z=Z,
        loglik=-float(nll),
        converged=any_success,
        mean_columns=mean_columns,
    )


def build_uk_model(
    values: np.ndarray,
    Z: np.ndarray,
    locs: np.ndarray,
    cov: CovParams,
    alpha: np.ndarray | None = None,
    mean_columns: list[str] | None = None,
) -> KrigingModel:
    """Model at known covariance parameters; ``alpha`` defaults to the GLS fit."""
    values = np.asarray(values, dtype=float)
    Z = np.asarray(Z, dtype=float)
    locs = np.asarray(locs, dtype=float)
    D = cdist(locs, locs)
    sigma = cov.kappa * np.exp(-D / cov.phi)
    sigma[np.diag_indices_from(sigma)] += cov.psi
    L = _factor_with_jitter(sigma, cov.kappa)
    if alpha is None:
        alpha, _ = _gls(L, Z, values)
    nll, _ = _full_nll(cov, locs, D, Z, values)
    return KrigingModel(
        alpha=np.asarray(alpha, dtype=float),
        cov=cov,
        train_locs=locs,
        train_values=values,
        train_Z=Z,
        loglik=-float(nll),
        mean_columns=mean_columns,
        _chol=L,
    )


def predict_uk(model: KrigingModel, new_locs: np.ndarray, Z_new: np.ndarray) -> KrigingPrediction:
    """Conditional mean and variance at new locations.

    mean = mu_2 + S21 S11^{-1} (u - mu_1); variance is the diagonal of
    S22 - S21 S11^{-1} S12, clamped at zero against roundoff.
    """
    new_locs = np.asarray(new_locs, dtype=float)
    Z_new = np.asarray(Z_new, dtype=float)
    if new_locs.ndim != 2 or new_locs.shape[1] != 2:
        raise ValidationError("prediction locations must be (m, 2)")
    if Z_new.shape != (new_locs.shape[0], model.train_Z.shape[1]):
        raise ValidationError(
            f"prediction design must be {(new_locs.shape[0], model.train_Z.shape[1])}, "
            f"got {Z_new.shape}"
        )
    S21 = exp_cov(new_locs, model.train_locs, model.cov, include_nugget=False)
    mean = Z_new @ model.alpha + S21 @ model._siginv_resid
    back = cho_solve(model._chol, S21.T)
    variance = (model.cov.psi + model.cov.kappa) - np.sum(S21 * back.T, axis=1)
    variance = np.maximum(variance, 0.0)
    return KrigingPrediction(mean=mean, variance=variance)
