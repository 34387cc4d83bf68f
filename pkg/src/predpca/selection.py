"""Metrics, 10-fold cross-validation of the two-stage pipeline, and penalty selection.

Cross-validation refits everything per fold from raw inputs: covariate
filters, GIS PCA, spline knots, loadings and kriging parameters are all
computed on training rows only.  "True" held-out scores are projections of
held-out exposure rows (centered with the training statistics) onto the
training loadings; predictions come from universal kriging of the training
scores.  Penalties are selected sequentially per component, either
maximizing that component's cross-validated score R-squared or minimizing
the out-of-sample Frobenius reconstruction distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .design import FittedGeoDesign, GeoDesignBuilder
from .errors import NumericalError, ValidationError
from .kriging import CovParams, KrigingModel, UkOptions, fit_uk, predict_uk
from .predictive import PredictiveRank1Fit, fit_predictive, rank1_predictive
from .spca import ExposureDataset, PcModel, fit_traditional, orient_sign, rank1_sparse

METHODS = ("traditional", "predictive")


def r2(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Prediction R-squared, clamped below at zero.

    ``max(0, 1 - sum((x - xhat)^2) / sum((x - xbar)^2))``; predictions worse
    than the observed mean score zero.
    """
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape:
        raise ValidationError("observed and predicted lengths differ")
    if observed.size < 2:
        raise ValidationError("need at least two observations")
    denom = float(np.sum((observed - observed.mean()) ** 2))
    if denom == 0.0:
        raise ValidationError("undefined R2: observed values are constant")
    return max(0.0, 1.0 - float(np.sum((observed - predicted) ** 2)) / denom)


def mse(observed: np.ndarray, predicted: np.ndarray) -> float:
    observed = np.asarray(observed, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if observed.shape != predicted.shape:
        raise ValidationError("observed and predicted lengths differ")
    return float(np.mean((observed - predicted) ** 2))


def avg_abs_correlation(scores: np.ndarray) -> float:
    """Average absolute pairwise correlation between score columns."""
    scores = np.asarray(scores, dtype=float)
    k = scores.shape[1]
    if k < 2:
        return 0.0
    corr = np.corrcoef(scores, rowvar=False)
    iu = np.triu_indices(k, k=1)
    return float(np.mean(np.abs(corr[iu])))


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Random fold labels in 1..folds with sizes differing by at most one."""
    if folds < 2 or folds > n:
        raise ValidationError(f"folds={folds} outside [2, n={n}]")
    rng = np.random.default_rng(seed)
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % folds + 1
    return labels


def frobenius_loss(values: np.ndarray, reconstruction: np.ndarray) -> float:
    """Frobenius distance between observed exposures and a reconstruction."""
    return float(np.linalg.norm(np.asarray(values) - np.asarray(reconstruction)))


@dataclass
class _ComponentFit:
    """One not-yet-committed component extension of a fold."""

    lam: float
    loading: np.ndarray
    vtilde: np.ndarray
    deflate_u: np.ndarray
    score_tr: np.ndarray
    truth_te: np.ndarray
    pred_te: np.ndarray
    uk: KrigingModel


@dataclass
class _FoldState:
    """Everything one fold needs, fitted on its training rows only."""

    fold: int
    tr_idx: np.ndarray
    te_idx: np.ndarray
    design: FittedGeoDesign
    data_tr: ExposureDataset
    X_te: np.ndarray
    locs_te: np.ndarray
    uk_Z_te: np.ndarray
    residual: np.ndarray = None
    committed: list[_ComponentFit] = field(default_factory=list)

    def __post_init__(self):
        if self.residual is None:
            self.residual = self.data_tr.X.copy()


def _prepare_folds(
    data: ExposureDataset, builder: GeoDesignBuilder, folds: int, seed: int
) -> list[_FoldState]:
    labels = assign_folds(data.n, folds, seed)
    states = []
    for f in range(1, folds + 1):
        tr = np.flatnonzero(labels != f)
        te = np.flatnonzero(labels == f)
        design = builder.fit(tr)
        data_tr = data.subset(tr)
        states.append(
            _FoldState(
                fold=f,
                tr_idx=tr,
                te_idx=te,
                design=design,
                data_tr=data_tr,
                X_te=data_tr.center_new(data.values[te]),
                locs_te=data.locations[te],
                uk_Z_te=design.uk_design_at(idx=te),
            )
        )
    return states


def _fit_next_component(
    state: _FoldState,
    method: str,
    lam: float,
    uk_opts: UkOptions | None,
    base: PredictiveRank1Fit | None = None,
    uk_warm: CovParams | None = None,
) -> _ComponentFit:
    if method == "traditional":
        fit = rank1_sparse(state.residual, lam)
        vtilde, u, _ = orient_sign(fit.vtilde, fit.u)
    elif method == "predictive":
        if base is None:
            base = rank1_predictive(state.residual, state.design.basis, 0.0)
        fit = base if lam == 0.0 else rank1_predictive(
            state.residual, state.design.basis, lam, init=base.vtilde
        )
        vtilde, u, _ = orient_sign(fit.vtilde, fit.u, fit.alpha)
    else:
        raise ValidationError(f"unknown method {method!r}")
    v = vtilde / np.linalg.norm(vtilde)
    score_tr = state.data_tr.X @ v
    if uk_warm is not None and uk_opts is not None:
        uk_opts = replace(uk_opts, warm_start=uk_warm)
    try:
        uk = fit_uk(
            score_tr,
            state.design.uk_design,
            state.design.train_locs,
            uk_opts,
            mean_columns=state.design.uk_columns,
        )
    except ValidationError as exc:
        raise ValidationError(f"fold {state.fold} too small for UK fit: {exc}") from exc
    pred = predict_uk(uk, state.locs_te, state.uk_Z_te)
    return _ComponentFit(
        lam=float(lam),
        loading=v,
        vtilde=vtilde,
        deflate_u=u,
        score_tr=score_tr,
        truth_te=state.X_te @ v,
        pred_te=pred.mean,
        uk=uk,
    )


def _commit(state: _FoldState, comp: _ComponentFit) -> None:
    state.residual = state.residual - np.outer(comp.deflate_u, comp.vtilde)
    state.committed.append(comp)


@dataclass
class FoldDetail:
    """Training-side artifacts of one fold, for audits and diagnostics."""

    fold: int
    test_idx: np.ndarray
    covariate_means: np.ndarray
    covariate_sds: np.ndarray
    gis_loadings: np.ndarray
    spline_knots: np.ndarray
    exposure_centering: np.ndarray
    loadings: np.ndarray
    kriging_params: list[tuple[float, float, float]]
    predictions: np.ndarray


@dataclass
class CvReport:
    """Cross-validated predictability of the pipeline's component scores."""

    method: str
    lambdas: list[float]
    r2_scores: list[float]
    mse_scores: list[float]
    avg_abs_correlation: float
    score_correlations: np.ndarray
    sparseness: float
    pollutant_r2: dict[str, float]
    frobenius_loss: float
    predicted: np.ndarray  # n x k out-of-sample score predictions
    truth: np.ndarray  # n x k projection-defined scores
    model: PcModel
    fold_details: list[FoldDetail] | None = None

    def summary_dict(self) -> dict:
        return {
            "method": self.method,
            "lambdas": list(self.lambdas),
            "r2_scores": list(self.r2_scores),
            "mse_scores": list(self.mse_scores),
            "avg_abs_correlation": self.avg_abs_correlation,
            "sparseness": self.sparseness,
            "pollutant_r2": dict(self.pollutant_r2),
            "frobenius_loss": self.frobenius_loss,
        }


def _reconstruction(
    data: ExposureDataset, states: list[_FoldState], extra: dict[int, _ComponentFit] | None = None
) -> np.ndarray:
    """Assemble the exposure reconstruction from fold-wise score predictions.

    Each fold's held-out rows are rebuilt as pred @ V^T in centered space and
    then un-centered with that fold's training statistics.
    """
    out = np.zeros_like(data.values)
    for st in states:
        comps = list(st.committed)
        if extra is not None:
            comps.append(extra[st.fold])
        rows = np.zeros((st.te_idx.size, data.p))
        for c in comps:
            rows += np.outer(c.pred_te, c.loading)
        if st.data_tr.scaling is not None:
            rows = rows * st.data_tr.scaling
        out[st.te_idx] = rows + st.data_tr.centering
    return out


def cv_pipeline(
    data: ExposureDataset,
    builder: GeoDesignBuilder,
    method: str,
    k: int,
    lambdas,
    folds: int = 10,
    seed: int = 0,
    uk_opts: UkOptions | None = None,
    collect_fold_details: bool = False,
) -> CvReport:
    """Out-of-sample evaluation of PCA (traditional or predictive) plus kriging.

    Every fold refits preprocessing, basis, loadings and kriging on its
    training rows; held-out scores are predicted at the held-out locations
    and compared against projections onto the training loadings.
    """
    lambdas = list(lambdas)
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    if len(lambdas) != k:
        raise ValidationError("need one penalty per component")
    states = _prepare_folds(data, builder, folds, seed)
    for lam in lambdas:
        for st in states:
            _commit(st, _fit_next_component(st, method, lam, uk_opts))

    n, p = data.values.shape
    predicted = np.zeros((n, k))
    truth = np.zeros((n, k))
    for st in states:
        for l, c in enumerate(st.committed):
            predicted[st.te_idx, l] = c.pred_te
            truth[st.te_idx, l] = c.truth_te
    r2s = [r2(truth[:, l], predicted[:, l]) for l in range(k)]
    mses = [mse(truth[:, l], predicted[:, l]) for l in range(k)]
    correlations = np.corrcoef(predicted, rowvar=False) if k > 1 else np.ones((1, 1))

    full_design = builder.fit(None)
    if method == "traditional":
        model = fit_traditional(data, k, lambdas)
    else:
        model = fit_predictive(data, full_design.basis, k, lambdas)

    recon = _reconstruction(data, states)
    pol_r2 = {
        name: r2(data.values[:, j], recon[:, j]) for j, name in enumerate(data.pollutant_names)
    }
    details = None
    if collect_fold_details:
        details = [
            FoldDetail(
                fold=st.fold,
                test_idx=st.te_idx.copy(),
                covariate_means=st.design.clean.centering.copy(),
                covariate_sds=st.design.clean.scaling.copy(),
                gis_loadings=st.design.gis.loadings.copy(),
                spline_knots=st.design.spline.knots.copy(),
                exposure_centering=st.data_tr.centering.copy(),
                loadings=np.column_stack([c.loading for c in st.committed]),
                kriging_params=[(c.uk.cov.psi, c.uk.cov.kappa, c.uk.cov.phi) for c in st.committed],
                predictions=np.column_stack([c.pred_te for c in st.committed]),
            )
            for st in states
        ]
    return CvReport(
        method=method,
        lambdas=lambdas,
        r2_scores=r2s,
        mse_scores=mses,
        avg_abs_correlation=avg_abs_correlation(predicted) if k > 1 else 0.0,
        score_correlations=correlations,
        sparseness=model.sparsity,
        pollutant_r2=pol_r2,
        frobenius_loss=frobenius_loss(data.values, recon),
        predicted=predicted,
        truth=truth,
        model=model,
        fold_details=details,
    )


@dataclass
class PenaltyChoice:
    """Sequentially selected penalties with the full search trace."""

    lambdas: list[float]
    criterion: str  # "max_scores" or "max_pollutants"
    trace: list[dict]


def select_lambda(
    data: ExposureDataset,
    builder: GeoDesignBuilder,
    method: str,
    grid,
    criterion: str,
    k: int = 3,
    folds: int = 10,
    seed: int = 0,
    uk_opts: UkOptions | None = None,
) -> PenaltyChoice:
    """Pick one penalty per component by cross-validation.

    ``max_scores`` maximizes the component's own out-of-sample score
    R-squared; ``max_pollutants`` minimizes the out-of-sample Frobenius
    distance between the exposures and their reconstruction from kriged
    score predictions.  Components are handled sequentially: earlier
    components stay frozen at their chosen penalties.  Ties prefer the
    larger (sparser) penalty; penalties that threshold a component to zero
    in any fold are infeasible.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValidationError("penalty grid is empty")
    if grid[0] != 0.0:
        raise ValidationError("penalty grid must contain 0")
    if criterion not in ("max_scores", "max_pollutants"):
        raise ValidationError(f"unknown criterion {criterion!r}")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}")
    states = _prepare_folds(data, builder, folds, seed)
    chosen: list[float] = []
    trace: list[dict] = []
    for l in range(k):
        # the unpenalized solve seeds every penalty on this residual, and the
        # previous grid point's covariance parameters warm-start the UK fit
        bases = {
            st.fold: rank1_predictive(st.residual, st.design.basis, 0.0)
            if method == "predictive"
            else None
            for st in states
        }
        warm: dict[int, CovParams | None] = {st.fold: None for st in states}
        best_lam, best_value, best_fits = None, None, None
        for lam in grid:
            try:
                fits = {
                    st.fold: _fit_next_component(
                        st, method, lam, uk_opts, base=bases[st.fold], uk_warm=warm[st.fold]
                    )
                    for st in states
                }
            except NumericalError as exc:
                trace.append(
                    {"component": l + 1, "lambda": lam, "value": None, "feasible": False,
                     "note": str(exc)}
                )
                continue
            for st in states:
                warm[st.fold] = fits[st.fold].uk.cov
            if criterion == "max_scores":
                truth = np.concatenate([fits[st.fold].truth_te for st in states])
                pred = np.concatenate([fits[st.fold].pred_te for st in states])
                value = r2(truth, pred)
                better = best_value is None or value >= best_value
            else:
                recon = _reconstruction(data, states, extra=fits)
                value = frobenius_loss(data.values, recon)
                better = best_value is None or value <= best_value
            trace.append(
                {"component": l + 1, "lambda": lam, "value": value, "feasible": True, "note": ""}
            )
            if better:
                best_lam, best_value, best_fits = lam, value, fits
        if best_fits is None:
            raise NumericalError(f"no feasible penalty for component {l + 1}")
        for st in states:
            _commit(st, best_fits[st.fold])
        chosen.append(best_lam)
    return PenaltyChoice(lambdas=chosen, criterion=criterion, trace=trace)
