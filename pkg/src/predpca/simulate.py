"""Synthetic multi-pollutant studies: exposure scenarios and a health analysis.

Exposures are generated at synthetic monitor coordinates as linear
combinations of a geographic generation design (standardized synthetic GIS
covariates plus a thin-plate basis) with i.i.d. noise:
``X[:, j] = Z gamma_j + eps_j``.  Scenario presets differ in how much of
each pollutant's variance is geographically structured, which controls how
predictable the principal scores are by universal kriging.  The study
runner fits both PCA variants on a training split, predicts scores at
held-out monitors, and reports predictability, score correlations and
sparseness per method/penalty cell; the health runner regresses simulated
endpoints on kriged score predictions at subject locations.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import statsmodels.api as sm

from .design import GeoDesignBuilder
from .errors import NumericalError, ValidationError
from .kriging import UkOptions, fit_uk, predict_uk
from .predictive import fit_predictive
from .preprocess import RawCovariateTable
from .selection import avg_abs_correlation, r2, select_lambda
from .spca import ExposureDataset, PcModel, fit_traditional, lambda_grid, rank1_sparse
from .splines import tps_basis

HEALTH_ERROR_SD = 10.0
# endpoint 1: pollutant 1 drives it; endpoint 2: pollutants 5 and 8
Y1_POLLUTANT = 0
Y2_POLLUTANTS = (4, 7)
SUBJECT_COVARIATES = ("age", "race", "income", "education", "smoking")


@dataclass
class SimConfig:
    """One committed simulation scenario."""

    scenario: int
    n_pollutants: int
    n_gis: int
    gen_spline_rank: int
    gamma: np.ndarray  # p x (1 + n_gis + gen_spline_rank)
    sigma: np.ndarray  # p noise SDs
    groups: dict[str, list[int]]  # 1-based pollutant indices per group
    duplicate_pairs: list[list[int]]
    proportions: dict[str, list[float]]
    pool_size: int
    location_seed: int
    covariate_seed: int

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        m = 1 + self.n_gis + self.gen_spline_rank
        if self.gamma.shape != (self.n_pollutants, m):
            raise ValidationError(f"gamma must be {self.n_pollutants} x {m}")
        if self.sigma.shape != (self.n_pollutants,):
            raise ValidationError("sigma must have one SD per pollutant")
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.sigma))):
            raise ValidationError("non-finite simulation parameters")

    @property
    def pollutant_names(self) -> list[str]:
        return [f"pol{j + 1}" for j in range(self.n_pollutants)]

    def to_dict(self) -> dict:
        return {
            "format": "predpca-sim-config",
            "scenario": self.scenario,
            "n_pollutants": self.n_pollutants,
            "n_gis": self.n_gis,
            "gen_spline_rank": self.gen_spline_rank,
            "gamma": self.gamma.tolist(),
            "sigma": self.sigma.tolist(),
            "groups": self.groups,
            "duplicate_pairs": self.duplicate_pairs,
            "proportions": self.proportions,
            "pool_size": self.pool_size,
            "location_seed": self.location_seed,
            "covariate_seed": self.covariate_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        if d.get("format") != "predpca-sim-config":
            raise ValidationError("not a simulation config document")
        return cls(
            scenario=int(d["scenario"]),
            n_pollutants=int(d["n_pollutants"]),
            n_gis=int(d["n_gis"]),
            gen_spline_rank=int(d["gen_spline_rank"]),
            gamma=np.asarray(d["gamma"], dtype=float),
            sigma=np.asarray(d["sigma"], dtype=float),
            groups={k: list(v) for k, v in d["groups"].items()},
            duplicate_pairs=[list(p) for p in d["duplicate_pairs"]],
            proportions={k: list(v) for k, v in d["proportions"].items()},
            pool_size=int(d["pool_size"]),
            location_seed=int(d["location_seed"]),
            covariate_seed=int(d["covariate_seed"]),
        )

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def load_preset(scenario: int) -> SimConfig:
    """Load a committed scenario preset (1: high, 2: low predictability)."""
    if scenario not in (1, 2):
        raise ValidationError("scenario must be 1 or 2")
    ref = importlib.resources.files("predpca").joinpath(f"presets/scenario{scenario}.json")
    return SimConfig.from_dict(json.loads(ref.read_text()))


def monitor_pool(n: int, seed: int, extent=(3000.0, 2000.0)) -> np.ndarray:
    """Synthetic national-style monitor coordinates: urban clusters plus rural fill."""
    rng = np.random.default_rng(seed)
    n_clustered = int(round(0.6 * n))
    centers = rng.uniform([0.1 * extent[0], 0.1 * extent[1]], [0.9 * extent[0], 0.9 * extent[1]], size=(12, 2))
    weights = rng.dirichlet(np.full(12, 1.5))
    assign = rng.choice(12, size=n_clustered, p=weights)
    clustered = centers[assign] + rng.normal(scale=60.0, size=(n_clustered, 2))
    rural = rng.uniform([0.0, 0.0], list(extent), size=(n - n_clustered, 2))
    locs = np.vstack([clustered, rural])
    locs = np.clip(locs, [0.0, 0.0], list(extent))
    # continuous draws collide with probability zero, but keep the ingest
    # invariant airtight
    while np.unique(locs, axis=0).shape[0] != n:
        dup = n - np.unique(locs, axis=0).shape[0]
        locs[-dup:] += rng.normal(scale=0.1, size=(dup, 2))
    return locs[rng.permutation(n)]


def _smooth_field(rng, locs, n_bumps: int, scale: float) -> np.ndarray:
    extent = locs.max(axis=0)
    centers = rng.uniform([0, 0], extent, size=(n_bumps, 2))
    weights = rng.normal(size=n_bumps)
    d2 = ((locs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2 * scale**2)) @ weights


def synthetic_gis_table(locs: np.ndarray, seed: int) -> RawCovariateTable:
    """Committed synthetic GIS covariates over a location set.

    Broad-to-fine smooth fields mimic land-use intensities; one column is a
    distance (meters) to the nearest of a few fixed features so the distance
    pipeline (truncate at 10 km, log) is exercised end to end.
    """
    rng = np.random.default_rng(seed)
    extent = float(locs.max())
    features = rng.uniform(0, extent, size=(30, 2))
    dist_km = np.min(np.linalg.norm(locs[:, None, :] - features[None, :, :], axis=2), axis=1)
    cols = {
        "urban_broad": _smooth_field(rng, locs, 10, 0.25 * extent),
        "land_mid_a": _smooth_field(rng, locs, 16, 0.12 * extent),
        "land_mid_b": _smooth_field(rng, locs, 16, 0.10 * extent),
        "veg_fine": _smooth_field(rng, locs, 40, 0.04 * extent),
        "terrain_trend": (locs[:, 0] + 0.5 * locs[:, 1]) / extent
        + _smooth_field(rng, locs, 8, 0.30 * extent),
        "dist_feature": dist_km * 1000.0,
    }
    names = list(cols)
    kinds = ["distance" if c.startswith("dist_") else "other" for c in names]
    return RawCovariateTable(
        [f"s{i}" for i in range(locs.shape[0])], names, np.column_stack(list(cols.values())), kinds
    )


def _generation_design(cfg: SimConfig, locs: np.ndarray, gis_rows: RawCovariateTable) -> np.ndarray:
    """Standardized generation design [1 | gis | spline] used only to simulate."""
    cols = [np.ones(locs.shape[0])]
    for j, name in enumerate(gis_rows.names[: cfg.n_gis]):
        x = gis_rows.values[:, j]
        if gis_rows.kinds[j] == "distance":
            x = np.log(np.minimum(x, 10_000.0) + 1.0)
        sd = x.std()
        cols.append((x - x.mean()) / (sd if sd > 0 else 1.0))
    spline = tps_basis(locs, rank=cfg.gen_spline_rank, seed=0)
    cols.append(spline.basis - spline.basis.mean(axis=0))
    return np.column_stack(cols)


def gen_exposure(
    cfg: SimConfig, locs: np.ndarray, gis_rows: RawCovariateTable, rng: np.random.Generator
) -> ExposureDataset:
    """Simulate the multi-pollutant matrix X[:, j] = Z gamma_j + eps_j."""
    Z = _generation_design(cfg, locs, gis_rows)
    X = Z @ cfg.gamma.T
    X = X + rng.normal(size=X.shape) * cfg.sigma
    return ExposureDataset(locs, X, cfg.pollutant_names)


@dataclass
class StudyCell:
    """One method x penalty cell of the scenario summary."""

    penalty: str
    method: str
    r2_by_pc: np.ndarray  # descending, averaged over replicates
    avg_abs_correlation: float
    sparseness: float
    lambdas: list[float] = field(default_factory=list)


def _fit_and_evaluate(data, builder, method, k, lambdas, train, test, uk_opts):
    """Fit on training monitors, krige scores to test monitors, score the fit."""
    design = builder.fit(train)
    data_tr = data.subset(train)
    if method == "traditional":
        model = fit_traditional(data_tr, k, lambdas)
    else:
        model = fit_predictive(data_tr, design.basis, k, lambdas)
    X_te = data_tr.center_new(data.values[test])
    truth = X_te @ model.loadings
    uk_Z_te = design.uk_design_at(idx=test)
    preds = np.empty_like(truth)
    uk_models = []
    for l in range(k):
        uk = fit_uk(
            model.scores[:, l], design.uk_design, design.train_locs, uk_opts,
            mean_columns=design.uk_columns,
        )
        preds[:, l] = predict_uk(uk, data.locations[test], uk_Z_te).mean
        uk_models.append(uk)
    r2s = np.array([r2(truth[:, l], preds[:, l]) for l in range(k)])
    return model, uk_models, truth, preds, r2s


PENALTY_MODES = ("none", "max_scores", "max_pollutants")


def run_sim_study(
    cfg: SimConfig,
    reps: int = 100,
    split: tuple[int, int] = (300, 100),
    seed: int = 0,
    k: int = 3,
    methods: tuple[str, ...] = ("traditional", "predictive"),
    penalties: tuple[str, ...] = PENALTY_MODES,
    gis_g: int = 5,
    spline_rank: int = 10,
    grid_size: int = 8,
    folds: int = 10,
    uk_opts: UkOptions | None = None,
    selection_uk_opts: UkOptions | None = None,
) -> pd.DataFrame:
    """Repeated-replicate scenario study in the two-table layout.

    Per replicate and cell: fit on ``split[0]`` monitors, predict component
    scores at the held-out ``split[1]`` locations, reorder components from
    most to least predictable, and average R-squared / absolute score
    correlation / sparseness over replicates.
    """
    if reps < 1:
        raise ValidationError("need at least one replicate")
    n_fit, n_eval = split
    n_total = n_fit + n_eval
    if cfg.pool_size < n_total:
        raise ValidationError("location pool smaller than the requested split")
    for pen in penalties:
        if pen not in PENALTY_MODES:
            raise ValidationError(f"unknown penalty mode {pen!r}")
    uk_opts = uk_opts or UkOptions()
    selection_uk_opts = selection_uk_opts or UkOptions(polish_top=1, maxiter=120)
    pool = monitor_pool(cfg.pool_size, cfg.location_seed)
    gis_table = synthetic_gis_table(pool, cfg.covariate_seed)

    acc: dict[tuple[str, str], list] = {(p, m): [] for p in penalties for m in methods}
    for rep in range(reps):
        rng = np.random.default_rng([seed, rep])
        pick = rng.choice(cfg.pool_size, size=n_total, replace=False)
        locs = pool[pick]
        rows = gis_table.take_rows(pick)
        data = gen_exposure(cfg, locs, rows, rng)
        order = rng.permutation(n_total)
        train, test = order[:n_fit], order[n_fit:]
        builder = GeoDesignBuilder(rows, locs, gis_g=gis_g, spline_rank=spline_rank, seed=0)
        train_rows = rows.take_rows(train)
        data_tr = data.subset(train)
        for method in methods:
            lam_by_pen: dict[str, list[float]] = {}
            for pen in penalties:
                if pen == "none":
                    lam_by_pen[pen] = [0.0] * k
                    continue
                sel_builder = GeoDesignBuilder(
                    train_rows, locs[train], gis_g=gis_g, spline_rank=spline_rank, seed=0
                )
                u0 = rank1_sparse(data_tr.X, 0.0).u
                grid = lambda_grid(data_tr.X, u0, size=grid_size)[:-1]
                choice = select_lambda(
                    data_tr, sel_builder, method, grid, pen, k=k, folds=folds,
                    seed=int(rng.integers(2**31)), uk_opts=selection_uk_opts,
                )
                lam_by_pen[pen] = choice.lambdas
            for pen, lambdas in lam_by_pen.items():
                model, _, truth, preds, r2s = _fit_and_evaluate(
                    data, builder, method, k, lambdas, train, test, uk_opts
                )
                acc[(pen, method)].append(
                    {
                        "r2": np.sort(r2s)[::-1],
                        "corr": avg_abs_correlation(preds),
                        "sparseness": model.sparsity,
                        "lambdas": lambdas,
                    }
                )

    records = []
    for pen in penalties:
        for method in methods:
            cell = acc[(pen, method)]
            r2_mat = np.vstack([c["r2"] for c in cell])
            rec = {
                "scenario": cfg.scenario,
                "penalty": pen,
                "method": method,
                "reps": len(cell),
                "avg_abs_correlation": float(np.mean([c["corr"] for c in cell])),
                "sparseness_pct": 100.0 * float(np.mean([c["sparseness"] for c in cell])),
            }
            for l in range(k):
                rec[f"pc{l + 1}_r2"] = float(r2_mat[:, l].mean())
            records.append(rec)
    cols = ["scenario", "penalty", "method", "reps"]
    cols += [f"pc{l + 1}_r2" for l in range(k)]
    cols += ["avg_abs_correlation", "sparseness_pct"]
    return pd.DataFrame.from_records(records)[cols]


@dataclass
class CohortSim:
    """Simulated monitors, subjects, covariates and health endpoints."""

    monitor_idx: np.ndarray
    subject_idx: np.ndarray
    locs: np.ndarray
    gis_rows: RawCovariateTable
    exposure: ExposureDataset  # at all locations (monitors + subjects)
    covariates: pd.DataFrame  # per subject: age + categorical codes
    y1: np.ndarray
    y2: np.ndarray


def gen_cohort(
    cfg: SimConfig, seed: int, n_monitors: int = 300, n_subjects: int = 7075
) -> CohortSim:
    """Generate the health-analysis world: exposures everywhere, endpoints at subjects.

    Endpoint 1 is driven by pollutant 1 (plus subject covariates); endpoint 2
    by pollutants 5 and 8.  Categorical covariates use integer codes 1..4
    drawn with the configured proportions; errors are N(0, 10^2).
    """
    rng = np.random.default_rng([cfg.location_seed, seed])
    n_total = n_monitors + n_subjects
    locs = monitor_pool(n_total, int(rng.integers(2**31)))
    gis_rows = synthetic_gis_table(locs, cfg.covariate_seed)
    exposure = gen_exposure(cfg, locs, gis_rows, rng)
    order = rng.permutation(n_total)
    monitor_idx, subject_idx = order[:n_monitors], order[n_monitors:]

    cov = {"age": rng.uniform(30.0, 80.0, size=n_subjects)}
    for name in SUBJECT_COVARIATES[1:]:
        probs = np.asarray(cfg.proportions[name], dtype=float)
        cov[name] = rng.choice(np.arange(1, probs.size + 1), size=n_subjects, p=probs).astype(float)
    covariates = pd.DataFrame(cov)

    X_subj = exposure.values[subject_idx]
    base = (
        0.5 * covariates["age"].to_numpy()
        + 2.0 * covariates["race"].to_numpy()
        - 0.5 * covariates["income"].to_numpy()
        - 1.0 * covariates["education"].to_numpy()
        + 1.0 * covariates["smoking"].to_numpy()
    )
    y1 = 0.35 * X_subj[:, Y1_POLLUTANT] + base + HEALTH_ERROR_SD * rng.normal(size=n_subjects)
    y2 = (
        0.6 * X_subj[:, Y2_POLLUTANTS[0]]
        + 0.6 * X_subj[:, Y2_POLLUTANTS[1]]
        + base
        + HEALTH_ERROR_SD * rng.normal(size=n_subjects)
    )
    return CohortSim(monitor_idx, subject_idx, locs, gis_rows, exposure, covariates, y1, y2)


@dataclass
class HealthFit:
    """OLS health fit: one row per predictor (scores then subject covariates)."""

    names: list[str]
    coef: np.ndarray
    stderr: np.ndarray
    pvalues: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"term": self.names, "beta": self.coef, "se": self.stderr, "pval": self.pvalues}
        )


def health_regression(endpoint: np.ndarray, scores: np.ndarray, covariates: pd.DataFrame) -> HealthFit:
    """Endpoint ~ intercept + predicted scores + subject covariates (OLS)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    k = scores.shape[1]
    design = np.column_stack([scores, covariates.to_numpy(dtype=float)])
    names = [f"pc{l + 1}" for l in range(k)] + list(covariates.columns)
    design = sm.add_constant(design)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise NumericalError("rank-deficient health design")
    fit = sm.OLS(np.asarray(endpoint, dtype=float), design).fit()
    return HealthFit(
        names=names,
        coef=fit.params[1:],
        stderr=fit.bse[1:],
        pvalues=fit.pvalues[1:],
    )


def describe_mixture(loading: np.ndarray, threshold: float = 0.2) -> list[int]:
    """1-based pollutant indices carrying the bulk of a loading vector."""
    mags = np.abs(loading)
    keep = np.flatnonzero((mags >= threshold * mags.max()) & (mags > 0))
    return [int(j + 1) for j in keep[np.argsort(-mags[keep])]]


def run_health_sim(
    cfg: SimConfig,
    seed: int,
    n_monitors: int = 300,
    n_subjects: int = 7075,
    k: int = 3,
    grid_size: int = 8,
    folds: int = 10,
    gis_g: int = 5,
    spline_rank: int = 10,
    uk_opts: UkOptions | None = None,
    selection_uk_opts: UkOptions | None = None,
    select_penalties: bool = True,
) -> dict:
    """One full simulated health analysis for both PCA variants.

    Penalties are chosen to maximize pollutant predictability (the study's
    default); scores are kriged from monitors to subjects and used as health
    predictors next to the subject covariates.
    """
    uk_opts = uk_opts or UkOptions()
    selection_uk_opts = selection_uk_opts or UkOptions(polish_top=1, maxiter=120)
    cohort = gen_cohort(cfg, seed, n_monitors=n_monitors, n_subjects=n_subjects)
    rng = np.random.default_rng([seed, 1])
    builder = GeoDesignBuilder(
        cohort.gis_rows, cohort.locs, gis_g=gis_g, spline_rank=spline_rank, seed=0
    )
    data_mon = cohort.exposure.subset(cohort.monitor_idx)
    mon_rows = cohort.gis_rows.take_rows(cohort.monitor_idx)

    out: dict = {"seed": seed, "methods": {}}
    for method in ("traditional", "predictive"):
        if select_penalties:
            sel_builder = GeoDesignBuilder(
                mon_rows, cohort.locs[cohort.monitor_idx], gis_g=gis_g,
                spline_rank=spline_rank, seed=0,
            )
            u0 = rank1_sparse(data_mon.X, 0.0).u
            grid = lambda_grid(data_mon.X, u0, size=grid_size)[:-1]
            lambdas = select_lambda(
                data_mon, sel_builder, method, grid, "max_pollutants", k=k, folds=folds,
                seed=int(rng.integers(2**31)), uk_opts=selection_uk_opts,
            ).lambdas
        else:
            lambdas = [0.0] * k

        design = builder.fit(cohort.monitor_idx)
        if method == "traditional":
            model = fit_traditional(data_mon, k, lambdas)
        else:
            model = fit_predictive(data_mon, design.basis, k, lambdas)
        X_subj = data_mon.center_new(cohort.exposure.values[cohort.subject_idx])
        truth = X_subj @ model.loadings
        uk_Z_subj = design.uk_design_at(idx=cohort.subject_idx)
        preds = np.empty_like(truth)
        for l in range(k):
            uk = fit_uk(
                model.scores[:, l], design.uk_design, design.train_locs, uk_opts,
                mean_columns=design.uk_columns,
            )
            preds[:, l] = predict_uk(
                uk, cohort.locs[cohort.subject_idx], uk_Z_subj
            ).mean
        score_r2 = [r2(truth[:, l], preds[:, l]) for l in range(k)]
        fits = {
            "y1": health_regression(cohort.y1, preds, cohort.covariates),
            "y2": health_regression(cohort.y2, preds, cohort.covariates),
        }
        out["methods"][method] = {
            "lambdas": list(lambdas),
            "model": model,
            "score_r2": score_r2,
            "mixtures": [describe_mixture(c.loading) for c in model.components],
            "fits": fits,
        }
    return out


def health_tables(result: dict) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Interpretation and inference tables from one health-analysis run."""
    interp_rows, infer_rows = [], []
    for method, res in result["methods"].items():
        for l, (mix, rr) in enumerate(zip(res["mixtures"], res["score_r2"])):
            interp_rows.append(
                {
                    "method": method,
                    "component": f"pc{l + 1}",
                    "score_r2": rr,
                    "mixture": " ".join(str(j) for j in mix),
                }
            )
        for endpoint in ("y1", "y2"):
            fr = res["fits"][endpoint].frame()
            for l in range(len(res["score_r2"])):
                row = fr.iloc[l]
                infer_rows.append(
                    {
                        "endpoint": endpoint,
                        "method": method,
                        "component": row["term"],
                        "beta": float(row["beta"]),
                        "pval": float(row["pval"]),
                    }
                )
    return pd.DataFrame(interp_rows), pd.DataFrame(infer_rows)
