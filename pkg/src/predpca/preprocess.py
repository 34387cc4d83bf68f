"""Cleaning, standardization and PCA reduction of geographic covariates.

Raw covariate tables (distances, buffer measures, vegetation summaries) are
filtered for degenerate and outlier-ridden columns, distance variables are
truncated at 10 km and log-transformed, everything is standardized, and the
surviving columns are compressed to a small set of orthogonal score columns
by PCA.  The fitted transform is reusable on covariates at new locations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import NumericalError, ValidationError

DISTANCE_TRUNCATION_M = 10_000.0
# log(x + 1 m): distances of 0 occur at co-located features
DISTANCE_LOG_SHIFT_M = 1.0

DISTANCE_KIND = "distance"
OTHER_KIND = "other"


@dataclass
class RawCovariateTable:
    """Named covariate columns observed at an ordered set of locations."""

    location_ids: list[str]
    names: list[str]
    values: np.ndarray  # n x q
    kinds: list[str]  # per column: "distance" or "other"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("covariate values must be a 2-d table")
        n, q = self.values.shape
        if n != len(self.location_ids):
            raise ValidationError("covariate rows do not match location ids")
        if q != len(self.names) or q != len(self.kinds):
            raise ValidationError("covariate column metadata does not match table width")
        for kind in self.kinds:
            if kind not in (DISTANCE_KIND, OTHER_KIND):
                raise ValidationError(f"unknown column kind {kind!r}")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def take_rows(self, idx) -> "RawCovariateTable":
        idx = np.asarray(idx)
        return RawCovariateTable(
            [self.location_ids[i] for i in idx], list(self.names), self.values[idx], list(self.kinds)
        )


def read_covariate_csv(path, schema_path=None):
    """Read a covariate CSV: id column, x_km, y_km, then covariate columns.

    Distance columns are recognized by a ``dist_`` name prefix unless a
    sidecar JSON schema (``{"distance_columns": [...]}``) says otherwise.

    Returns
    -------
    ids : list of str
    locs : (n, 2) array of planar km coordinates
    table : RawCovariateTable
    """
    df = pd.read_csv(path)
    if df.shape[1] < 3 or list(df.columns[1:3]) != ["x_km", "y_km"]:
        raise ValidationError(f"{path}: expected columns <id>, x_km, y_km, covariates...")
    ids = df.iloc[:, 0].astype(str).tolist()
    locs = df[["x_km", "y_km"]].to_numpy(dtype=float)
    cov = df.iloc[:, 3:]
    if cov.shape[1] == 0:
        raise ValidationError(f"{path}: no covariate columns")
    if schema_path is not None:
        with open(schema_path) as fh:
            schema = json.load(fh)
        distance_cols = set(schema.get("distance_columns", []))
    else:
        distance_cols = {c for c in cov.columns if c.startswith("dist_")}
    kinds = [DISTANCE_KIND if c in distance_cols else OTHER_KIND for c in cov.columns]
    table = RawCovariateTable(ids, list(cov.columns), cov.to_numpy(dtype=float), kinds)
    return ids, locs, table


@dataclass
class CleanCovariateMatrix:
    """Filtered, transformed and standardized covariates plus the fitted transform."""

    matrix: np.ndarray  # n x q, standardized
    column_names: list[str]
    kinds: list[str]
    centering: np.ndarray  # q means of the transformed columns
    scaling: np.ndarray  # q standard deviations of the transformed columns
    dropped: dict[str, str] = field(default_factory=dict)  # name -> reason


@dataclass
class GisScoreMatrix:
    """PCA scores of the clean covariates with the fitted loadings."""

    scores: np.ndarray  # n x g
    loadings: np.ndarray  # q x g, orthonormal columns
    explained_variance_fraction: float

    @property
    def g(self) -> int:
        return self.scores.shape[1]


def _transform_column(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == DISTANCE_KIND:
        return np.log(np.minimum(x, DISTANCE_TRUNCATION_M) + DISTANCE_LOG_SHIFT_M)
    return x


def _mode_fraction(x: np.ndarray) -> float:
    _, counts = np.unique(x, return_counts=True)
    return counts.max() / x.size


def filter_covariates(
    raw: RawCovariateTable, identical_frac: float = 0.85, outlier_sd: float = 7.0
) -> CleanCovariateMatrix:
    """Drop uninformative or unreliable columns and standardize the rest.

    Distance columns are truncated at 10 km and log-transformed first.  A
    column is dropped when more than ``identical_frac`` of its values are
    identical (mode frequency), or when any standardized value exceeds
    ``outlier_sd`` in absolute value.  Remaining columns are mean-centered
    and scaled to unit standard deviation; the statistics are stored for
    reuse on covariates at new locations.

    Raises
    ------
    ValidationError
        On non-finite input ("bad covariate value") or when no column
        survives ("empty design").
    """
    if raw.n < 2:
        raise ValidationError("need at least 2 locations to fit covariate filters")
    retained, kinds, cols, means, sds, dropped = [], [], [], [], [], {}
    for j, name in enumerate(raw.names):
        x = raw.values[:, j]
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"bad covariate value in column {name!r}")
        x = _transform_column(x, raw.kinds[j])
        if _mode_fraction(x) > identical_frac:
            dropped[name] = "identical values"
            continue
        mean = x.mean()
        sd = x.std(ddof=0)
        if sd == 0.0:
            dropped[name] = "identical values"
            continue
        z = (x - mean) / sd
        if np.abs(z).max() > outlier_sd:
            dropped[name] = "standardized outlier"
            continue
        retained.append(name)
        kinds.append(raw.kinds[j])
        cols.append(z)
        means.append(mean)
        sds.append(sd)
    if not retained:
        raise ValidationError("empty design: all covariate columns were dropped")
    return CleanCovariateMatrix(
        np.column_stack(cols), retained, kinds, np.array(means), np.array(sds), dropped
    )


def reduce_covariates_pca(
    clean: CleanCovariateMatrix, g: int | None = None, variance_fraction: float | None = None
) -> GisScoreMatrix:
    """PCA-compress the standardized covariates to ``g`` score columns.

    Either a fixed component count ``g`` or an explained-variance target may
    be given; with neither, the smallest ``g`` explaining 85% of variance is
    used.  Loading signs follow the convention that the largest-magnitude
    entry of each loading is positive.
    """
    X = clean.matrix
    n, q = X.shape
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    total = float(np.sum(s**2))
    rank = int(np.sum(s > s[0] * 1e-12)) if s.size else 0
    if g is None:
        target = 0.85 if variance_fraction is None else float(variance_fraction)
        cum = np.cumsum(s**2) / total
        g = int(np.searchsorted(cum, target - 1e-12) + 1)
        g = min(g, rank)
    else:
        if g < 1 or g > min(n - 1, q):
            raise ValidationError(f"g={g} outside [1, min(n-1, q)={min(n - 1, q)}]")
        if g > rank:
            raise NumericalError(f"insufficient rank: requested g={g}, matrix rank {rank}")
    loadings = vt[:g].T.copy()
    for j in range(g):
        if loadings[np.argmax(np.abs(loadings[:, j])), j] < 0:
            loadings[:, j] = -loadings[:, j]
    scores = X @ loadings
    explained = float(np.sum(s[:g] ** 2) / total)
    return GisScoreMatrix(scores, loadings, explained)


def apply_preprocessing(
    raw_new: RawCovariateTable, clean: CleanCovariateMatrix, gis: GisScoreMatrix
) -> GisScoreMatrix:
    """Evaluate a fitted covariate transform at new locations (never refits)."""
    cols = []
    for name, kind, mean, sd in zip(clean.column_names, clean.kinds, clean.centering, clean.scaling):
        if name not in raw_new.names:
            raise ValidationError(f"schema mismatch: missing covariate column {name!r}")
        x = raw_new.column(name)
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"bad covariate value in column {name!r}")
        cols.append((_transform_column(x, kind) - mean) / sd)
    Z = np.column_stack(cols)
    return GisScoreMatrix(Z @ gis.loadings, gis.loadings, gis.explained_variance_fraction)


def preprocessor_to_dict(clean: CleanCovariateMatrix, gis: GisScoreMatrix) -> dict:
    return {
        "format": "predpca-preprocessor",
        "distance_truncation_m": DISTANCE_TRUNCATION_M,
        "distance_log_shift_m": DISTANCE_LOG_SHIFT_M,
        "columns": clean.column_names,
        "kinds": clean.kinds,
        "means": clean.centering.tolist(),
        "sds": clean.scaling.tolist(),
        "dropped": clean.dropped,
        "gis_loadings": gis.loadings.tolist(),
        "explained_variance_fraction": gis.explained_variance_fraction,
    }


def preprocessor_from_dict(d: dict) -> tuple[CleanCovariateMatrix, GisScoreMatrix]:
    if d.get("format") != "predpca-preprocessor":
        raise ValidationError("not a fitted-preprocessor document")
    loadings = np.asarray(d["gis_loadings"], dtype=float)
    q = len(d["columns"])
    clean = CleanCovariateMatrix(
        matrix=np.zeros((0, q)),
        column_names=list(d["columns"]),
        kinds=list(d["kinds"]),
        centering=np.asarray(d["means"], dtype=float),
        scaling=np.asarray(d["sds"], dtype=float),
        dropped=dict(d.get("dropped", {})),
    )
    gis = GisScoreMatrix(np.zeros((0, loadings.shape[1])), loadings, float(d["explained_variance_fraction"]))
    return clean, gis
