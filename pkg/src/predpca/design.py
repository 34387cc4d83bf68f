"""Assembly of the geographic design matrices used by fitting and kriging.

One builder owns the raw covariate table and the coordinates; fitting it on
a row subset runs the covariate filters, the GIS PCA reduction and the
spline-basis construction on that subset only, which is what keeps
cross-validation folds leak-free.  Two designs come out of a fit: the full
basis (intercept + GIS scores + splines) for loading selection, and the
kriging mean design (intercept + GIS scores, no splines).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .predictive import CovariateBasis, assemble_basis
from .preprocess import (
    CleanCovariateMatrix,
    GisScoreMatrix,
    RawCovariateTable,
    apply_preprocessing,
    filter_covariates,
    reduce_covariates_pca,
)
from .splines import SplineBasis, eval_basis, tps_basis


@dataclass
class FittedGeoDesign:
    """Designs fitted on one set of training rows."""

    basis: CovariateBasis  # [1 | gis | spline] at training rows
    uk_design: np.ndarray  # [1 | gis] at training rows
    uk_columns: list[str]
    clean: CleanCovariateMatrix
    gis: GisScoreMatrix
    spline: SplineBasis
    train_locs: np.ndarray
    _table: RawCovariateTable

    def uk_design_at(self, rows: RawCovariateTable | None = None, idx=None) -> np.ndarray:
        """Kriging mean design at new rows, using the fitted transform only."""
        if rows is None:
            if idx is None:
                raise ValidationError("need rows or row indices")
            rows = self._table.take_rows(idx)
        scores = apply_preprocessing(rows, self.clean, self.gis).scores
        return np.column_stack([np.ones(scores.shape[0]), scores])

    def basis_at(self, locs: np.ndarray, rows: RawCovariateTable) -> np.ndarray:
        """Full design (intercept, GIS scores, splines) at new locations."""
        scores = apply_preprocessing(rows, self.clean, self.gis).scores
        spl = eval_basis(self.spline, locs)
        return np.column_stack([np.ones(scores.shape[0]), scores, spl])


class GeoDesignBuilder:
    """Builds leak-free geographic designs for any training subset."""

    def __init__(
        self,
        covariates: RawCovariateTable,
        locs: np.ndarray,
        gis_g: int | None = None,
        gis_variance: float | None = None,
        spline_rank: int = 10,
        seed: int = 0,
        identical_frac: float = 0.85,
        outlier_sd: float = 7.0,
    ):
        locs = np.asarray(locs, dtype=float)
        if locs.shape != (covariates.n, 2):
            raise ValidationError("coordinates must align with covariate rows")
        self.covariates = covariates
        self.locs = locs
        self.gis_g = gis_g
        self.gis_variance = gis_variance
        self.spline_rank = spline_rank
        self.seed = seed
        self.identical_frac = identical_frac
        self.outlier_sd = outlier_sd

    @property
    def n(self) -> int:
        return self.covariates.n

    def fit(self, idx=None) -> FittedGeoDesign:
        idx = np.arange(self.n) if idx is None else np.asarray(idx)
        rows = self.covariates.take_rows(idx)
        clean = filter_covariates(rows, self.identical_frac, self.outlier_sd)
        g = self.gis_g
        if g is not None:
            # a fold may drop extra columns; never ask for more than remain
            g = min(g, len(clean.column_names), len(idx) - 1)
        gis = reduce_covariates_pca(clean, g=g, variance_fraction=self.gis_variance)
        spline = tps_basis(self.locs[idx], rank=self.spline_rank, seed=self.seed)
        basis = assemble_basis(gis.scores, spline.basis)
        uk_design = np.column_stack([np.ones(len(idx)), gis.scores])
        uk_columns = ["intercept"] + [f"gis_pc_{j + 1}" for j in range(gis.g)]
        return FittedGeoDesign(
            basis=basis,
            uk_design=uk_design,
            uk_columns=uk_columns,
            clean=clean,
            gis=gis,
            spline=spline,
            train_locs=self.locs[idx],
            _table=self.covariates,
        )
