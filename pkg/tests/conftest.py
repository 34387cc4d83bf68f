import numpy as np
import pytest

from predpca.design import GeoDesignBuilder
from predpca.kriging import UkOptions
from predpca.preprocess import RawCovariateTable
from predpca.spca import ExposureDataset

FAST_UK = UkOptions(polish_top=1, maxiter=120)


def bump_field(locs, centers, scale, weights):
    d2 = ((locs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-d2 / (2 * scale**2)) @ weights


def make_covariate_table(rng, locs):
    """Synthetic geographic covariates: smooth fields of varying length scale."""
    n = locs.shape[0]
    extent = locs.max()
    centers_a = rng.uniform(0, extent, size=(6, 2))
    centers_b = rng.uniform(0, extent, size=(8, 2))
    cols = {
        "field_broad": bump_field(locs, centers_a, 0.30 * extent, rng.normal(size=6)),
        "field_mid": bump_field(locs, centers_b, 0.15 * extent, rng.normal(size=8)),
        "field_trend": (locs[:, 0] - locs[:, 1]) / extent + bump_field(
            locs, centers_a, 0.20 * extent, rng.normal(size=6)
        ),
        "dist_feature": np.min(
            np.linalg.norm(locs[:, None, :] - centers_b[None, :4, :], axis=2), axis=1
        )
        * 1000.0,  # covariate distances are meters; coordinates are km
    }
    names = list(cols)
    values = np.column_stack([cols[c] for c in names])
    kinds = ["distance" if c.startswith("dist_") else "other" for c in names]
    return RawCovariateTable([f"s{i}" for i in range(n)], names, values, kinds)


def make_world(seed, n, p, noise_sd=0.0, extent=1500.0, spline_rank=6, gis_g=3):
    """Exposure data spanned by the geographic design plus optional noise."""
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, extent, size=(n, 2))
    table = make_covariate_table(rng, locs)
    builder = GeoDesignBuilder(table, locs, gis_g=gis_g, spline_rank=spline_rank, seed=0)
    design = builder.fit(None)
    coef = rng.normal(size=(design.basis.m, p))
    coef[0] = 0.0  # intercept level irrelevant after centering
    X = design.basis.Zt @ coef
    if noise_sd > 0:
        X = X + noise_sd * rng.normal(size=X.shape)
    data = ExposureDataset(locs, X, [f"pol{j + 1}" for j in range(p)])
    return data, builder


@pytest.fixture
def fast_uk():
    return FAST_UK
