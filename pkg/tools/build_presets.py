"""Construct the committed scenario presets.

The recipe groups the 19 pollutants into GIS-driven, spline-driven, mixed
and pure-noise blocks, with two near-duplicate coefficient pairs providing
cross-pollutant correlation.  Scenario 1 keeps noise small everywhere;
scenario 2 weakens the geographic signal and inflates the noise pollutants
so that variance and spatial predictability decouple.

Run from the repository root:  python3 tools/build_presets.py
"""

import json
import pathlib

import numpy as np

from predpca.simulate import _generation_design, monitor_pool, synthetic_gis_table

N_POLLUTANTS = 19
N_GIS = 6
GEN_SPLINE_RANK = 10
M = 1 + N_GIS + GEN_SPLINE_RANK

# endpoint drivers: pollutant 1 sits in the mixed block (its predictability is
# where the two PCA variants differ), pollutant 5 is GIS-driven, 8 spline-driven
GROUPS = {
    "gis": [2, 3, 4, 5, 14],
    "spline": [6, 7, 8, 9, 10],
    "mixed": [1, 11, 12, 13],
    "noise": [15, 16, 17, 18, 19],
}
DUPLICATE_PAIRS = [[12, 13], [6, 7]]
# the endpoint driver leads its mixture; an L1 penalty then trims the minor
# members before it ever zeroes the driver itself
MEMBER_WEIGHTS = {"mixed": [1.55, 0.8, 0.8, 0.8]}

PROPORTIONS = {
    "race": [0.62, 0.17, 0.13, 0.08],
    "income": [0.22, 0.31, 0.28, 0.19],
    "education": [0.28, 0.31, 0.26, 0.15],
    "smoking": [0.48, 0.22, 0.18, 0.12],
}

GIS_SLICE = slice(1, 1 + N_GIS)
SPLINE_SLICE = slice(1 + N_GIS, M)


def unit(rng, size):
    v = rng.normal(size=size)
    return v / np.linalg.norm(v)


def build_gamma(rng, scales):
    """One gamma matrix; ``scales`` maps group -> (gis_scale, spline_scale, wobble, sigma)."""
    gamma = np.zeros((N_POLLUTANTS, M))
    factors = {
        # each group alternates between two factor directions of its own so
        # its structure stays out of the other groups' leading components
        "gis": (unit(rng, N_GIS), unit(rng, N_GIS), None, None),
        "spline": (None, None, unit(rng, GEN_SPLINE_RANK), unit(rng, GEN_SPLINE_RANK)),
        "mixed": (
            unit(rng, N_GIS),
            unit(rng, N_GIS),
            unit(rng, GEN_SPLINE_RANK),
            unit(rng, GEN_SPLINE_RANK),
        ),
        "noise": (None, None, None, None),
    }
    for name, members in GROUPS.items():
        g_scale, s_scale, wobble, _ = scales[name]
        wg1, wg2, ws1, ws2 = factors[name]
        weights = MEMBER_WEIGHTS.get(name, [1.0] * len(members))
        for rank_in_group, j in enumerate(members):
            row = np.zeros(M)
            alt = rank_in_group % 2  # alternate between the two group factors
            mult = weights[rank_in_group]
            if g_scale:
                base = wg1 if alt == 0 else wg2
                row[GIS_SLICE] = mult * g_scale * (base + wobble * rng.normal(size=N_GIS))
            if s_scale:
                base = ws1 if alt == 0 else ws2
                row[SPLINE_SLICE] = mult * s_scale * (base + wobble * rng.normal(size=GEN_SPLINE_RANK))
            gamma[j - 1] = row
    for a, b in DUPLICATE_PAIRS:
        gamma[b - 1] = gamma[a - 1] + 0.05 * rng.normal(size=M) * np.abs(gamma[a - 1]).max()
    return gamma


def normalize_gamma(gamma, scales, cov):
    """Rescale coefficient blocks so realized signal SDs hit the recipe targets.

    Design columns are correlated (radial spline terms especially), so a raw
    unit direction can realize far less variance than intended; the committed
    pool's column covariance pins the actual scale of every block.
    """
    out = gamma.copy()
    for name, members in GROUPS.items():
        g_scale, s_scale, _, _ = scales[name]
        weights = MEMBER_WEIGHTS.get(name, [1.0] * len(members))
        for rank_in_group, j in enumerate(members):
            mult = weights[rank_in_group]
            for target, block in ((mult * g_scale, GIS_SLICE), (mult * s_scale, SPLINE_SLICE)):
                if not target:
                    continue
                part = np.zeros(M)
                part[block] = out[j - 1, block]
                sd = float(np.sqrt(part @ cov @ part))
                if sd > 0:
                    out[j - 1, block] *= target / sd
    return out


def build_sigma(scales):
    sigma = np.zeros(N_POLLUTANTS)
    for name, members in GROUPS.items():
        for j in members:
            sigma[j - 1] = scales[name][3]
    return sigma


def scenario_config(scenario, gamma, sigma):
    return {
        "format": "predpca-sim-config",
        "scenario": scenario,
        "n_pollutants": N_POLLUTANTS,
        "n_gis": N_GIS,
        "gen_spline_rank": GEN_SPLINE_RANK,
        "gamma": np.round(gamma, 6).tolist(),
        "sigma": np.round(sigma, 6).tolist(),
        "groups": GROUPS,
        "duplicate_pairs": DUPLICATE_PAIRS,
        "proportions": PROPORTIONS,
        "pool_size": 970,
        "location_seed": 20260809,
        "covariate_seed": 4711,
    }


# per group: (gis scale, spline scale, wobble, noise SD)
SCENARIO1_SCALES = {
    "gis": (1.6, 0.0, 0.18, 0.60),
    "spline": (0.0, 1.15, 0.18, 0.80),
    "mixed": (0.52, 0.52, 0.22, 0.85),
    "noise": (0.0, 0.0, 0.0, 0.30),
}

SCENARIO2_SCALES = {
    "gis": (1.25, 0.0, 0.18, 1.30),
    "spline": (0.0, 0.90, 0.18, 1.25),
    "mixed": (0.70, 0.70, 0.22, 1.00),
    "noise": (0.0, 0.0, 0.0, 2.30),
}


def pool_design_covariance(pool_size=970, location_seed=20260809, covariate_seed=4711):
    """Column covariance of the generation design over replicate-sized draws."""
    from types import SimpleNamespace

    ns = SimpleNamespace(n_gis=N_GIS, gen_spline_rank=GEN_SPLINE_RANK)
    pool = monitor_pool(pool_size, location_seed)
    gis = synthetic_gis_table(pool, covariate_seed)
    rng = np.random.default_rng(9)
    covs = []
    for _ in range(3):
        pick = rng.choice(pool_size, size=400, replace=False)
        design = _generation_design(ns, pool[pick], gis.take_rows(pick))
        covs.append(np.cov(design, rowvar=False))
    return np.mean(covs, axis=0)


def main():
    out_dir = pathlib.Path(__file__).resolve().parents[1] / "src" / "predpca" / "presets"
    out_dir.mkdir(parents=True, exist_ok=True)
    cov = pool_design_covariance()
    for scenario, scales, seed in ((1, SCENARIO1_SCALES, 101), (2, SCENARIO2_SCALES, 202)):
        rng = np.random.default_rng(seed)
        gamma = normalize_gamma(build_gamma(rng, scales), scales, cov)
        cfg = scenario_config(scenario, gamma, build_sigma(scales))
        path = out_dir / f"scenario{scenario}.json"
        with open(path, "w") as fh:
            json.dump(cfg, fh, indent=1)
        print("wrote", path)


if __name__ == "__main__":
    main()
