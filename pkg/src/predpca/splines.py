"""Rank-limited thin-plate spline basis over planar monitor coordinates.

The basis stands in for spatial smoothing when loading vectors are selected:
its columns are the planar coordinates plus radial terms r^2 log r centered
at knots picked by farthest-point sampling.  Column count equals the
requested rank; the intercept is not part of the basis (the geographic
design matrix adds one).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ValidationError


def tps_kernel(r: np.ndarray) -> np.ndarray:
    """Radial kernel r^2 log(r), with the removable singularity at 0 set to 0."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    positive = r > 0
    out[positive] = r[positive] ** 2 * np.log(r[positive])
    return out


def _farthest_point_knots(locs: np.ndarray, n_knots: int, seed: int) -> np.ndarray:
    """Greedy farthest-point subset of the locations; first point is seeded."""
    rng = np.random.default_rng(seed)
    first = int(rng.integers(locs.shape[0]))
    chosen = [first]
    dist = np.linalg.norm(locs - locs[first], axis=1)
    for _ in range(n_knots - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(locs - locs[nxt], axis=1))
    return locs[chosen].copy()


@dataclass
class SplineBasis:
    """Fitted spline basis: the matrix at training locations plus generators."""

    basis: np.ndarray  # n x rank, unit-SD columns
    rank: int
    knots: np.ndarray  # (rank - 2) x 2
    scales: np.ndarray  # rank column scales

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "knots": self.knots.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplineBasis":
        knots = np.asarray(d["knots"], dtype=float)
        scales = np.asarray(d["scales"], dtype=float)
        return cls(np.zeros((0, int(d["rank"]))), int(d["rank"]), knots, scales)


def _raw_columns(locs: np.ndarray, knots: np.ndarray) -> np.ndarray:
    return np.column_stack([locs[:, 0], locs[:, 1], tps_kernel(cdist(locs, knots))])


def tps_basis(locs: np.ndarray, rank: int = 10, seed: int = 0) -> SplineBasis:
    """Build the rank-``rank`` thin-plate basis at the given locations.

    Parameters
    ----------
    locs : (n, 2) array
        Planar coordinates in km; must be pairwise distinct.
    rank : int
        Number of basis columns: x, y and ``rank - 2`` radial knot terms.
    seed : int
        Seed for the farthest-point knot selection (deterministic).
    """
    locs = np.asarray(locs, dtype=float)
    if locs.ndim != 2 or locs.shape[1] != 2:
        raise ValidationError("locations must be an (n, 2) array of planar km coordinates")
    if not np.all(np.isfinite(locs)):
        raise ValidationError("non-finite coordinates")
    if rank < 3:
        raise ValidationError("rank below affine span: need rank >= 3")
    n = locs.shape[0]
    if n < rank:
        raise ValidationError(f"need at least rank={rank} locations, got {n}")
    if np.unique(locs, axis=0).shape[0] != n:
        raise ValidationError("coincident points: locations must be pairwise distinct")
    knots = _farthest_point_knots(locs, rank - 2, seed)
    raw = _raw_columns(locs, knots)
    scales = raw.std(axis=0, ddof=0)
    scales[scales == 0.0] = 1.0
    return SplineBasis(raw / scales, rank, knots, scales)


def eval_basis(basis: SplineBasis, new_locs: np.ndarray) -> np.ndarray:
    """Evaluate a fitted basis at new locations; exact at training points."""
    new_locs = np.asarray(new_locs, dtype=float)
    if new_locs.ndim != 2 or new_locs.shape[1] != 2:
        raise ValidationError("locations must be an (m, 2) array of planar km coordinates")
    if not np.all(np.isfinite(new_locs)):
        raise ValidationError("non-finite coordinates")
    return _raw_columns(new_locs, basis.knots) / basis.scales
