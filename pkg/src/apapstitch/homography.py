"""Plane-projective geometry: monomial constraints, conditioning, DLT, RANSAC.

Homographies are plain (3, 3) float64 arrays mapping source pixels to
target pixels, defined up to scale and canonicalized so the entry of
largest magnitude equals +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSolveError,
    InsufficientDataError,
    NoConsensusError,
    PointAtInfinityError,
)


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair: x in the source image, xp in the target."""

    x: np.ndarray
    xp: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(2)
        xp = np.asarray(self.xp, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xp))):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xp", xp)


@dataclass(frozen=True)
class Conditioning:
    """Similarity transforms taking raw source/target points to conditioned frames."""

    t_src: np.ndarray
    t_dst: np.ndarray


def monomial_rows(x, xp) -> np.ndarray:
    """The 2x9 linear constraint rows tying homography coefficients to one match.

    With xt = [p, q, 1], the rows are [0, -xt, q'·xt] and [xt, 0, -p'·xt];
    a homography H consistent with (x, xp) satisfies rows @ H.reshape(9) = 0.
    """
    p, q = float(x[0]), float(x[1])
    pp, qp = float(xp[0]), float(xp[1])
    return np.array(
        [
            [0.0, 0.0, 0.0, -p, -q, -1.0, qp * p, qp * q, qp],
            [p, q, 1.0, 0.0, 0.0, 0.0, -pp * p, -pp * q, -pp],
        ]
    )


def stack_monomials(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Vertically stacked monomial rows for all matches, shape (2N, 9)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[0]
    p, q = src[:, 0], src[:, 1]
    pp, qp = dst[:, 0], dst[:, 1]
    one = np.ones(n)
    m = np.zeros((2 * n, 9))
    m[0::2, 3] = -p
    m[0::2, 4] = -q
    m[0::2, 5] = -one
    m[0::2, 6] = qp * p
    m[0::2, 7] = qp * q
    m[0::2, 8] = qp
    m[1::2, 0] = p
    m[1::2, 1] = q
    m[1::2, 2] = one
    m[1::2, 6] = -pp * p
    m[1::2, 7] = -pp * q
    m[1::2, 8] = -pp
    return m


def condition_points(points: np.ndarray):
    """Translate/scale points so the centroid is 0 and mean norm is sqrt(2).

    Returns (conditioned points, 3x3 similarity transform). Raises
    InsufficientDataError when the points are all identical.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise InsufficientDataError("conditioning needs at least 2 points")
    centroid = pts.mean(axis=0)
    mean_dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if mean_dist < 1e-12:
        raise InsufficientDataError("conditioning needs at least 2 distinct points")
    s = np.sqrt(2.0) / mean_dist
    t = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (pts - centroid) * s, t


def canonicalize_homography(h: np.ndarray) -> np.ndarray:
    """Scale so the entry of largest magnitude becomes +1."""
    h = np.asarray(h, dtype=np.float64)
    pivot = h.flat[np.argmax(np.abs(h))]
    if pivot == 0.0:
        raise DegenerateSolveError("zero homography cannot be canonicalized")
    return h / pivot


def dlt_homography(matches) -> np.ndarray:
    """Homography from >= 4 matches via conditioned direct linear transformation.

    Solves for the least significant eigenvector of M^T M on conditioned
    coordinates, then de-conditions and canonicalizes. Raises
    DegenerateSolveError for rank-deficient configurations (e.g. all
    source points collinear).
    """
    src = np.asarray(matches.src, dtype=np.float64)
    dst = np.asarray(matches.dst, dtype=np.float64)
    if src.shape[0] < 4:
        raise InsufficientDataError(f"DLT needs >= 4 matches, got {src.shape[0]}")
    src_c, t_src = condition_points(src)
    dst_c, t_dst = condition_points(dst)
    m = stack_monomials(src_c, dst_c)
    s = m.T @ m
    evals, evecs = np.linalg.eigh(s)
    trace = evals.sum()
    if evals[1] - evals[0] <= 1e-12 * trace:
        raise DegenerateSolveError("DLT system is rank deficient (collinear data?)")
    h_cond = evecs[:, 0].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_cond @ t_src
    return canonicalize_homography(h)


def apply_homography(h: np.ndarray, x) -> np.ndarray:
    """Map one 2D point through a homography; raises at points near infinity."""
    xt = np.array([float(x[0]), float(x[1]), 1.0])
    v = np.asarray(h, dtype=np.float64) @ xt
    if abs(v[2]) < 1e-12:
        raise PointAtInfinityError(f"denominator vanished at ({x[0]}, {x[1]})")
    return v[:2] / v[2]


def apply_homography_many(h: np.ndarray, pts: np.ndarray):
    """Map (N, 2) points; returns (mapped points, validity mask for finite denominators)."""
    pts = np.asarray(pts, dtype=np.float64)
    xt = np.column_stack([pts, np.ones(pts.shape[0])])
    v = xt @ np.asarray(h, dtype=np.float64).T
    den = v[:, 2]
    valid = np.abs(den) >= 1e-12
    out = np.zeros_like(pts)
    out[valid] = v[valid, :2] / den[valid, None]
    return out, valid


def transfer_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Per-match Euclidean error in the target frame; inf where the map blows up."""
    mapped, valid = apply_homography_many(h, src)
    err = np.full(src.shape[0], np.inf)
    err[valid] = np.linalg.norm(mapped[valid] - dst[valid], axis=1)
    return err


def ransac_homography(matches, inlier_threshold: float = 1.0, max_iters: int = 500, seed: int = 0):
    """Robust homography fit: best 4-point hypothesis, then DLT refit on its inliers.

    Inliers are matches whose transfer error in the target frame is at
    most ``inlier_threshold``. Deterministic for a fixed seed. Raises
    NoConsensusError when no hypothesis reaches 4 inliers.
    """
    n = len(matches)
    if n < 4:
        raise InsufficientDataError(f"RANSAC needs >= 4 matches, got {n}")
    src, dst = matches.src, matches.dst
    rng = np.random.default_rng(seed)
    best_count = 0
    best_mean_err = np.inf
    best_inliers = None
    for _ in range(max_iters):
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = dlt_homography(matches.subset(idx))
        except (DegenerateSolveError, InsufficientDataError):
            continue
        err = transfer_errors(h, src, dst)
        inl = err <= inlier_threshold
        count = int(inl.sum())
        if count < 4:
            continue
        mean_err = float(err[inl].mean())
        if count > best_count or (count == best_count and mean_err < best_mean_err):
            best_count = count
            best_mean_err = mean_err
            best_inliers = inl
    if best_inliers is None:
        raise NoConsensusError("no RANSAC hypothesis reached 4 inliers")
    inlier_set = matches.subset(np.flatnonzero(best_inliers))
    return dlt_homography(inlier_set), inlier_set
