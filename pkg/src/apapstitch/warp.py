"""Spatially varying projective warp driven by distance-weighted eigen solves.

The warp interpolates a field of local homographies. At a query point x
each correspondence contributes its pair of constraint rows, scaled by a
Gaussian weight in the distance from x to that correspondence's source
point (floored at gamma so far-away queries still see a full-rank
system). The local homography is the least significant eigenvector of

    S(x) = sum_i w_i(x)^2 * m_i^T m_i

built on conditioned coordinates; the conditioning transforms are frozen
once from the full match set. Weights always use raw pixel distances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateSolveError, InsufficientDataError, PointAtInfinityError
from .homography import canonicalize_homography, condition_points, stack_monomials

_GAP_RTOL = 1e-12


@dataclass(frozen=True)
class WarpConfig:
    """Warp locality parameters.

    sigma is the Gaussian scale in raw source pixels, gamma the weight
    floor in [0, 1), cell_size the edge length of grid-cache cells.
    """

    sigma: float = 8.0
    gamma: float = 0.01
    cell_size: int = 8

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.cell_size < 1:
            raise ValueError(f"cell_size must be >= 1, got {self.cell_size}")


@dataclass(frozen=True)
class LocalHomography:
    """One local solve: unit coefficient vector (conditioned frame), its
    eigenvalue, and the de-conditioned canonical 3x3 map."""

    h: np.ndarray
    lam: float
    matrix: np.ndarray


@dataclass(frozen=True)
class Rect:
    """Integer-aligned pixel rectangle; pixel (row j, col i) sits at
    coordinates (x0 + i, y0 + j) in the target frame."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"empty rect {self.width}x{self.height}")


@dataclass(frozen=True)
class GridCache:
    rect: Rect
    cell_size: int
    nx: int
    ny: int
    matrices: np.ndarray  # (ny, nx, 3, 3)
    lams: np.ndarray  # (ny, nx)
    valid: np.ndarray  # (ny, nx) bool


def _sign_canonical(h: np.ndarray) -> np.ndarray:
    """Flip unit vectors so the largest-magnitude component is positive.

    h has shape (..., 9); operates along the last axis.
    """
    idx = np.argmax(np.abs(h), axis=-1)
    pivot = np.take_along_axis(h, idx[..., None], axis=-1)
    return h * np.where(pivot < 0.0, -1.0, 1.0)


class ApapWarp:
    """Moving-least-squares homography field fitted to a correspondence set.

    Instances are immutable after construction; with_grid returns a new
    warp sharing the fitted state plus a per-cell solve cache.
    """

    def __init__(self, matches, config: WarpConfig | None = None):
        config = config if config is not None else WarpConfig()
        src = np.asarray(matches.src, dtype=np.float64)
        dst = np.asarray(matches.dst, dtype=np.float64)
        if src.shape[0] < 4:
            raise InsufficientDataError(f"warp needs >= 4 matches, got {src.shape[0]}")
        self.config = config
        self.matches = matches
        self.src = src
        self.dst = dst
        src_c, t_src = condition_points(src)
        dst_c, t_dst = condition_points(dst)
        self.t_src = t_src
        self.t_dst = t_dst
        self.t_dst_inv = np.linalg.inv(t_dst)
        self.src_cond = src_c
        self.dst_cond = dst_c
        m = stack_monomials(src_c, dst_c)
        self.monomials = m
        # Per-match 9x9 blocks m_i^T m_i; S(x) is their weighted sum.
        blocks = m.reshape(-1, 2, 9)
        self.blocks = np.einsum("nrj,nrk->njk", blocks, blocks)
        self._grid: GridCache | None = None
        self._forward_cache: np.ndarray | None = None

    # -- weights ---------------------------------------------------------

    def weights(self, x) -> np.ndarray:
        """Gaussian weight of every correspondence at query x, floored at gamma."""
        return self.weights_many(np.asarray(x, dtype=np.float64).reshape(1, 2))[0]

    def weights_many(self, xs: np.ndarray) -> np.ndarray:
        """(Q, N) weights for a batch of query points."""
        xs = np.asarray(xs, dtype=np.float64)
        d2 = ((xs[:, None, :] - self.src[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-d2 / (2.0 * self.config.sigma**2))
        return np.maximum(w, self.config.gamma)

    # -- local solves ----------------------------------------------------

    def accumulate(self, w2: np.ndarray) -> np.ndarray:
        """Assemble S matrices from squared weights; w2 is (Q, N), result (Q, 9, 9)."""
        return np.einsum("qn,njk->qjk", w2, self.blocks)

    def _eig_many(self, s: np.ndarray):
        """Batched symmetric eigendecomposition with a spectral-gap validity check.

        Returns (h, lam, evals, evecs, ok): h is the sign-canonical least
        significant eigenvector per query, ok is False where the two
        smallest eigenvalues are separated by less than 1e-12 of the trace.
        """
        evals, evecs = np.linalg.eigh(s)
        trace = evals.sum(axis=-1)
        ok = (evals[:, 1] - evals[:, 0]) > _GAP_RTOL * np.maximum(trace, 0.0)
        ok &= trace > 0.0
        h = _sign_canonical(evecs[:, :, 0])
        lam = np.maximum(evals[:, 0], 0.0)
        return h, lam, evals, evecs, ok

    def _decondition(self, h: np.ndarray) -> np.ndarray:
        """(Q, 9) conditioned coefficient vectors -> (Q, 3, 3) canonical raw maps."""
        hc = h.reshape(-1, 3, 3)
        raw = self.t_dst_inv @ hc @ self.t_src
        pivot_idx = np.argmax(np.abs(raw.reshape(-1, 9)), axis=1)
        pivots = np.take_along_axis(raw.reshape(-1, 9), pivot_idx[:, None], axis=1)
        return raw / pivots.reshape(-1, 1, 1)

    def solve_many(self, xs: np.ndarray):
        """Local solves at (Q, 2) query points.

        Returns (matrices (Q, 3, 3), h (Q, 9), lam (Q,), ok (Q,)); entries
        with ok False hold garbage and must not be used.
        """
        xs = np.asarray(xs, dtype=np.float64)
        w = self.weights_many(xs)
        s = self.accumulate(w * w)
        h, lam, _, _, ok = self._eig_many(s)
        matrices = np.empty((xs.shape[0], 3, 3))
        if np.any(ok):
            matrices[ok] = self._decondition(h[ok])
        return matrices, h, lam, ok

    def solve(self, x) -> LocalHomography:
        """The local homography at one query point."""
        xs = np.asarray(x, dtype=np.float64).reshape(1, 2)
        matrices, h, lam, ok = self.solve_many(xs)
        if not ok[0]:
            raise DegenerateSolveError(f"local system at ({x[0]}, {x[1]}) is rank deficient")
        return LocalHomography(h=h[0], lam=float(lam[0]), matrix=matrices[0])

    # -- evaluation ------------------------------------------------------

    def eval(self, x) -> np.ndarray:
        """Warp a single source point into the target frame."""
        pts, valid = self.eval_many(np.asarray(x, dtype=np.float64).reshape(1, 2))
        if not valid[0]:
            raise PointAtInfinityError(f"warp undefined at ({x[0]}, {x[1]})")
        return pts[0]

    def eval_many(self, xs: np.ndarray):
        """Warp (Q, 2) source points; returns (points, validity mask).

        Invalid entries (degenerate local system, or denominator under
        1e-12) are left at zero with the mask cleared.
        """
        xs = np.asarray(xs, dtype=np.float64)
        if self._grid is not None:
            matrices, ok = self._grid_matrices(xs)
        else:
            matrices, _, _, ok = self.solve_many(xs)
        out = np.zeros_like(xs)
        if not np.any(ok):
            return out, ok
        xt = np.column_stack([xs, np.ones(xs.shape[0])])
        v = np.einsum("qij,qj->qi", matrices, xt)
        den_ok = np.abs(v[:, 2]) >= 1e-12
        valid = ok & den_ok
        out[valid] = v[valid, :2] / v[valid, 2:3]
        return out, valid

    # -- grid cache ------------------------------------------------------

    def with_grid(self, rect: Rect) -> "ApapWarp":
        """A copy of this warp carrying per-cell solves over rect.

        The cell covering pixels [k*cs, (k+1)*cs) is solved at the center
        of its pixel block, so cell_size=1 reproduces exact per-pixel
        evaluation.
        """
        cs = self.config.cell_size
        nx = -(-rect.width // cs)
        ny = -(-rect.height // cs)
        ix = np.arange(nx) * cs + (cs - 1) / 2.0 + rect.x0
        iy = np.arange(ny) * cs + (cs - 1) / 2.0 + rect.y0
        gx, gy = np.meshgrid(ix, iy)
        centers = np.column_stack([gx.ravel(), gy.ravel()])
        matrices, _, lam, ok = self.solve_many(centers)
        grid = GridCache(
            rect=rect,
            cell_size=cs,
            nx=nx,
            ny=ny,
            matrices=matrices.reshape(ny, nx, 3, 3),
            lams=lam.reshape(ny, nx),
            valid=ok.reshape(ny, nx),
        )
        clone = object.__new__(ApapWarp)
        clone.__dict__.update(self.__dict__)
        clone._grid = grid
        return clone

    @property
    def grid(self) -> GridCache | None:
        return self._grid

    def _cell_indices(self, xs: np.ndarray):
        g = self._grid
        cx = np.clip(np.floor((xs[:, 0] - g.rect.x0) / g.cell_size).astype(int), 0, g.nx - 1)
        cy = np.clip(np.floor((xs[:, 1] - g.rect.y0) / g.cell_size).astype(int), 0, g.ny - 1)
        return cx, cy

    def _grid_matrices(self, xs: np.ndarray):
        cx, cy = self._cell_indices(xs)
        return self._grid.matrices[cy, cx], self._grid.valid[cy, cx]

    # -- inversion -------------------------------------------------------

    def forward_sources(self) -> np.ndarray:
        """Warped positions f(x_i) of the correspondence sources (cached)."""
        if self._forward_cache is None:
            # Exact solves regardless of any grid cache.
            matrices, _, _, ok = self.solve_many(self.src)
            xt = np.column_stack([self.src, np.ones(self.src.shape[0])])
            v = np.einsum("qij,qj->qi", matrices, xt)
            bad = ~ok | (np.abs(v[:, 2]) < 1e-12)
            fwd = np.where(bad[:, None], np.inf, v[:, :2] / np.where(bad, 1.0, v[:, 2])[:, None])
            self._forward_cache = fwd
        return self._forward_cache

    def inverse(self, xp) -> np.ndarray:
        """Approximate preimage of a target point.

        Uses the local homography of the correspondence whose warped
        source position is nearest to xp, and applies its inverse.
        """
        xp = np.asarray(xp, dtype=np.float64).reshape(2)
        fwd = self.forward_sources()
        finite = np.all(np.isfinite(fwd), axis=1)
        if not np.any(finite):
            raise DegenerateSolveError("warp degenerate at every correspondence source")
        d2 = ((fwd - xp) ** 2).sum(axis=1)
        d2[~finite] = np.inf
        nn = int(np.argmin(d2))
        matrices, _, _, ok = self.solve_many(self.src[nn : nn + 1])
        if not ok[0]:
            raise DegenerateSolveError("local system at nearest source is rank deficient")
        try:
            h_inv = np.linalg.inv(matrices[0])
        except np.linalg.LinAlgError:
            raise DegenerateSolveError("nearest local homography is singular") from None
        v = h_inv @ np.array([xp[0], xp[1], 1.0])
        if abs(v[2]) < 1e-12:
            raise PointAtInfinityError(f"inverse undefined at ({xp[0]}, {xp[1]})")
        return v[:2] / v[2]

    def nearest_source_distance(self, x) -> float:
        """Distance from x to the closest correspondence source."""
        x = np.asarray(x, dtype=np.float64).reshape(2)
        return float(np.sqrt(((self.src - x) ** 2).sum(axis=1).min()))

    def with_matches(self, matches) -> "ApapWarp":
        """A fresh warp over a different match set with the same config."""
        return ApapWarp(matches, self.config)
