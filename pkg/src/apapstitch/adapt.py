"""Data-driven warp adaptation: residual-guided correspondence insertion.

Each round re-fits the warp, renders the source onto a shared canvas,
and builds a residual map gated three ways: intensity differences below
epsilon are noise, pixels the seam hands to the target cannot ghost, and
low-saliency regions are not worth fixing. A distance transform over the
already-tried sites spaces the insertions at least rho apart. The
highest-pressure site (max R relative to its isolation D, i.e. argmin
D/R) seeds a correspondence search; accepted results grow the match set
and the loop repeats until every score is infinite or the safety cap
hits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .composite import TARGET, canvas_bounds, optimize_seam, place_on_canvas, warp_image
from .errors import (
    DegenerateSolveError,
    DuplicateSourceError,
    EmptyOverlapError,
    InsufficientDataError,
    OutOfBoundsError,
    PointAtInfinityError,
)
from .image import Image, to_grayscale
from .matching import CorrespondenceSet
from .search import SearchConfig, search_correspondence
from .warp import ApapWarp, WarpConfig

_SALIENCY_BOX = 15


@dataclass(frozen=True)
class AdaptConfig:
    """Gates and caps for the adaptation loop.

    epsilon: residuals below this intensity difference are ignored.
    eta: minimum normalized saliency for an insertion site.
    rho: minimum spacing in pixels between tried sites.
    omega: cost ceiling for accepting a searched correspondence.
    max_insertions: hard cap on loop iterations.
    """

    epsilon: float = 100.0
    eta: float = 0.5
    rho: float = 15.0
    omega: float = 1000.0
    max_insertions: int = 200

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.rho < 1.0:
            raise ValueError(f"rho must be >= 1, got {self.rho}")
        if not (self.omega > 0.0):
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.max_insertions < 1:
            raise ValueError(f"max_insertions must be >= 1, got {self.max_insertions}")


@dataclass(frozen=True)
class InsertionRecord:
    iteration: int
    site: np.ndarray  # selected target-frame pixel x'_min
    x_star: np.ndarray | None
    xp_star: np.ndarray | None
    cost: float
    accepted: bool
    reason: str


@dataclass
class AdaptState:
    """Evolving correspondence set, tried sites and the per-iteration log."""

    matches: CorrespondenceSet
    tried: list[np.ndarray] = field(default_factory=list)
    log: list[InsertionRecord] = field(default_factory=list)

    @property
    def accepted_count(self) -> int:
        return sum(1 for rec in self.log if rec.accepted)


def residual_map(warped: Image, target: Image, overlap: np.ndarray, epsilon: float) -> np.ndarray:
    """Absolute intensity difference inside the overlap, small values zeroed."""
    overlap = np.asarray(overlap, dtype=bool)
    a = to_grayscale(warped).data
    b = to_grayscale(target).data
    if a.shape != b.shape or overlap.shape != a.shape:
        raise ValueError("warped, target and overlap must share one canvas")
    if not np.any(overlap):
        raise EmptyOverlapError("residual map over an empty overlap")
    r = np.zeros(a.shape)
    r[overlap] = np.abs(a[overlap] - b[overlap])
    r[r < epsilon] = 0.0
    return r


def saliency_map(img: Image) -> np.ndarray:
    """Local gradient energy, box-averaged and min-max normalized to [0, 1].

    A constant image maps to all zeros.
    """
    gray = to_grayscale(img).data
    if gray.shape[0] < 16 or gray.shape[1] < 16:
        raise ValueError(f"saliency needs at least 16x16 pixels, got {gray.shape}")
    gx = np.gradient(gray, axis=1)
    gy = np.gradient(gray, axis=0)
    energy = ndimage.uniform_filter(gx * gx + gy * gy, size=_SALIENCY_BOX, mode="nearest")
    lo = energy.min()
    hi = energy.max()
    if hi - lo <= 0.0:
        return np.zeros_like(energy)
    return (energy - lo) / (hi - lo)


def distance_transform(points, width: int, height: int) -> np.ndarray:
    """Exact Euclidean distance from every grid pixel to the nearest point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise InsufficientDataError("distance transform needs at least one point")
    gx, gy = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    d, _ = cKDTree(pts).query(grid)
    return d.reshape(height, width)


def select_candidate(r: np.ndarray, d: np.ndarray, rho: float):
    """The pixel minimizing D/R, or None when every score is infinite.

    Scores follow the conventions R = 0 => inf and D < rho => inf (sites
    too close to a tried one are excluded). Ties resolve to the row-major
    first occurrence. Returns the pixel as (x, y) floats.
    """
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if r.shape != d.shape:
        raise ValueError(f"map shapes differ: {r.shape} vs {d.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where((r > 0.0) & (d >= rho) & np.isfinite(d), d / r, np.inf)
    flat = int(np.argmin(score))
    if not np.isfinite(score.flat[flat]):
        return None
    row, col = divmod(flat, r.shape[1])
    return np.array([float(col), float(row)])


def adapt_warp(
    image_src: Image,
    image_dst: Image,
    matches: CorrespondenceSet,
    wcfg: WarpConfig | None = None,
    scfg: SearchConfig | None = None,
    acfg: AdaptConfig | None = None,
):
    """Grow the correspondence set until the gated residual map empties.

    Returns (final matches, final warp, AdaptState). Search failures are
    logged as rejections and never abort the loop; an empty overlap under
    the current warp propagates as EmptyOverlapError.
    """
    wcfg = wcfg if wcfg is not None else WarpConfig()
    scfg = scfg if scfg is not None else SearchConfig()
    acfg = acfg if acfg is not None else AdaptConfig()
    if len(matches) < 4:
        raise InsufficientDataError(f"adaptation needs >= 4 initial matches, got {len(matches)}")

    src_gray = to_grayscale(image_src)
    dst_gray = to_grayscale(image_dst)
    grads = np.gradient(dst_gray.data, axis=1), np.gradient(dst_gray.data, axis=0)
    saliency = saliency_map(dst_gray)

    state = AdaptState(matches=matches, tried=[np.array(xp, dtype=np.float64) for xp in matches.dst])
    src_size = (image_src.width, image_src.height)
    dst_size = (image_dst.width, image_dst.height)

    warp = ApapWarp(matches, wcfg)
    for iteration in range(1, acfg.max_insertions + 1):
        canvas = canvas_bounds(warp, src_size, dst_size)
        warped, mask_w = warp_image(src_gray, warp, canvas)
        target_canvas, mask_t = place_on_canvas(dst_gray, canvas)
        overlap = mask_w & mask_t
        if not np.any(overlap):
            raise EmptyOverlapError("warped source no longer overlaps the target")

        r = residual_map(warped, target_canvas, overlap, acfg.epsilon)
        seam = optimize_seam(warped, target_canvas, mask_w, mask_t)
        r[seam.labels == TARGET] = 0.0
        sal = np.zeros(r.shape)
        sal[-canvas.y0 : -canvas.y0 + dst_gray.height, -canvas.x0 : -canvas.x0 + dst_gray.width] = saliency
        r[sal < acfg.eta] = 0.0

        tried = np.array(state.tried) - np.array([canvas.x0, canvas.y0])
        d = distance_transform(tried, canvas.width, canvas.height)
        site = select_candidate(r, d, acfg.rho)
        if site is None:
            break
        site = site + np.array([canvas.x0, canvas.y0])

        record = _try_insert(state, warp, src_gray, dst_gray, site, iteration, scfg, acfg, grads)
        state.log.append(record)
        state.tried.append(site)
        if record.accepted:
            state.matches = state.matches.extend(record.x_star, record.xp_star)
            warp = ApapWarp(state.matches, wcfg)

    final_warp = ApapWarp(state.matches, wcfg)
    return state.matches, final_warp, state


def _try_insert(
    state: AdaptState,
    warp: ApapWarp,
    src_gray: Image,
    dst_gray: Image,
    site: np.ndarray,
    iteration: int,
    scfg: SearchConfig,
    acfg: AdaptConfig,
    grads,
) -> InsertionRecord:
    """Run one correspondence search from a selected site; never raises."""
    try:
        x_star = warp.inverse(site)
    except (DegenerateSolveError, PointAtInfinityError) as exc:
        return InsertionRecord(iteration, site, None, None, math.inf, False, f"inverse: {exc}")
    try:
        result = search_correspondence(src_gray, dst_gray, warp, x_star, scfg, grads=grads)
    except OutOfBoundsError:
        return InsertionRecord(iteration, site, x_star, None, math.inf, False, "window outside source")
    if not result.converged:
        return InsertionRecord(
            iteration, site, x_star, result.xp_star, result.cost, False, "not converged"
        )
    if not (result.cost < acfg.omega):
        return InsertionRecord(
            iteration, site, x_star, result.xp_star, result.cost, False, "cost above omega"
        )
    try:
        state.matches.extend(x_star, result.xp_star)
    except DuplicateSourceError:
        return InsertionRecord(
            iteration, site, x_star, result.xp_star, result.cost, False, "duplicate source"
        )
    return InsertionRecord(iteration, site, x_star, result.xp_star, result.cost, True, "accepted")


def write_insertion_log(state: AdaptState, path) -> None:
    """Serialize the insertion log as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "site_x", "site_y", "x_star_x", "x_star_y", "xp_star_x", "xp_star_y", "cost", "accepted", "reason"]
        )
        for rec in state.log:
            xs = ["", ""] if rec.x_star is None else [f"{rec.x_star[0]:.6f}", f"{rec.x_star[1]:.6f}"]
            xps = ["", ""] if rec.xp_star is None else [f"{rec.xp_star[0]:.6f}", f"{rec.xp_star[1]:.6f}"]
            writer.writerow(
                [
                    rec.iteration,
                    f"{rec.site[0]:.6f}",
                    f"{rec.site[1]:.6f}",
                    *xs,
                    *xps,
                    f"{rec.cost:.6f}" if math.isfinite(rec.cost) else "inf",
                    int(rec.accepted),
                    rec.reason,
                ]
            )
