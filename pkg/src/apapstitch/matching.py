"""Correspondence sets, CSV exchange, Harris corners and NCC matching."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import (
    CorrespondenceFormatError,
    DuplicateSourceError,
    InsufficientDataError,
)
from .homography import Correspondence
from .image import Image, to_grayscale

CSV_HEADER = ("x", "y", "xp", "yp")


@dataclass(frozen=True)
class CorrespondenceSet:
    """An ordered collection of source/target point pairs.

    src and dst are (N, 2) float64 arrays in raw pixel coordinates.
    Source points must be pairwise distinct (tolerance 1e-6); a repeated
    source with two different targets would make the alignment problem
    contradictory.
    """

    src: np.ndarray
    dst: np.ndarray
    provenance: str = field(default="memory", compare=False)

    def __post_init__(self):
        src = np.ascontiguousarray(np.asarray(self.src, dtype=np.float64))
        dst = np.ascontiguousarray(np.asarray(self.dst, dtype=np.float64))
        if src.ndim != 2 or src.shape[1] != 2 or src.shape != dst.shape:
            raise ValueError(f"expected matching (N, 2) arrays, got {src.shape} and {dst.shape}")
        if src.shape[0] and not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
            raise ValueError("correspondence coordinates must be finite")
        if src.shape[0] >= 2:
            d, _ = cKDTree(src).query(src, k=2)
            nearest = d[:, 1].min()
            if nearest <= 1e-6:
                raise DuplicateSourceError(
                    f"two source points coincide within 1e-6 (separation {nearest:.3g})"
                )
        src.setflags(write=False)
        dst.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    def __len__(self) -> int:
        return self.src.shape[0]

    def __iter__(self):
        for x, xp in zip(self.src, self.dst):
            yield Correspondence(x, xp)

    def subset(self, indices) -> "CorrespondenceSet":
        idx = np.asarray(indices)
        return CorrespondenceSet(self.src[idx], self.dst[idx], self.provenance)

    def extend(self, x, xp, provenance: str | None = None) -> "CorrespondenceSet":
        """A new set with one more pair appended."""
        x = np.asarray(x, dtype=np.float64).reshape(1, 2)
        xp = np.asarray(xp, dtype=np.float64).reshape(1, 2)
        return CorrespondenceSet(
            np.vstack([self.src, x]),
            np.vstack([self.dst, xp]),
            provenance if provenance is not None else self.provenance,
        )


def read_correspondences(path) -> CorrespondenceSet:
    """Parse a `x,y,xp,yp` CSV into a CorrespondenceSet.

    Violations (bad header, wrong field count, non-numeric values) raise
    CorrespondenceFormatError naming the offending line number.
    """
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CorrespondenceFormatError(f"{path}: empty file")
    header = tuple(cell.strip() for cell in rows[0])
    if header != CSV_HEADER:
        raise CorrespondenceFormatError(
            f"{path}: line 1: expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}"
        )
    src = []
    dst = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise CorrespondenceFormatError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
        try:
            vals = [float(cell) for cell in row]
        except ValueError:
            raise CorrespondenceFormatError(f"{path}: line {lineno}: non-numeric field") from None
        if not all(np.isfinite(vals)):
            raise CorrespondenceFormatError(f"{path}: line {lineno}: non-finite value")
        src.append(vals[:2])
        dst.append(vals[2:])
    if not src:
        raise CorrespondenceFormatError(f"{path}: no correspondence rows")
    return CorrespondenceSet(np.array(src), np.array(dst), provenance=str(path))


def write_correspondences(matches: CorrespondenceSet, path) -> None:
    """Write a set back out in the same CSV format read_correspondences accepts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for x, xp in zip(matches.src, matches.dst):
            writer.writerow([repr(float(v)) for v in (x[0], x[1], xp[0], xp[1])])


def harris_corners(
    img: Image,
    max_count: int = 500,
    min_distance: int = 8,
    k: float = 0.04,
    rel_threshold: float = 1e-3,
) -> np.ndarray:
    """Harris corner detection with non-maximum suppression.

    Returns an (M, 2) array of (x, y) pixel coordinates ordered by
    decreasing corner response, at most max_count of them, no two closer
    than min_distance. A constant image yields an empty array.
    """
    gray = to_grayscale(img).data
    gx = ndimage.sobel(gray, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(gray, axis=0, mode="nearest") / 8.0
    sxx = ndimage.uniform_filter(gx * gx, size=3, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, size=3, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, size=3, mode="nearest")
    det = sxx * syy - sxy * sxy
    tr = sxx + syy
    response = det - k * tr * tr
    peak = response.max()
    if peak <= 0.0:
        return np.zeros((0, 2))
    local_max = response == ndimage.maximum_filter(response, size=3, mode="nearest")
    candidate = local_max & (response > rel_threshold * peak)
    ys, xs = np.nonzero(candidate)
    if ys.size == 0:
        return np.zeros((0, 2))
    order = np.argsort(response[ys, xs])[::-1]
    ys, xs = ys[order], xs[order]
    kept = []
    min_d2 = float(min_distance) ** 2
    for x, y in zip(xs, ys):
        ok = True
        for kx, ky in kept:
            if (x - kx) ** 2 + (y - ky) ** 2 < min_d2:
                ok = False
                break
        if ok:
            kept.append((float(x), float(y)))
            if len(kept) >= max_count:
                break
    return np.array(kept, dtype=np.float64) if kept else np.zeros((0, 2))


def _patches_at(gray: np.ndarray, pts: np.ndarray, half: int):
    """Extract (M, w*w) normalized patches; drops points whose window leaves the image."""
    h, w = gray.shape
    xs = np.rint(pts[:, 0]).astype(int)
    ys = np.rint(pts[:, 1]).astype(int)
    keep = (xs >= half) & (xs < w - half) & (ys >= half) & (ys < h - half)
    xs, ys = xs[keep], ys[keep]
    size = 2 * half + 1
    patches = np.empty((xs.size, size * size))
    for i, (x, y) in enumerate(zip(xs, ys)):
        patches[i] = gray[y - half : y + half + 1, x - half : x + half + 1].ravel()
    patches -= patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1)
    flat = norms < 1e-9
    norms[flat] = 1.0
    patches /= norms[:, None]
    patches[flat] = 0.0
    return patches, np.flatnonzero(keep)


def match_ncc(
    img_src: Image,
    img_dst: Image,
    kps_src: np.ndarray,
    kps_dst: np.ndarray,
    window: int = 11,
    min_score: float = 0.8,
) -> CorrespondenceSet:
    """Mutual-best normalized cross-correlation matching of keypoints.

    A pair is kept when each patch is the other's best match and the
    NCC score reaches min_score. Raises InsufficientDataError when
    fewer than 4 pairs survive.
    """
    if window % 2 == 0 or window < 3:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    half = window // 2
    gray_src = to_grayscale(img_src).data
    gray_dst = to_grayscale(img_dst).data
    pts_src = np.asarray(kps_src, dtype=np.float64).reshape(-1, 2)
    pts_dst = np.asarray(kps_dst, dtype=np.float64).reshape(-1, 2)
    if pts_src.shape[0] == 0 or pts_dst.shape[0] == 0:
        raise InsufficientDataError("no keypoints to match in one of the images")
    pa, ia = _patches_at(gray_src, pts_src, half)
    pb, ib = _patches_at(gray_dst, pts_dst, half)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise InsufficientDataError("all corner windows fall outside the image")
    scores = pa @ pb.T
    best_ab = scores.argmax(axis=1)
    best_ba = scores.argmax(axis=0)
    src_pts = []
    dst_pts = []
    for a, b in enumerate(best_ab):
        if best_ba[b] == a and scores[a, b] >= min_score:
            src_pts.append(pts_src[ia[a]])
            dst_pts.append(pts_dst[ib[b]])
    if len(src_pts) < 4:
        raise InsufficientDataError(
            f"only {len(src_pts)} mutual NCC matches at min_score={min_score}"
        )
    return CorrespondenceSet(np.array(src_pts), np.array(dst_pts), provenance="detector")
