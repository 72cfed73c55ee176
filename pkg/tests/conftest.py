"""Shared fixtures and numeric helpers.

Most tests build their own tiny inputs; what lives here is the handful
of constructions used across modules: well-conditioned random projective
maps, exactly consistent correspondence sets, band-limited test images,
and one small two-plane scene that is expensive enough to share.
"""

import numpy as np
import pytest
from scipy import ndimage

from apapstitch import (
    ApapWarp,
    CorrespondenceSet,
    Image,
    WarpConfig,
    apply_homography,
    augmented_solve,
    gen_two_plane_pair,
)


def random_homography(rng, perspective=1e-4):
    """A mild random projective map: rotation-ish block, small translation,
    tiny perspective row. Stays invertible and keeps points finite over
    a few hundred pixels."""
    angle = rng.uniform(-0.15, 0.15)
    c, s = np.cos(angle), np.sin(angle)
    return np.array(
        [
            [c * rng.uniform(0.9, 1.1), -s * rng.uniform(0.8, 1.2), rng.uniform(-12.0, 12.0)],
            [s * rng.uniform(0.8, 1.2), c * rng.uniform(0.9, 1.1), rng.uniform(-12.0, 12.0)],
            [rng.uniform(-perspective, perspective), rng.uniform(-perspective, perspective), 1.0],
        ]
    )


def map_points(h, pts):
    pts = np.asarray(pts, dtype=np.float64)
    xt = np.column_stack([pts, np.ones(len(pts))])
    v = xt @ np.asarray(h, dtype=np.float64).T
    return v[:, :2] / v[:, 2:3]


def consistent_matches(h, count, rng, box=(200.0, 150.0)):
    """Exact correspondences (x, Hx) with sources spread over a box."""
    src = np.column_stack(
        [rng.uniform(0.0, box[0], count), rng.uniform(0.0, box[1], count)]
    )
    return CorrespondenceSet(src, map_points(h, src), provenance="synthetic")


def noisy_warp(rng, count=25, noise=0.6, box=(200.0, 150.0), sigma=10.0, gamma=0.01):
    """A locally varying field fitted to perturbed projective data."""
    truth = random_homography(rng)
    src = np.column_stack(
        [rng.uniform(10, box[0] - 10, count), rng.uniform(10, box[1] - 10, count)]
    )
    dst = map_points(truth, src) + rng.normal(0.0, noise, (count, 2))
    warp = ApapWarp(CorrespondenceSet(src, dst), WarpConfig(sigma=sigma, gamma=gamma))
    return warp, truth


def fd_jacobian(warp, x, x_star, xp_star, step=1e-4):
    """Central finite differences of the augmented warp position in xp*."""
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        hp = augmented_solve(warp, x, x_star, xp_star + e)
        hm = augmented_solve(warp, x, x_star, xp_star - e)
        fp = apply_homography(hp.matrix, x)
        fm = apply_homography(hm.matrix, x)
        cols.append((fp - fm) / (2.0 * step))
    return np.column_stack(cols)


def homography_distance(ha, hb, pts):
    """Largest disagreement of two maps over a set of probe points,
    which sidesteps the scale ambiguity of comparing matrices."""
    return float(np.max(np.linalg.norm(map_points(ha, pts) - map_points(hb, pts), axis=1)))


def probe_grid(width, height, n=10):
    xs, ys = np.meshgrid(np.linspace(0.0, width, n), np.linspace(0.0, height, n))
    return np.column_stack([xs.ravel(), ys.ravel()])


def smooth_image(seed, height, width, blur=3.0, std=30.0):
    """Band-limited random texture around mean 128, clipped to [0, 255]."""
    rng = np.random.default_rng(seed)
    field = ndimage.gaussian_filter(rng.standard_normal((height, width)), blur, mode="wrap")
    field -= field.mean()
    sd = field.std()
    if sd > 0:
        field *= std / sd
    return Image(np.clip(128.0 + field, 0.0, 255.0))


def translated_pair(seed, height, width, tx, ty):
    """Two crops of one texture offset by an integer (tx, ty).

    Every source pixel x corresponds exactly to x + (tx, ty) in the
    target, with no resampling in between, so intensity costs at the
    true alignment are exactly zero.
    """
    margin = max(abs(tx), abs(ty)) + 2
    big = smooth_image(seed, height + 2 * margin, width + 2 * margin)
    src = Image(big.data[margin : margin + height, margin : margin + width].copy())
    dst = Image(
        big.data[margin - ty : margin - ty + height, margin - tx : margin - tx + width].copy()
    )
    return src, dst


def _touches_oracle(zone):
    t = np.zeros_like(zone)
    t[1:, :] |= zone[:-1, :]
    t[:-1, :] |= zone[1:, :]
    t[:, 1:] |= zone[:, :-1]
    t[:, :-1] |= zone[:, 1:]
    return t


def seed_partition(mask_a, mask_b):
    """The seam's constraint rule: overlap pixels 4-adjacent to an
    exclusive zone are pinned to that zone's label."""
    overlap = mask_a & mask_b
    seed_a = overlap & _touches_oracle(mask_a & ~mask_b)
    seed_b = overlap & _touches_oracle(mask_b & ~mask_a)
    return overlap, seed_a, seed_b


def enumerate_seam_optimum(a, b, mask_a, mask_b, max_free=20):
    """Exhaustive minimum seam energy over all labelings honoring the seeds.

    Enumerates every assignment of the unconstrained overlap pixels at
    once: each 4-neighbor edge contributes its weight to exactly the
    assignments that cut it, accumulated as vectorized comparisons over
    the whole assignment table. Returns None when the instance has more
    than max_free unconstrained pixels or a pixel is pinned both ways.
    """
    overlap, seed_a, seed_b = seed_partition(mask_a, mask_b)
    if np.any(seed_a & seed_b):
        return None
    free = overlap & ~seed_a & ~seed_b
    fy, fx = np.nonzero(free)
    k = fy.size
    if k > max_free:
        return None

    labels = np.full(overlap.shape, -1, dtype=np.int64)
    labels[seed_a] = 0
    labels[seed_b] = 1
    free_index = np.full(overlap.shape, -1, dtype=np.int64)
    free_index[fy, fx] = np.arange(k)

    va = a.data if a.data.ndim == 2 else a.data.mean(axis=2)
    vb = b.data if b.data.ndim == 2 else b.data.mean(axis=2)
    diff = np.zeros(overlap.shape)
    diff[overlap] = np.abs(va[overlap] - vb[overlap])

    bits = (np.arange(1 << k, dtype=np.int64)[:, None] >> np.arange(k)) & 1
    energy = np.zeros(1 << k)
    constant = 0.0
    h, w = overlap.shape
    for du, dv in ((0, 1), (1, 0)):
        pa = overlap[: h - du, : w - dv] & overlap[du:, dv:]
        py, px = np.nonzero(pa)
        for y, x in zip(py, px):
            y2, x2 = y + du, x + dv
            weight = diff[y, x] + diff[y2, x2]
            la, lb = labels[y, x], labels[y2, x2]
            ia, ib = free_index[y, x], free_index[y2, x2]
            if ia >= 0 and ib >= 0:
                energy += weight * (bits[:, ia] != bits[:, ib])
            elif ia >= 0:
                energy += weight * (bits[:, ia] != lb)
            elif ib >= 0:
                energy += weight * (bits[:, ib] != la)
            elif la != lb:
                constant += weight
    return float(energy.min() + constant)


def band_masks(height, width, cb, ca):
    """mask_a covers columns [0, ca), mask_b covers [cb, width)."""
    mask_a = np.zeros((height, width), dtype=bool)
    mask_b = np.zeros((height, width), dtype=bool)
    mask_a[:, :ca] = True
    mask_b[:, cb:] = True
    return mask_a, mask_b


def ragged_band_instance(rng, height=6, width=8, levels=256):
    """A random small seam instance: integer images and per-row ragged
    overlap bands at least two pixels wide."""
    a = Image(rng.integers(0, levels, (height, width)).astype(np.float64))
    b = Image(rng.integers(0, levels, (height, width)).astype(np.float64))
    mask_a = np.zeros((height, width), dtype=bool)
    mask_b = np.zeros((height, width), dtype=bool)
    for row in range(height):
        cb = int(rng.integers(1, 3))
        ca = int(rng.integers(cb + 2, width))
        mask_a[row, :ca] = True
        mask_b[row, cb:] = True
    return a, b, mask_a, mask_b


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def small_scene():
    """A two-plane pair small enough that full adaptation runs stay fast."""
    return gen_two_plane_pair(160, 120, seed=3, parallax_px=9.0)
