"""Synthetic two-plane scenes with exact ground-truth warps.

A scene renders one band-limited texture through two homographies that
agree on a vertical crease line, so the true source-to-target warp is
continuous but not globally projective. The gap between the two maps is
scaled exactly to a requested peak parallax, which makes the scenes a
controlled benchmark for spatially varying alignment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyOverlapError, OutOfBoundsError
from .image import Image, sample_bilinear_many, save_image
from .matching import CorrespondenceSet

_PAD = 64


@dataclass(frozen=True)
class TwoPlaneScene:
    """A rendered source/target pair with per-plane ground-truth homographies.

    Source pixels with x <= split_x belong to plane 1 (mapped by h1), the
    rest to plane 2 (mapped by h2). h1 and h2 agree exactly on the crease
    x = split_x.
    """

    source: Image
    target: Image
    h1: np.ndarray
    h2: np.ndarray
    split_x: float
    parallax_px: float
    seed: int

    def plane_of(self, x) -> int:
        return 1 if float(x[0]) <= self.split_x else 2


_SPECKLE_STEP = 34
_SPECKLE_JITTER = 5.0
_SPECKLE_SIGMA = 2.6
_SPECKLE_AMPLITUDE = (190.0, 230.0)


def _smooth_texture(
    rng: np.random.Generator, height: int, width: int, speckle_x0: int | None = None
) -> np.ndarray:
    """Band-limited grayscale texture around mean 128.

    A gentle smoothed-noise background supplies gradients for the
    intensity descent while keeping the windowed cost of a well aligned
    patch far under the default acceptance ceiling. Sparse high-contrast
    speckles from speckle_x0 rightward give a shifted resample somewhere
    to exceed the default residual gate pointwise, which a smooth field
    of acceptable window cost can never do; their centers sit far enough
    apart that a search window holds at most one. A tanh ceiling keeps
    every value strictly inside (3, 253) without clipping creases.
    """

    def component(blur: float, std: float) -> np.ndarray:
        field = ndimage.gaussian_filter(rng.standard_normal((height, width)), blur, mode="wrap")
        field -= field.mean()
        sd = field.std()
        if sd > 0:
            field *= std / sd
        return field

    tex = component(6.0, 12.0) + component(2.0, 3.0)

    if speckle_x0 is None:
        speckle_x0 = width - width // 3
    lo, hi = _SPECKLE_AMPLITUDE
    yy, xx = np.mgrid[0:height, 0:width]
    for gy in np.arange(_SPECKLE_STEP / 2.0, height, _SPECKLE_STEP):
        for gx in np.arange(speckle_x0 + _SPECKLE_STEP / 2.0, width - 2.0, _SPECKLE_STEP):
            cx = gx + rng.uniform(-_SPECKLE_JITTER, _SPECKLE_JITTER)
            cy = gy + rng.uniform(-_SPECKLE_JITTER, _SPECKLE_JITTER)
            amp = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
            r0, r1 = int(max(cy - 12, 0)), int(min(cy + 13, height))
            c0, c1 = int(max(cx - 12, 0)), int(min(cx + 13, width))
            d2 = (xx[r0:r1, c0:c1] - cx) ** 2 + (yy[r0:r1, c0:c1] - cy) ** 2
            tex[r0:r1, c0:c1] += amp * np.exp(-d2 / (2.0 * _SPECKLE_SIGMA**2))

    return 128.0 + 124.0 * np.tanh(tex / 124.0)


def _base_homography(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """A mild projective map: translation plus small rotation, scale and keystone."""
    tx = 24.0 + rng.uniform(-4.0, 4.0)
    ty = 6.0 + rng.uniform(-3.0, 3.0)
    theta = rng.uniform(-0.02, 0.02)
    s = 1.0 + rng.uniform(-0.01, 0.01)
    px = rng.uniform(-1.0, 1.0) * 2e-5 / max(width, 1)
    py = rng.uniform(-1.0, 1.0) * 2e-5 / max(height, 1)
    c, sn = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [s * c, -s * sn, tx],
            [s * sn, s * c, ty],
            [px, py, 1.0],
        ]
    )


def _apply(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    xt = np.column_stack([pts, np.ones(pts.shape[0])])
    v = xt @ h.T
    return v[:, :2] / v[:, 2:3]


def gen_two_plane_pair(
    width: int = 640,
    height: int = 480,
    seed: int = 0,
    parallax_px: float = 10.0,
) -> TwoPlaneScene:
    """Render a deterministic two-plane scene.

    The second plane's map is h2 = h1 + v * l^T where l = [1, 0, -split_x]
    encodes the crease line, so both maps coincide on it; v has zero third
    component, which keeps the displacement difference an exactly scalable
    linear field. |v| is calibrated so the peak difference between the two
    maps over the source frame equals parallax_px. parallax_px = 0 yields
    h2 identical to h1.
    """
    if width < 32 or height < 32:
        raise ValueError(f"scene must be at least 32x32, got {width}x{height}")
    if parallax_px < 0:
        raise ValueError(f"parallax_px must be >= 0, got {parallax_px}")
    rng = np.random.default_rng(seed)
    # Speckles cover the right third of the visible frame, not of the
    # padded texture; otherwise small scenes lose the band to the pad.
    tex = _smooth_texture(
        rng, height + 2 * _PAD, width + 2 * _PAD, speckle_x0=_PAD + width - width // 3
    )
    source = Image(np.ascontiguousarray(tex[_PAD : _PAD + height, _PAD : _PAD + width]))

    h1 = _base_homography(rng, width, height)
    split_x = width / 2.0
    line = np.array([1.0, 0.0, -split_x])
    direction = np.array([np.cos(0.35), np.sin(0.35)])  # mostly horizontal parallax

    if parallax_px > 0.0:
        # Peak of |l . xt| / (h1_row3 . xt) over the source frame fixes |v|.
        gx, gy = np.meshgrid(
            np.linspace(0.0, width - 1.0, 65), np.linspace(0.0, height - 1.0, 49)
        )
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        xt = np.column_stack([pts, np.ones(pts.shape[0])])
        ratio = np.abs(xt @ line) / np.abs(xt @ h1[2])
        scale = parallax_px / ratio.max()
        v = direction * scale
    else:
        v = np.zeros(2)
    h2 = h1 + np.outer(np.array([v[0], v[1], 0.0]), line)

    # Backward-map every target pixel, choosing the plane by preimage side.
    tgt_x, tgt_y = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    tgt = np.column_stack([tgt_x.ravel(), tgt_y.ravel()])
    pre1 = _apply(np.linalg.inv(h1), tgt)
    pre2 = _apply(np.linalg.inv(h2), tgt)
    use1 = pre1[:, 0] <= split_x
    pre = np.where(use1[:, None], pre1, pre2)
    vals, valid = sample_bilinear_many(tex, pre[:, 0] + _PAD, pre[:, 1] + _PAD)
    if not np.all(valid):
        raise ValueError("target render escaped the padded texture; widen the pad")
    target = Image(vals.reshape(height, width))
    return TwoPlaneScene(
        source=source,
        target=target,
        h1=h1,
        h2=h2,
        split_x=split_x,
        parallax_px=float(parallax_px),
        seed=seed,
    )


def ground_truth_flow(scene: TwoPlaneScene, x) -> np.ndarray:
    """The true target position of a source pixel."""
    x = np.asarray(x, dtype=np.float64).reshape(2)
    w, h = scene.source.width, scene.source.height
    if not (0.0 <= x[0] <= w - 1.0 and 0.0 <= x[1] <= h - 1.0):
        raise OutOfBoundsError(f"({x[0]}, {x[1]}) outside the {w}x{h} source frame")
    hmat = scene.h1 if scene.plane_of(x) == 1 else scene.h2
    return _apply(hmat, x.reshape(1, 2))[0]


def ground_truth_flow_many(scene: TwoPlaneScene, pts: np.ndarray) -> np.ndarray:
    """Vectorized ground-truth flow; callers must keep pts inside the frame."""
    pts = np.asarray(pts, dtype=np.float64)
    out1 = _apply(scene.h1, pts)
    out2 = _apply(scene.h2, pts)
    use1 = pts[:, 0] <= scene.split_x
    return np.where(use1[:, None], out1, out2)


def ground_truth_matches(
    scene: TwoPlaneScene,
    count: int,
    seed: int = 0,
    plane: int | None = None,
    margin: float = 12.0,
    min_spacing: float = 4.0,
) -> CorrespondenceSet:
    """Sample exact correspondences from the scene's true warp.

    plane restricts sources to one side of the crease (None takes both).
    Sources keep min_spacing between each other and stay margin pixels
    inside the frame. Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    w, h = scene.source.width, scene.source.height
    if plane == 1:
        lo, hi = margin, scene.split_x - margin
    elif plane == 2:
        lo, hi = scene.split_x + margin, w - 1.0 - margin
    else:
        lo, hi = margin, w - 1.0 - margin
    if hi <= lo:
        raise ValueError("margin leaves no room to sample sources")
    picked: list[np.ndarray] = []
    attempts = 0
    while len(picked) < count and attempts < 200 * count:
        attempts += 1
        p = np.array([rng.uniform(lo, hi), rng.uniform(margin, h - 1.0 - margin)])
        if any(np.linalg.norm(p - q) < min_spacing for q in picked):
            continue
        picked.append(p)
    if len(picked) < count:
        raise ValueError(f"could only place {len(picked)} of {count} sources")
    src = np.array(picked)
    dst = ground_truth_flow_many(scene, src)
    return CorrespondenceSet(src, dst, provenance="synthetic")


def alignment_rmse(warped: Image, target: Image, overlap: np.ndarray) -> float:
    """Root mean squared intensity difference over an overlap mask."""
    overlap = np.asarray(overlap, dtype=bool)
    a = warped.data
    b = target.data
    if a.shape[:2] != b.shape[:2] or overlap.shape != a.shape[:2]:
        raise ValueError("warped, target and overlap must share their pixel grid")
    if not np.any(overlap):
        raise EmptyOverlapError("alignment_rmse over an empty overlap")
    if a.ndim == 3:
        a = a.mean(axis=2)
    if b.ndim == 3:
        b = b.mean(axis=2)
    diff = a[overlap] - b[overlap]
    return float(np.sqrt(np.mean(diff * diff)))


def format_homography(h: np.ndarray) -> str:
    """Plain-text 3x3 serialization: three rows of nine-decimal values."""
    return "\n".join(" ".join(f"{v:.9f}" for v in row) for row in np.asarray(h)) + "\n"


def save_scene(scene: TwoPlaneScene, outdir: str, prefix: str = "scene") -> dict[str, str]:
    """Write the image pair as PNG and both homographies as text files."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "source": os.path.join(outdir, f"{prefix}_source.png"),
        "target": os.path.join(outdir, f"{prefix}_target.png"),
        "h1": os.path.join(outdir, f"{prefix}_h1.txt"),
        "h2": os.path.join(outdir, f"{prefix}_h2.txt"),
    }
    save_image(scene.source, paths["source"])
    save_image(scene.target, paths["target"])
    with open(paths["h1"], "w") as fh:
        fh.write(format_homography(scene.h1))
    with open(paths["h2"], "w") as fh:
        fh.write(format_homography(scene.h2))
    return paths
