"""Canvas layout, backward warping and seam-cut compositing.

The seam solver labels every overlap pixel SOURCE or TARGET by an exact
minimum cut: pairwise cost |A(p)-B(p)| + |A(q)-B(q)| between 4-connected
neighbors with different labels, hard-constrained by each image's
exclusive coverage zone. Costs are scaled to integers (2^22) for the
max-flow solve; the reported energy is recomputed in floating point from
the final labeling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .errors import DegenerateSolveError, EmptyOverlapError
from .image import Image, sample_bilinear_many
from .warp import ApapWarp, Rect

# Capacities are fixed-point in int32 because scipy's maximum_flow wraps
# wider integers silently. Augmenting-path work grows with the scaled flow
# volume, so the scale stays modest: integer-valued images quantize
# exactly, anything else to 1/128 of a gray level per edge, and the
# largest plausible min cut stays orders of magnitude below _FLOW_INF so
# the seed edges remain effectively uncuttable.
_FLOW_SCALE = 2**7
_FLOW_INF = np.int32(2**30)

SOURCE = 0
TARGET = 1


@dataclass(frozen=True)
class SeamLabeling:
    """labels: 0 where the source image wins, 1 for the target, -1 outside
    the overlap. energy is the summed pairwise cost along the seam."""

    labels: np.ndarray
    energy: float


def canvas_bounds(warp: ApapWarp, src_size: tuple[int, int], dst_size: tuple[int, int]) -> Rect:
    """Integer canvas covering the warped source border and the target frame.

    src_size and dst_size are (width, height). Border samples whose local
    solve degenerates are ignored; if every border sample degenerates the
    warp cannot be composited and DegenerateSolveError is raised. The
    canvas is clamped to 4 source diagonals around the target frame so a
    near-infinity border point cannot blow up memory.
    """
    sw, sh = src_size
    dw, dh = dst_size
    xs = np.arange(0.0, sw - 0.5, 2.0)
    ys = np.arange(0.0, sh - 0.5, 2.0)
    border = np.concatenate(
        [
            np.column_stack([xs, np.zeros_like(xs)]),
            np.column_stack([xs, np.full_like(xs, sh - 1.0)]),
            np.column_stack([np.zeros_like(ys), ys]),
            np.column_stack([np.full_like(ys, sw - 1.0), ys]),
        ]
    )
    matrices, _, _, ok = warp.solve_many(border)
    if not np.any(ok):
        raise DegenerateSolveError("warp degenerate along the entire source border")
    xt = np.column_stack([border[ok], np.ones(int(ok.sum()))])
    v = np.einsum("qij,qj->qi", matrices[ok], xt)
    den_ok = np.abs(v[:, 2]) >= 1e-12
    if not np.any(den_ok):
        raise DegenerateSolveError("warped source border lies entirely at infinity")
    pts = v[den_ok, :2] / v[den_ok, 2:3]
    reach = 4.0 * float(np.hypot(sw, sh))
    lo = np.maximum(pts.min(axis=0), [-reach, -reach])
    hi = np.minimum(pts.max(axis=0), [dw - 1.0 + reach, dh - 1.0 + reach])
    x0 = int(np.floor(min(lo[0], 0.0)))
    y0 = int(np.floor(min(lo[1], 0.0)))
    x1 = int(np.ceil(max(hi[0], dw - 1.0)))
    y1 = int(np.ceil(max(hi[1], dh - 1.0)))
    return Rect(x0=x0, y0=y0, width=x1 - x0 + 1, height=y1 - y0 + 1)


def _invert_cells(matrices: np.ndarray, valid: np.ndarray):
    """Invert per-cell homographies, dropping numerically singular cells."""
    flat = matrices.reshape(-1, 3, 3)
    ok = valid.ravel().copy()
    det = np.linalg.det(flat)
    ok &= np.abs(det) > 1e-12
    inv = np.zeros_like(flat)
    if np.any(ok):
        inv[ok] = np.linalg.inv(flat[ok])
    return inv.reshape(matrices.shape), ok.reshape(valid.shape)


def warp_image(img: Image, warp: ApapWarp, canvas: Rect):
    """Backward-warp img onto the canvas through the warp's cell grid.

    Builds the grid cache on the canvas if it is absent or was built for
    a different rectangle. Returns (warped Image, coverage mask); pixels
    whose preimage leaves img, or whose cell solve degenerates, are zero
    with the mask cleared.
    """
    if warp.grid is None or warp.grid.rect != canvas:
        warp = warp.with_grid(canvas)
    grid = warp.grid
    inv, cell_ok = _invert_cells(grid.matrices, grid.valid)

    h, w = canvas.height, canvas.width
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cx = ii // grid.cell_size
    cy = jj // grid.cell_size
    m = inv[cy, cx]
    ok = cell_ok[cy, cx]

    x = (canvas.x0 + ii).astype(np.float64)
    y = (canvas.y0 + jj).astype(np.float64)
    u = m[..., 0, 0] * x + m[..., 0, 1] * y + m[..., 0, 2]
    v = m[..., 1, 0] * x + m[..., 1, 1] * y + m[..., 1, 2]
    den = m[..., 2, 0] * x + m[..., 2, 1] * y + m[..., 2, 2]
    ok &= np.abs(den) >= 1e-12
    den = np.where(ok, den, 1.0)
    sx = u / den
    sy = v / den

    vals, in_bounds = sample_bilinear_many(img.data, sx.ravel(), sy.ravel())
    mask = ok & in_bounds.reshape(h, w)
    if img.data.ndim == 3:
        out = vals.reshape(h, w, img.data.shape[2])
        out[~mask] = 0.0
    else:
        out = vals.reshape(h, w)
        out[~mask] = 0.0
    return Image(out), mask


def warp_image_homography(img: Image, hom: np.ndarray, canvas: Rect):
    """Backward-warp img through a single global homography (baseline path)."""
    hinv = np.linalg.inv(np.asarray(hom, dtype=np.float64))
    h, w = canvas.height, canvas.width
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    x = (canvas.x0 + ii).astype(np.float64)
    y = (canvas.y0 + jj).astype(np.float64)
    u = hinv[0, 0] * x + hinv[0, 1] * y + hinv[0, 2]
    v = hinv[1, 0] * x + hinv[1, 1] * y + hinv[1, 2]
    den = hinv[2, 0] * x + hinv[2, 1] * y + hinv[2, 2]
    ok = np.abs(den) >= 1e-12
    den = np.where(ok, den, 1.0)
    vals, in_bounds = sample_bilinear_many(img.data, (u / den).ravel(), (v / den).ravel())
    mask = ok & in_bounds.reshape(h, w)
    if img.data.ndim == 3:
        out = vals.reshape(h, w, img.data.shape[2])
    else:
        out = vals.reshape(h, w)
    out[~mask] = 0.0
    return Image(out), mask


def place_on_canvas(img: Image, canvas: Rect):
    """Embed an image whose frame origin is (0, 0) into the canvas."""
    h, w = canvas.height, canvas.width
    if img.data.ndim == 3:
        out = np.zeros((h, w, img.data.shape[2]))
    else:
        out = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    r0, c0 = -canvas.y0, -canvas.x0
    ih, iw = img.height, img.width
    out[r0 : r0 + ih, c0 : c0 + iw] = img.data
    mask[r0 : r0 + ih, c0 : c0 + iw] = True
    return Image(out), mask


def _intensity(data: np.ndarray) -> np.ndarray:
    return data.mean(axis=2) if data.ndim == 3 else data


def optimize_seam(a: Image, b: Image, mask_a: np.ndarray, mask_b: np.ndarray) -> SeamLabeling:
    """Exact minimum-cost seam between two images on a shared canvas.

    Overlap pixels adjacent to a's exclusive zone are constrained to
    SOURCE, those adjacent to b's to TARGET; the cut between the labels
    minimizes the total pairwise cost. When one side has no constrained
    pixels the overlap degenerates to a single label at zero energy.
    Raises EmptyOverlapError when the masks never intersect.
    """
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    overlap = mask_a & mask_b
    if not np.any(overlap):
        raise EmptyOverlapError("seam requested on an empty overlap")

    diff = np.zeros(overlap.shape)
    diff[overlap] = np.abs(_intensity(a.data)[overlap] - _intensity(b.data)[overlap])

    only_a = mask_a & ~mask_b
    only_b = mask_b & ~mask_a
    seed_a = overlap & _touches(only_a)
    seed_b = overlap & _touches(only_b)

    labels = np.full(overlap.shape, -1, dtype=np.int8)
    if not np.any(seed_a) or not np.any(seed_b):
        fill = TARGET if np.any(seed_b) else SOURCE
        labels[overlap] = fill
        return SeamLabeling(labels=labels, energy=0.0)

    idx = np.full(overlap.shape, -1, dtype=np.int64)
    n_nodes = int(overlap.sum())
    idx[overlap] = np.arange(n_nodes)

    rows = []
    cols = []
    caps = []
    for du, dv in ((0, 1), (1, 0)):
        pa = overlap[: overlap.shape[0] - du, : overlap.shape[1] - dv]
        pb = overlap[du:, dv:]
        both = pa & pb
        ia = idx[: overlap.shape[0] - du, : overlap.shape[1] - dv][both]
        ib = idx[du:, dv:][both]
        c = diff[: overlap.shape[0] - du, : overlap.shape[1] - dv][both] + diff[du:, dv:][both]
        cap = np.rint(c * _FLOW_SCALE).astype(np.int32)
        rows.extend([ia, ib])
        cols.extend([ib, ia])
        caps.extend([cap, cap])

    src_node = n_nodes
    sink_node = n_nodes + 1
    ia = idx[seed_a]
    rows.append(np.full(ia.size, src_node))
    cols.append(ia)
    caps.append(np.full(ia.size, _FLOW_INF))
    ib = idx[seed_b]
    rows.append(ib)
    cols.append(np.full(ib.size, sink_node))
    caps.append(np.full(ib.size, _FLOW_INF))

    graph = csr_matrix(
        (np.concatenate(caps), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes + 2, n_nodes + 2),
        dtype=np.int32,
    )
    result = maximum_flow(graph, src_node, sink_node)
    residual = graph - result.flow
    residual.data = (residual.data > 0).astype(np.int32)
    residual.eliminate_zeros()
    reached = breadth_first_order(residual, src_node, directed=True, return_predecessors=False)

    source_side = np.zeros(n_nodes + 2, dtype=bool)
    source_side[reached] = True
    labels[overlap] = np.where(source_side[idx[overlap]], SOURCE, TARGET)

    energy = 0.0
    for du, dv in ((0, 1), (1, 0)):
        la = labels[: overlap.shape[0] - du, : overlap.shape[1] - dv]
        lb = labels[du:, dv:]
        cut = (la >= 0) & (lb >= 0) & (la != lb)
        if np.any(cut):
            energy += float(
                (
                    diff[: overlap.shape[0] - du, : overlap.shape[1] - dv][cut]
                    + diff[du:, dv:][cut]
                ).sum()
            )
    return SeamLabeling(labels=labels, energy=energy)


def _touches(zone: np.ndarray) -> np.ndarray:
    """Pixels 4-adjacent to the given zone."""
    out = np.zeros_like(zone)
    out[1:, :] |= zone[:-1, :]
    out[:-1, :] |= zone[1:, :]
    out[:, 1:] |= zone[:, :-1]
    out[:, :-1] |= zone[:, 1:]
    return out


def seam_energy(a: Image, b: Image, labels: np.ndarray) -> float:
    """Pairwise cost of an arbitrary labeling (oracle-friendly helper)."""
    diff = np.abs(_intensity(a.data) - _intensity(b.data))
    energy = 0.0
    for du, dv in ((0, 1), (1, 0)):
        la = labels[: labels.shape[0] - du, : labels.shape[1] - dv]
        lb = labels[du:, dv:]
        cut = (la >= 0) & (lb >= 0) & (la != lb)
        if np.any(cut):
            energy += float(
                (
                    diff[: labels.shape[0] - du, : labels.shape[1] - dv][cut]
                    + diff[du:, dv:][cut]
                ).sum()
            )
    return energy


def blend(a: Image, b: Image, mask_a: np.ndarray, mask_b: np.ndarray, labeling: SeamLabeling | None = None) -> Image:
    """Composite two canvas-aligned images.

    With a labeling, overlap pixels follow the seam; without one they are
    averaged. Exclusive zones always take their sole contributor.
    """
    if a.data.shape != b.data.shape:
        raise ValueError(f"canvas shapes differ: {a.data.shape} vs {b.data.shape}")
    mask_a = np.asarray(mask_a, dtype=bool)
    mask_b = np.asarray(mask_b, dtype=bool)
    overlap = mask_a & mask_b
    out = np.zeros_like(a.data)
    only_a = mask_a & ~mask_b
    only_b = mask_b & ~mask_a
    out[only_a] = a.data[only_a]
    out[only_b] = b.data[only_b]
    if labeling is None:
        out[overlap] = 0.5 * (a.data[overlap] + b.data[overlap])
    else:
        take_a = overlap & (labeling.labels == SOURCE)
        take_b = overlap & (labeling.labels == TARGET)
        out[take_a] = a.data[take_a]
        out[take_b] = b.data[take_b]
    return Image(out)
