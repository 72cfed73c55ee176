"""Command-line frontend: stitch, diff and bench subcommands.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
files), 3 numerical failure (degenerate solves, no consensus). Parameter
precedence is defaults < config file < flags, and the effective
configuration is printed before any work runs. All timing-free output is
deterministic for fixed arguments and seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass

import numpy as np

from .adapt import AdaptConfig, AdaptState, adapt_warp, residual_map, write_insertion_log
from .composite import (
    blend,
    canvas_bounds,
    optimize_seam,
    place_on_canvas,
    warp_image,
    warp_image_homography,
)
from .errors import ConfigFileError, DataError, StitchError
from .homography import apply_homography_many, dlt_homography, ransac_homography
from .image import Image, load_image, save_image, to_grayscale
from .matching import harris_corners, match_ncc, read_correspondences, write_correspondences
from .search import SearchConfig
from .synth import alignment_rmse, gen_two_plane_pair, ground_truth_matches, save_scene
from .warp import ApapWarp, Rect, WarpConfig


@dataclass
class RunConfig:
    """Flat union of every tunable, merged from defaults, file and flags."""

    sigma: float = 8.0
    gamma: float = 0.01
    cell_size: int = 8
    window: int = 31
    max_iters: int = 30
    step_tol: float = 0.01
    damping: float = 0.0
    epsilon: float = 100.0
    eta: float = 0.5
    rho: float = 15.0
    omega: float = 1000.0
    max_insertions: int = 200
    ransac_threshold: float = 1.0
    ransac_iters: int = 500
    seed: int = 0
    match_count: int = 500
    match_window: int = 11
    match_min_score: float = 0.8
    match_min_distance: int = 8

    def warp_config(self) -> WarpConfig:
        return WarpConfig(sigma=self.sigma, gamma=self.gamma, cell_size=self.cell_size)

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            window=self.window,
            max_iters=self.max_iters,
            step_tol=self.step_tol,
            accept_omega=self.omega,
            damping=self.damping,
        )

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(
            epsilon=self.epsilon,
            eta=self.eta,
            rho=self.rho,
            omega=self.omega,
            max_insertions=self.max_insertions,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def load_config_file(path: str) -> dict:
    """Parse a flat `key = value` file; # starts a comment."""
    try:
        with open(path, "r") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigFileError(f"{path}: {exc.strerror or exc}") from None
    overrides = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}: line {lineno}: expected `key = value`")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigFileError(f"{path}: line {lineno}: unknown key {key!r}")
        caster = int if _FIELD_TYPES[key] in ("int", int) else float
        try:
            overrides[key] = caster(value)
        except ValueError:
            raise ConfigFileError(
                f"{path}: line {lineno}: cannot parse {value!r} as {caster.__name__}"
            ) from None
    return overrides


def merge_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < explicit flags."""
    values = dataclasses.asdict(RunConfig())
    config_path = getattr(args, "config", None)
    if config_path:
        values.update(load_config_file(config_path))
    for name in values:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values)


def print_effective_config(cfg: RunConfig) -> None:
    print("# effective config")
    for name in sorted(_FIELD_TYPES):
        print(f"{name} = {getattr(cfg, name)}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value parameter file")
    parser.add_argument("--sigma", type=float, help="warp locality scale in pixels")
    parser.add_argument("--gamma", type=float, help="weight floor in [0, 1)")
    parser.add_argument("--cell-size", dest="cell_size", type=int, help="warp grid cell edge")
    parser.add_argument("--window", type=int, help="search window side (odd)")
    parser.add_argument("--max-iters", dest="max_iters", type=int, help="search iteration cap")
    parser.add_argument("--step-tol", dest="step_tol", type=float, help="search convergence step")
    parser.add_argument("--damping", type=float, help="normal-matrix damping")
    parser.add_argument("--epsilon", type=float, help="residual gate (intensity)")
    parser.add_argument("--eta", type=float, help="saliency gate in [0, 1]")
    parser.add_argument("--rho", type=float, help="insertion spacing in pixels")
    parser.add_argument("--omega", type=float, help="search cost acceptance ceiling")
    parser.add_argument(
        "--max-insertions", dest="max_insertions", type=int, help="adaptation round cap"
    )
    parser.add_argument("--ransac-threshold", dest="ransac_threshold", type=float)
    parser.add_argument("--ransac-iters", dest="ransac_iters", type=int)
    parser.add_argument("--seed", type=int, help="seed for all randomized stages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apapstitch",
        description="Locally projective image alignment with residual-driven refinement.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("stitch", help="align and composite an image pair")
    ps.add_argument("source")
    ps.add_argument("target")
    ps.add_argument("--matches", metavar="CSV", help="precomputed correspondences")
    ps.add_argument("--adapt", action="store_true", help="run residual-driven insertion")
    mode = ps.add_mutually_exclusive_group()
    mode.add_argument("--seam", action="store_true", help="seam-cut compositing (default)")
    mode.add_argument("--linear", action="store_true", help="average the overlap instead")
    ps.add_argument("--out", metavar="PNG", help="composite output path")
    ps.add_argument("--dump-matches", metavar="CSV", help="write the final correspondences")
    ps.add_argument("--dump-diff", metavar="PNG", help="write the gated residual map")
    _add_config_flags(ps)

    pd = sub.add_parser("diff", help="render the residual map for given matches")
    pd.add_argument("source")
    pd.add_argument("target")
    pd.add_argument("--matches", metavar="CSV", required=True)
    pd.add_argument("--out", metavar="PNG", required=True)
    _add_config_flags(pd)

    pb = sub.add_parser("bench", help="synthetic benchmark with ground truth")
    pb.add_argument("--scene", choices=["two-plane"], required=True)
    pb.add_argument("--parallax", type=float, default=10.0)
    pb.add_argument("--width", type=int, default=640)
    pb.add_argument("--height", type=int, default=480)
    pb.add_argument("--matches-count", dest="matches_count", type=int, default=120)
    pb.add_argument("--out", metavar="DIR", default="bench_out")
    _add_config_flags(pb)

    return parser


def _load_matches(args, src: Image, dst: Image, cfg: RunConfig):
    if args.matches:
        return read_correspondences(args.matches)
    kps_src = harris_corners(src, max_count=cfg.match_count, min_distance=cfg.match_min_distance)
    kps_dst = harris_corners(dst, max_count=cfg.match_count, min_distance=cfg.match_min_distance)
    return match_ncc(
        src,
        dst,
        kps_src,
        kps_dst,
        window=cfg.match_window,
        min_score=cfg.match_min_score,
    )


def _target_frame_residual(src: Image, dst: Image, warp: ApapWarp, epsilon: float) -> np.ndarray:
    frame = Rect(x0=0, y0=0, width=dst.width, height=dst.height)
    warped, mask = warp_image(to_grayscale(src), warp, frame)
    return residual_map(warped, to_grayscale(dst), mask, epsilon)


def _cmd_stitch(args, cfg: RunConfig) -> int:
    src = load_image(args.source)
    dst = load_image(args.target)
    matches = _load_matches(args, src, dst, cfg)
    _, inliers = ransac_homography(
        matches, cfg.ransac_threshold, cfg.ransac_iters, cfg.seed
    )
    print(f"matches = {len(matches)}")
    print(f"inliers = {len(inliers)}")

    state: AdaptState | None = None
    if args.adapt:
        final, warp, state = adapt_warp(
            src, dst, inliers, cfg.warp_config(), cfg.search_config(), cfg.adapt_config()
        )
        print(f"insertions_tried = {len(state.log)}")
        print(f"insertions_accepted = {state.accepted_count}")
    else:
        final = inliers
        warp = ApapWarp(final, cfg.warp_config())

    canvas = canvas_bounds(warp, (src.width, src.height), (dst.width, dst.height))
    print(f"canvas = {canvas.width}x{canvas.height} at ({canvas.x0}, {canvas.y0})")
    warped, mask_w = warp_image(src, warp, canvas)
    placed, mask_t = place_on_canvas(dst, canvas)
    if args.linear:
        out = blend(warped, placed, mask_w, mask_t, labeling=None)
    else:
        labeling = optimize_seam(warped, placed, mask_w, mask_t)
        print(f"seam_energy = {labeling.energy:.6f}")
        out = blend(warped, placed, mask_w, mask_t, labeling=labeling)

    if args.out:
        save_image(out, args.out)
        print(f"wrote {args.out}")
    if args.dump_matches:
        write_correspondences(final, args.dump_matches)
        print(f"wrote {args.dump_matches}")
    if args.dump_diff:
        r = _target_frame_residual(src, dst, warp, cfg.epsilon)
        save_image(Image(np.clip(r, 0.0, 255.0)), args.dump_diff)
        print(f"wrote {args.dump_diff}")
    return 0


def _cmd_diff(args, cfg: RunConfig) -> int:
    src = load_image(args.source)
    dst = load_image(args.target)
    matches = read_correspondences(args.matches)
    warp = ApapWarp(matches, cfg.warp_config())
    r = _target_frame_residual(src, dst, warp, cfg.epsilon)
    save_image(Image(np.clip(r, 0.0, 255.0)), args.out)
    print(f"residual_nonzero = {int(np.count_nonzero(r))}")
    print(f"wrote {args.out}")
    return 0


def _cmd_bench(args, cfg: RunConfig) -> int:
    from . import report

    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    scene = gen_two_plane_pair(args.width, args.height, seed=cfg.seed, parallax_px=args.parallax)
    save_scene(scene, outdir)
    matches = ground_truth_matches(
        scene, count=args.matches_count, seed=cfg.seed + 1, plane=1, margin=12.0
    )

    frame = Rect(x0=0, y0=0, width=scene.target.width, height=scene.target.height)
    gray_src = to_grayscale(scene.source)
    gray_dst = to_grayscale(scene.target)

    h_global = dlt_homography(matches)
    warped_g, mask_g = warp_image_homography(gray_src, h_global, frame)
    rmse_global = alignment_rmse(warped_g, gray_dst, mask_g)

    warp_a = ApapWarp(matches, cfg.warp_config())
    warped_a, mask_a = warp_image(gray_src, warp_a, frame)
    rmse_apap = alignment_rmse(warped_a, gray_dst, mask_a)

    final, warp_ci, state = adapt_warp(
        scene.source, scene.target, matches, cfg.warp_config(), cfg.search_config(), cfg.adapt_config()
    )
    warped_ci, mask_ci = warp_image(gray_src, warp_ci, frame)
    rmse_ci = alignment_rmse(warped_ci, gray_dst, mask_ci)

    rows = [
        {"method": "global_h", "rmse": rmse_global, "accepted": 0, "tried": 0},
        {"method": "apap", "rmse": rmse_apap, "accepted": 0, "tried": 0},
        {
            "method": "apap_ci",
            "rmse": rmse_ci,
            "accepted": state.accepted_count,
            "tried": len(state.log),
        },
    ]
    print("method rmse insertions_accepted insertions_tried")
    for row in rows:
        print(f"{row['method']} {row['rmse']:.6f} {row['accepted']} {row['tried']}")
    if rmse_apap > 0:
        print(f"ratio_ci_over_apap = {rmse_ci / rmse_apap:.6f}")

    report.write_rmse_csv(rows, os.path.join(outdir, "rmse.csv"))
    write_insertion_log(state, os.path.join(outdir, "insertions.csv"))
    write_correspondences(final, os.path.join(outdir, "matches_final.csv"))

    residual_panels = []
    for name, warped, mask in (
        ("global_h", warped_g, mask_g),
        ("apap", warped_a, mask_a),
        ("apap_ci", warped_ci, mask_ci),
    ):
        diff = np.zeros(mask.shape)
        diff[mask] = np.abs(warped.data[mask] - gray_dst.data[mask])
        save_image(Image(np.clip(diff, 0.0, 255.0)), os.path.join(outdir, f"residual_{name}.png"))
        residual_panels.append((name, diff))

    for name, warp_obj in (("apap", warp_a), ("apap_ci", warp_ci)):
        canvas = canvas_bounds(warp_obj, (scene.source.width, scene.source.height), (scene.target.width, scene.target.height))
        warped, mask_w = warp_image(scene.source, warp_obj, canvas)
        placed, mask_t = place_on_canvas(scene.target, canvas)
        labeling = optimize_seam(warped, placed, mask_w, mask_t)
        comp = blend(warped, placed, mask_w, mask_t, labeling=labeling)
        save_image(comp, os.path.join(outdir, f"composite_{name}.png"))
    canvas_g = _homography_canvas(h_global, scene)
    warped, mask_w = warp_image_homography(scene.source, h_global, canvas_g)
    placed, mask_t = place_on_canvas(scene.target, canvas_g)
    labeling = optimize_seam(warped, placed, mask_w, mask_t)
    comp = blend(warped, placed, mask_w, mask_t, labeling=labeling)
    save_image(comp, os.path.join(outdir, "composite_global_h.png"))

    report.plot_rmse_bar(rows, os.path.join(outdir, "figure_rmse.png"))
    report.plot_residual_panels(residual_panels, os.path.join(outdir, "figure_residuals.png"))
    report.plot_insertion_history(state, os.path.join(outdir, "figure_insertions.png"), cfg.omega)
    print(f"wrote {outdir}")
    return 0


def _homography_canvas(h: np.ndarray, scene) -> Rect:
    w, hgt = scene.source.width, scene.source.height
    corners = np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [0.0, hgt - 1.0], [w - 1.0, hgt - 1.0]]
    )
    pts, valid = apply_homography_many(h, corners)
    pts = pts[valid]
    x0 = int(np.floor(min(pts[:, 0].min(), 0.0)))
    y0 = int(np.floor(min(pts[:, 1].min(), 0.0)))
    x1 = int(np.ceil(max(pts[:, 0].max(), scene.target.width - 1.0)))
    y1 = int(np.ceil(max(pts[:, 1].max(), scene.target.height - 1.0)))
    return Rect(x0=x0, y0=y0, width=x1 - x0 + 1, height=y1 - y0 + 1)


def run_cli(argv) -> int:
    """Parse argv (excluding the program name) and run one subcommand."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1

    try:
        cfg = merge_config(args)
        print_effective_config(cfg)
        if args.command == "stitch":
            return _cmd_stitch(args, cfg)
        if args.command == "diff":
            return _cmd_diff(args, cfg)
        return _cmd_bench(args, cfg)
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> int:
    return run_cli(sys.argv[1:] if argv is None else list(argv))


if __name__ == "__main__":
    sys.exit(main())
