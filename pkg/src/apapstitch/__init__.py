"""Locally projective image alignment with residual-driven refinement.

The package fits a spatially varying homography field to sparse
correspondences, searches for new correspondences by descending a
windowed intensity cost through the warp's eigenvector derivative, grows
the match set where gated residuals say alignment is still poor, and
composites the result along an exact minimum-cost seam.
"""

from .adapt import (
    AdaptConfig,
    AdaptState,
    InsertionRecord,
    adapt_warp,
    distance_transform,
    residual_map,
    saliency_map,
    select_candidate,
    write_insertion_log,
)
from .composite import (
    SOURCE,
    TARGET,
    Rect,
    SeamLabeling,
    blend,
    canvas_bounds,
    optimize_seam,
    place_on_canvas,
    seam_energy,
    warp_image,
    warp_image_homography,
)
from .errors import (
    ConfigFileError,
    CorrespondenceFormatError,
    DataError,
    DegenerateSolveError,
    DuplicateSourceError,
    EmptyOverlapError,
    IllConditionedJacobianError,
    ImageFormatError,
    InsufficientDataError,
    NoConsensusError,
    NumericalError,
    OutOfBoundsError,
    PointAtInfinityError,
    StepFailedError,
    StitchError,
    UnreliableWindowError,
)
from .homography import (
    Conditioning,
    Correspondence,
    apply_homography,
    apply_homography_many,
    canonicalize_homography,
    condition_points,
    dlt_homography,
    monomial_rows,
    ransac_homography,
    stack_monomials,
    transfer_errors,
)
from .image import (
    Image,
    gradient,
    load_image,
    normalize_colors,
    sample_bilinear,
    sample_bilinear_many,
    save_image,
    to_grayscale,
)
from .matching import (
    CorrespondenceSet,
    harris_corners,
    match_ncc,
    read_correspondences,
    write_correspondences,
)
from .search import (
    SearchConfig,
    SearchResult,
    augmented_solve,
    matching_cost,
    search_correspondence,
    warp_jacobian,
)
from .synth import (
    TwoPlaneScene,
    alignment_rmse,
    gen_two_plane_pair,
    ground_truth_flow,
    ground_truth_flow_many,
    ground_truth_matches,
    save_scene,
)
from .warp import ApapWarp, GridCache, LocalHomography, WarpConfig

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "AdaptState",
    "ApapWarp",
    "Conditioning",
    "ConfigFileError",
    "Correspondence",
    "CorrespondenceFormatError",
    "CorrespondenceSet",
    "DataError",
    "DegenerateSolveError",
    "DuplicateSourceError",
    "EmptyOverlapError",
    "GridCache",
    "IllConditionedJacobianError",
    "Image",
    "ImageFormatError",
    "InsertionRecord",
    "InsufficientDataError",
    "LocalHomography",
    "NoConsensusError",
    "NumericalError",
    "OutOfBoundsError",
    "PointAtInfinityError",
    "Rect",
    "SOURCE",
    "SeamLabeling",
    "SearchConfig",
    "SearchResult",
    "StepFailedError",
    "StitchError",
    "TARGET",
    "TwoPlaneScene",
    "UnreliableWindowError",
    "WarpConfig",
    "adapt_warp",
    "alignment_rmse",
    "apply_homography",
    "apply_homography_many",
    "augmented_solve",
    "blend",
    "canonicalize_homography",
    "canvas_bounds",
    "condition_points",
    "distance_transform",
    "dlt_homography",
    "gen_two_plane_pair",
    "gradient",
    "ground_truth_flow",
    "ground_truth_flow_many",
    "ground_truth_matches",
    "harris_corners",
    "load_image",
    "match_ncc",
    "matching_cost",
    "monomial_rows",
    "normalize_colors",
    "optimize_seam",
    "place_on_canvas",
    "ransac_homography",
    "read_correspondences",
    "residual_map",
    "saliency_map",
    "sample_bilinear",
    "sample_bilinear_many",
    "save_image",
    "save_scene",
    "seam_energy",
    "search_correspondence",
    "select_candidate",
    "stack_monomials",
    "to_grayscale",
    "transfer_errors",
    "warp_image",
    "warp_image_homography",
    "warp_jacobian",
    "write_correspondences",
    "write_insertion_log",
]
