"""Parcellation-free whole-brain tractography analysis.

Pipeline: resample streamlines, build a groupwise spectral embedding space
over landmark fibers, extend new fibers into it, rasterize per-fiber features
onto a 2D grid as multi-channel images, and back-project transformer
attention scores to discriminative fibers. Includes a synthetic-cohort
generator and a Welch t-map for representation-level group checks.
"""

from .attention import (
    AttentionStack,
    DiscriminativeSet,
    backproject,
    groupwise_map,
    load_attention,
    rollout,
    rollout_joint,
    save_attention,
    threshold,
    upsample,
)
from .backends import get_backend, set_backend, set_threads
from .embedding import (
    EmbeddingCoords,
    EmbeddingSpace,
    build_space,
    embed,
    full_embedding_oracle,
    landmark_coords,
    load_space,
    save_space,
)
from .fibers import (
    FiberBundle,
    FiberFeatures,
    Hemisphere,
    Streamline,
    bundle_from_json,
    classify_hemisphere,
    load_bundle,
    make_bundle,
    points_array,
    resample,
    resample_bundle,
    save_bundle,
    split_by_hemisphere,
)
from .image import (
    TractoImage,
    augment,
    discretize,
    load_image,
    load_pixel_map,
    make_image,
    rasterize,
    save_image,
    save_pgm,
    save_pixel_map,
    voxel_mpfd_report,
)
from .metrics import (
    AffinityMatrix,
    DistanceMatrix,
    affinity,
    distance_matrix,
    mcp_distance,
    mpfd,
    pairwise,
)
from .synth import (
    BundleGeometry,
    SyntheticCohort,
    group_difference_map,
    load_cohort,
    make_bundles,
    make_groups,
    save_cohort,
)

__version__ = "0.1.0"
