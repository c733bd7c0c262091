"""Self-supervised stereo pseudo-labeling and iterative refinement toolkit."""

from .pyramid import (
    DisparityMap,
    Image,
    PyramidLevel,
    PyramidSpec,
    build_dual_pyramids,
    colorize_disparity,
    flip_pair,
    load_disparity,
    resize_bilinear,
    save_disparity,
)
from .matcher import ConfidenceMap, CostKind, Direction, MatchParams, block_match, match_both_views
from .pvm import (
    ConsistencyField,
    VotingThresholds,
    align_to_full_res,
    consistency_stats,
    lrdcc,
    pvm_pipeline,
    select_semidense,
    vote,
)
from .optcore import (
    CostVolumePyramid,
    FeatureMap,
    GruState,
    GruWeights,
    build_cost_volume,
    gru_step,
    lookup,
    optstereo_forward,
    pool_pyramid,
    toy_features,
    upsample_disparity,
)
from .losses import (
    LossConfig,
    guiding_loss,
    huber,
    reconstruction_loss,
    smoothness_loss,
    ssim3,
    total_loss,
    warp_right_to_left,
)
from .harness import SyntheticScene, aepe, density, f1_3px, make_rds

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
