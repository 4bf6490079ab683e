"""binpick: affordance-based bin picking and recognition from RGB-D data."""

from .affordance import (AffordanceMap, GraspProposal, GripperParams,
                         PrimitiveKind, SuctionProposal, grasp_baseline,
                         load_learned_map, make_grasp_proposals,
                         make_suction_proposals, save_affordance_map,
                         suction_baseline)
from .heightmap import (BinGeometry, Heightmap, RotationSet, build_heightmap,
                        fill_missing_heights, pixel_to_world, rotate_heightmap)
from .planner import (AttemptRecord, PlannerConfig, PlannerState,
                      effective_gamma, run_stow_episode, select_action,
                      speed_pick_batch, suppress)
from .recognition import (EmbeddingModel, FeatureVector, ProductCatalog,
                          RecognitionConfig, recognize, recollect,
                          select_anchor, train_embedding, train_knet,
                          triplet_ratio_loss)
from .rgbd import (CameraIntrinsics, CameraPose, IcpResult, PointCloud,
                   RgbdFrame, RigidTransform, background_subtract,
                   estimate_normals, fill_depth_holes, icp_register,
                   project_to_cloud)

__version__ = "0.1.0"
