"""Dynamic-object segmentation and static-only motion estimation for RGB-D tracks."""
from .errors import *  # noqa: F401,F403
from .geometry import (CameraIntrinsics, NoiseParams, Observation, PointCovariance, PoseSE3,
                       backproject, depth_mixture, depth_stddev, edge_covariance,
                       point_covariance, transform_point)
from .graph import (ComponentLabeling, CorrelationEdge, CorrelationGraph, RansacParams,
                    build_delaunay, classify_components, connected_components, edge_residual,
                    prune_edges)
from .localmap import (Keyframe, LocalMap, MapPoint, insert_keyframe, static_weight,
                       update_point_status)
from .estimation import Match, PoseEstimate, ransac_pose, refine_pose, track_frame
from .simulator import (GroundTruth, SceneConfig, generate_scene, project_with_noise,
                        scene_observations)
from .evaluation import (MetricReport, Trajectory, ate_rmse, read_tum_trajectory, rpe_rmse,
                         segmentation_metrics, write_tum_trajectory)
from .pipeline import RunConfig, run_pipeline, run_sequence

__all__ = ["CameraIntrinsics", "NoiseParams", "Observation", "PointCovariance", "PoseSE3",
           "backproject", "depth_mixture", "depth_stddev", "edge_covariance",
           "point_covariance", "transform_point", "ComponentLabeling", "CorrelationEdge",
           "CorrelationGraph", "RansacParams", "build_delaunay", "classify_components",
           "connected_components", "edge_residual", "prune_edges", "Keyframe", "LocalMap",
           "MapPoint", "insert_keyframe", "static_weight", "update_point_status", "Match",
           "PoseEstimate", "ransac_pose", "refine_pose", "track_frame", "GroundTruth",
           "SceneConfig", "generate_scene", "project_with_noise", "MetricReport",
           "Trajectory", "ate_rmse", "read_tum_trajectory", "rpe_rmse",
           "segmentation_metrics", "write_tum_trajectory", "RunConfig", "run_pipeline",
           "run_sequence", "scene_observations"]

__version__ = "0.1.0"
