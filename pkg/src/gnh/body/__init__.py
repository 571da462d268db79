from .model import (SMPL_NUM_JOINTS, SMPL_NUM_VERTICES, SMPL_PARENTS, ModelError, Pose, PoseError,
                    PosedMesh, SkinnedBodyModel, canonical_rotvec, compute_normals, forward_kinematics,
                    icosphere, lbs_pose, rodrigues, rotation_to_rotvec, skinning_transforms, with_normals)
from .distance import AlignmentError, pose_distance, procrustes_distance, rank_by_pose, torso_angle
from .synth import BodyConfig, arm_config, segment_of_vertex, synthesize_body
from .io import load_body_model, save_body_model
