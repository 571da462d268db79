from .encoders import (CoarseEncoder, EncoderConfig, FineEncoder, SourceEncoder, concat_features,
                       dump_feature_map, load_feature_dump, split_features)
from .lifting import (META_NAMES, LiftPlan, SplatPlan, TargetLayer, VertexFeatureCloud, apply_lift,
                      apply_splat, feature_rows, lift_features, plan_lift, plan_splat, retarget,
                      source_view_metadata, splat_to_target)
