from .camera import NEAR, BehindCameraError, Camera, CameraError, intrinsics, look_at, orbit_camera
from .sampling import bilinear_taps, image_to_feature, sample_bilinear
from .raster import Raster, rasterize, rasterize_depth
from .visibility import (DEPTH_EPS, silhouette_vertices, vertex_visibility, visibility_oracle,
                         visibility_oracle_all)
