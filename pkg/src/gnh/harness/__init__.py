from .bench import STAGES, bench, time_render
from .metrics import (PSNR_CAP, MetricsError, MetricsReport, average_error, compute_metrics, lpips_proxy, psnr,
                      ssim)
from .scene import (FORMAT, MotionConfig, Scene, SceneError, generate_synthetic_scene, load_image, load_scene,
                    motion_pose, procedural_albedo, quantize, render_ground_truth, save_image, save_scene,
                    scene_camera)
