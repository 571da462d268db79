from .losses import (LOSS_NAMES, Discriminator, LossWeights, PerceptualExtractor, disc_loss, downsample,
                     loss_adversarial_g, loss_antibias, loss_color, loss_perceptual, total_loss)
from .model import GNH, Frame, GNHConfig, PlanCache, Subject, image_tensor, images_to_tensor, render_target
from .trainer import (CSV_COLUMNS, SamplingError, TrainConfig, Trainer, format_config, load_config,
                      parse_config, select_sources, train)
