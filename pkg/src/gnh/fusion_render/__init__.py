from .fusion import (FusedFeatureMap, FusionBlock, FusionConfig, FusionTransformer, PixelTokenSet,
                     build_tokens, fuse)
from .renderer import RendererConfig, ResBlock, ResUNet, to_image
