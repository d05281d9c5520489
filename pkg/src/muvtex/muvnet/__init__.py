from .attention import GeoAttention, geo_sdpa
from .config import ModelConfig
from .lora import LoRALinear
from .model import GROUPS, MUVBlock, MUVNet, patchify, patchify_views, token_axis_index, unpatchify, unpatchify_views
from .rope import apply_rope, freq_table, rope_3d

__all__ = [
    "GROUPS", "GeoAttention", "LoRALinear", "MUVBlock", "MUVNet", "ModelConfig", "apply_rope", "freq_table",
    "geo_sdpa", "patchify", "patchify_views", "rope_3d", "token_axis_index", "unpatchify", "unpatchify_views",
]
