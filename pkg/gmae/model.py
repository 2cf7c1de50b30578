"""ViT encoder over visible patches and a query-token decoder emitting Gaussians."""

from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
from timm.models.vision_transformer import Block

from .errors import ConfigError, InvalidInputError
from .gaussians import RAW_DIM, ScaleClamp
from .patches import MaskSpec, PatchGrid, patchify
from .pos_embed import get_2d_sincos_pos_embed

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    encoder_width: int = 192
    encoder_depth: int = 6
    encoder_heads: int = 3
    decoder_width: int = 256
    decoder_depth: int = 4
    decoder_heads: int = 8
    num_queries: int = 512
    mlp_ratio: float = 4.0
    scale_clamp: float = 1.0
    precision: str = "float64"

    def __post_init__(self):
        if self.image_size < 1 or self.patch_size < 1 or self.image_size % self.patch_size:
            raise ConfigError("patch_size", f"{self.patch_size} must divide image_size {self.image_size}")
        for prefix in ("encoder", "decoder"):
            width = getattr(self, f"{prefix}_width")
            heads = getattr(self, f"{prefix}_heads")
            if heads < 1 or width % heads:
                raise ConfigError(f"{prefix}_heads", f"{heads} must divide {prefix}_width {width}")
            if getattr(self, f"{prefix}_depth") < 1:
                raise ConfigError(f"{prefix}_depth", "must be at least 1")
        if self.encoder_width % 4:
            raise ConfigError("encoder_width", f"{self.encoder_width} must be a multiple of 4 (sin-cos embedding)")
        if self.num_queries < 1:
            raise ConfigError("num_queries", f"must be at least 1, got {self.num_queries}")
        if not self.scale_clamp > 0:
            raise ConfigError("scale_clamp", f"must be positive, got {self.scale_clamp}")
        if self.precision not in DTYPES:
            raise ConfigError("precision", f"must be one of {sorted(DTYPES)}, got {self.precision!r}")

    @property
    def grid(self) -> PatchGrid:
        return PatchGrid(self.image_size, self.image_size, self.patch_size)

    @property
    def clamp(self) -> ScaleClamp:
        return ScaleClamp(self.scale_clamp)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.precision]


# Named configurations. "desk" is the CPU-scale default; "tiny" is a ViT-Tiny
# encoder (12 x 192, 3 heads); "gradcheck" is small enough for finite
# differences on 16 x 16 inputs.
MODEL_PRESETS: dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "tiny": ModelConfig(encoder_depth=12),
    "gradcheck": ModelConfig(
        image_size=16, patch_size=4,
        encoder_width=32, encoder_depth=2, encoder_heads=2,
        decoder_width=32, decoder_depth=1, decoder_heads=2,
        num_queries=8,
    ),
}


def model_preset(name: str, **overrides) -> ModelConfig:
    if name not in MODEL_PRESETS:
        raise ConfigError("model", f"unknown preset {name!r}; choose from {sorted(MODEL_PRESETS)}")
    return replace(MODEL_PRESETS[name], **overrides)


class GaussianMAE(nn.Module):
    """
    Masked autoencoder whose decoder predicts one raw Gaussian per query token.

    The decoder sequence is the projected encoder latents followed by the k
    learnable query tokens; only the query outputs are kept. Masked patches
    are never reinserted, and query tokens carry no position embedding.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.grid = config.grid
        grid = self.grid

        self.patch_embed = nn.Linear(grid.token_dim, config.encoder_width)
        pos = get_2d_sincos_pos_embed(config.encoder_width, grid.rows, grid.cols)
        self.register_buffer("pos_embed", torch.from_numpy(pos).float().unsqueeze(0))
        self.blocks = nn.ModuleList([
            Block(config.encoder_width, config.encoder_heads, config.mlp_ratio, qkv_bias=True, norm_layer=nn.LayerNorm)
            for _ in range(config.encoder_depth)
        ])
        self.norm = nn.LayerNorm(config.encoder_width)

        self.decoder_embed = nn.Linear(config.encoder_width, config.decoder_width)
        self.query_tokens = nn.Parameter(torch.zeros(1, config.num_queries, config.decoder_width))
        self.decoder_blocks = nn.ModuleList([
            Block(config.decoder_width, config.decoder_heads, config.mlp_ratio, qkv_bias=True, norm_layer=nn.LayerNorm)
            for _ in range(config.decoder_depth)
        ])
        self.decoder_norm = nn.LayerNorm(config.decoder_width)
        self.decoder_pred = nn.Linear(config.decoder_width, RAW_DIM)

        self.initialize_weights()
        self.to(config.dtype)

    def initialize_weights(self):
        torch.nn.init.normal_(self.query_tokens, std=0.02)
        self.apply(self._init_weights)

    def _init_weights(self, m):
        if isinstance(m, nn.Linear):
            torch.nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.constant_(m.bias, 0)
        elif isinstance(m, nn.LayerNorm):
            nn.init.constant_(m.bias, 0)
            nn.init.constant_(m.weight, 1.0)

    def encode(self, tokens: torch.Tensor, positions: torch.Tensor) -> torch.Tensor:
        """
        Encode visible tokens.

        Args:
            tokens: (B, n, P*P*3) visible patch tokens
            positions: (B, n) their indices in the full patch grid

        Returns:
            (B, n, encoder_width) latents
        """
        if tokens.shape[:2] != positions.shape:
            raise InvalidInputError(
                f"{tokens.shape[1]} tokens but positions of shape {tuple(positions.shape)}"
            )
        x = self.patch_embed(tokens) + self.pos_embed[0, positions]
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, n, encoder_width) latents to (B, k, 14) raw Gaussians."""
        x = self.decoder_embed(latents)
        queries = self.query_tokens.expand(x.shape[0], -1, -1)
        x = torch.cat([x, queries], dim=1)
        for blk in self.decoder_blocks:
            x = blk(x)
        x = self.decoder_norm(x)
        x = self.decoder_pred(x)
        return x[:, -self.config.num_queries:]

    def forward(self, images: torch.Tensor, masks: list[MaskSpec]) -> torch.Tensor:
        """(B, H, W, 3) images and one mask each to (B, k, 14) raw Gaussians."""
        if len(masks) != images.shape[0]:
            raise InvalidInputError(f"{images.shape[0]} images but {len(masks)} masks")
        tokens = patchify(images, self.grid)
        visible = torch.from_numpy(np.stack([m.visible for m in masks])).long().to(images.device)
        index = visible.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
        kept = torch.gather(tokens, 1, index)
        return self.decode(self.encode(kept, visible))


def parameter_store(model: GaussianMAE) -> dict[str, torch.Tensor]:
    """Named tensors of a model: trainable parameters plus the fixed position embedding."""
    return dict(model.state_dict())


def build_model(config: ModelConfig, seed: int) -> GaussianMAE:
    """Construct a model with deterministic initialization."""
    torch.manual_seed(seed)
    return GaussianMAE(config)


def predict_raw(model: GaussianMAE, images: np.ndarray, masks: list[MaskSpec]) -> np.ndarray:
    """Inference on (B, H, W, 3) numpy images; returns (B, k, 14) float64 raw vectors."""
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.ascontiguousarray(images)).to(model.config.dtype)
        return model(x, masks).to(torch.float64).numpy()
