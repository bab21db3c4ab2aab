"""Vision-transformer backbone and reliability head.

Weights load from a local checkpoint when provided; otherwise the model is
initialized from a fixed seed so exports stay deterministic (features are
then non-semantic, which is fine for format/parity testing and CI). The
reliability head only runs when its checkpoint is supplied; without one the
exporter emits the documented uniform-1.0 fallback map.
"""
from dataclasses import dataclass

import torch
import torch.nn as nn

PATCH = 14

CONFIGS = {
    "tiny": dict(dim=32, depth=2, heads=2),
    "vitb": dict(dim=768, depth=12, heads=12),
    "vitl": dict(dim=1024, depth=24, heads=16),
}


@dataclass
class BackboneConfig:
    name: str = "vitb"
    depth_override: int = 0  # trim depth for fast shape-true runs
    seed: int = 0

    @property
    def dim(self):
        return CONFIGS[self.name]["dim"]

    @property
    def depth(self):
        return self.depth_override or CONFIGS[self.name]["depth"]

    @property
    def heads(self):
        return CONFIGS[self.name]["heads"]


class Block(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * 4), nn.GELU(),
                                 nn.Linear(dim * 4, dim))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class ViT(nn.Module):
    """Patch-14 transformer returning the class token, the final patch grid,
    and intermediate per-block grids for the reliability head."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        dim = config.dim
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=PATCH, stride=PATCH)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.blocks = nn.ModuleList(Block(dim, config.heads)
                                    for _ in range(config.depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, images):
        feats = self.patch_embed(images)          # (B, D, H_p, W_p)
        b, d, h_p, w_p = feats.shape
        x = feats.flatten(2).transpose(1, 2)       # (B, n, D)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1)
        taps = []
        for block in self.blocks:
            x = block(x)
            taps.append(x[:, 1:].transpose(1, 2).reshape(b, d, h_p, w_p))
        x = self.norm(x)
        cls_out = x[:, 0]
        grid = x[:, 1:].transpose(1, 2).reshape(b, d, h_p, w_p)
        return cls_out, grid, taps


class ReliabilityHead(nn.Module):
    """Merges three intermediate scales into an H/8 x W/8 reliability map.

    Each tap is bilinearly resized to the target resolution, projected to 64
    channels and summed; a three-layer fusion block and a sigmoid head
    regress per-position match reliability.
    """

    def __init__(self, dim, taps=3):
        super().__init__()
        self.proj = nn.ModuleList(nn.Conv2d(dim, 64, 1) for _ in range(taps))
        self.fuse = nn.Sequential(
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU(),
            nn.Conv2d(64, 64, 3, padding=1), nn.ReLU())
        self.head = nn.Conv2d(64, 1, 3, padding=1)

    def forward(self, taps, out_h, out_w):
        merged = None
        for proj, tap in zip(self.proj, taps):
            resized = nn.functional.interpolate(tap, size=(out_h, out_w),
                                                mode="bilinear",
                                                align_corners=True)
            part = proj(resized)
            merged = part if merged is None else merged + part
        return torch.sigmoid(self.head(self.fuse(merged)))[:, 0]


def build_backbone(config, checkpoint=None):
    torch.manual_seed(config.seed)
    model = ViT(config)
    if checkpoint:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def build_reliability_head(dim, checkpoint, taps=3):
    head = ReliabilityHead(dim, taps=taps)
    state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    head.load_state_dict(state)
    head.eval()
    return head


def pick_taps(depth, count=3):
    """Evenly spaced block indices used as multi-scale intermediates."""
    if depth <= count:
        return list(range(depth)) + [depth - 1] * (count - depth)
    step = depth // count
    return [step - 1, 2 * step - 1, depth - 1]
