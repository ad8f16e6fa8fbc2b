"""Hierarchical attention matting network and its patch discriminator.

Resolution contract for an ``H x W`` input (both divisible by 8)::

    block0  stem, stride 2          H/2
    block1  stride 1                H/2   initial appearance cues
    block2  stride 2                H/4   secondary appearance cues
    block3  stride 2                H/8
    block4  stride 1, dilated       H/8   -> ASPP -> x2 -> H/4 pyramid
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import ShapeError


@dataclass
class BackboneConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128, 128)
    strides: tuple[int, ...] = (2, 1, 2, 2, 1)
    block4_dilation: int = 2
    groups: int = 1
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    pyramid_width: int = 128
    reduction: int = 4
    decoder_widths: tuple[int, int] = (64, 32)
    attention_width: int = 32

    def __post_init__(self):
        # configs loaded from json/yaml arrive with lists
        for name in ("widths", "strides", "aspp_rates", "decoder_widths"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.widths) != 5 or len(self.strides) != 5:
            raise ValueError("backbone needs exactly 5 blocks")
        if self.strides[1] != 1 or self.strides[4] != 1:
            raise ValueError("block1 and block4 strides must be 1")
        if self.strides[0] * self.strides[2] * self.strides[3] != 8:
            raise ValueError("blocks 0, 2 and 3 must reduce resolution by 8 overall")
        if len(self.decoder_widths) != 2:
            raise ValueError("decoder_widths needs two entries")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def conv_bn_relu(cin, cout, k=3, stride=1, dilation=1, groups=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, stride=stride, padding=dilation * (k // 2),
                  dilation=dilation, groups=groups, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ResBlock(nn.Module):
    """Two 3x3 convolutions with a projected shortcut when the shape changes."""

    def __init__(self, cin, cout, stride=1, dilation=1, groups=1):
        super().__init__()
        g = groups if cin % groups == 0 and cout % groups == 0 else 1
        self.conv1 = conv_bn_relu(cin, cout, stride=stride, dilation=dilation, groups=g)
        self.conv2 = nn.Sequential(
            nn.Conv2d(cout, cout, 3, padding=dilation, dilation=dilation, groups=g, bias=False),
            nn.BatchNorm2d(cout),
        )
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(self.conv2(self.conv1(x)) + identity)


class Backbone(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w, s = cfg.widths, cfg.strides
        self.block0 = conv_bn_relu(3, w[0], stride=s[0])
        self.block1 = ResBlock(w[0], w[1], stride=s[1], groups=cfg.groups)
        self.block2 = ResBlock(w[1], w[2], stride=s[2], groups=cfg.groups)
        self.block3 = ResBlock(w[2], w[3], stride=s[3], groups=cfg.groups)
        self.block4 = ResBlock(w[3], w[4], stride=s[4], dilation=cfg.block4_dilation,
                               groups=cfg.groups)

    def forward(self, x) -> dict[str, torch.Tensor]:
        _check_divisible(x)
        x = self.block0(x)
        b1 = self.block1(x)
        b2 = self.block2(b1)
        b4 = self.block4(self.block3(b2))
        return {"block1": b1, "block2": b2, "block4": b4}


class ASPP(nn.Module):
    """Parallel dilated 3x3 branches plus an image-level pooling branch."""

    def __init__(self, cin, cout, rates=(1, 6, 12, 18)):
        super().__init__()
        self.branches = nn.ModuleList(
            conv_bn_relu(cin, cout, 3, dilation=r) for r in rates
        )
        # no BatchNorm on the 1x1 pooled branch: batch statistics are degenerate there
        self.image_pool = nn.Conv2d(cin, cout, 1)
        self.project = conv_bn_relu(cout * (len(rates) + 1), cout, 1)

    def forward(self, x):
        feats = [branch(x) for branch in self.branches]
        pooled = F.relu(self.image_pool(F.adaptive_avg_pool2d(x, 1)))
        feats.append(pooled.expand(-1, -1, x.shape[2], x.shape[3]))
        return self.project(torch.cat(feats, dim=1))


class ChannelAttention(nn.Module):
    """Sigmoid-gated channel reweighting from globally max-pooled features."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
        )

    def weights(self, x):
        """Per-channel attention weights, shape ``(N, C)``."""
        pooled = F.adaptive_max_pool2d(x, 1).flatten(1)
        return torch.sigmoid(self.mlp(pooled))

    def forward(self, x):
        return x * self.weights(x)[:, :, None, None]


class SpatialAttention(nn.Module):
    """Single-channel attention map from guidance features, applied to cues.

    A shared 3x3 convolution feeds two directional paths (1x7 then 7x1, and
    7x1 then 1x7); their concatenation is projected by a 1x1 convolution and
    squashed by a sigmoid.
    """

    def __init__(self, guide_channels, width=32):
        super().__init__()
        self.stem = nn.Conv2d(guide_channels, width, 3, padding=1)
        self.h1 = nn.Conv2d(width, width, (1, 7), padding=(0, 3))
        self.v1 = nn.Conv2d(width, width, (7, 1), padding=(3, 0))
        self.v2 = nn.Conv2d(width, width, (7, 1), padding=(3, 0))
        self.h2 = nn.Conv2d(width, width, (1, 7), padding=(0, 3))
        self.fuse = nn.Conv2d(2 * width, 1, 1)

    def attention_map(self, guidance):
        g = self.stem(guidance)
        s1 = self.v1(self.h1(g))
        s2 = self.h2(self.v2(g))
        return torch.sigmoid(self.fuse(torch.cat([s1, s2], dim=1)))

    def forward(self, guidance, cues):
        if guidance.shape[2:] != cues.shape[2:]:
            raise ShapeError(
                f"guidance {tuple(guidance.shape[2:])} and cues {tuple(cues.shape[2:])} "
                "must share spatial size"
            )
        return self.attention_map(guidance) * cues


class ModelOutput(NamedTuple):
    alpha: torch.Tensor
    sentry_alpha: torch.Tensor


def up2(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def _check_divisible(x):
    if x.dim() != 4:
        raise ShapeError(f"expected an NxCxHxW batch, got {tuple(x.shape)}")
    h, w = x.shape[2:]
    if h % 8 or w % 8:
        raise ShapeError(f"input {h}x{w} is not divisible by 8")


class MattingNet(nn.Module):
    def __init__(self, cfg: BackboneConfig | None = None):
        super().__init__()
        self.cfg = cfg or BackboneConfig()
        cfg = self.cfg
        w = cfg.widths
        p = cfg.pyramid_width
        d1, d2 = cfg.decoder_widths
        self.backbone = Backbone(cfg)
        self.aspp = ASPP(w[4], p, cfg.aspp_rates)
        self.channel_attention = ChannelAttention(p, cfg.reduction)
        self.sentry_head = nn.Conv2d(p, 1, 3, padding=1)
        self.sa_secondary = SpatialAttention(p, cfg.attention_width)
        self.fuse_secondary = conv_bn_relu(p + w[2], d1)
        self.sa_initial = SpatialAttention(d1, cfg.attention_width)
        self.fuse_initial = conv_bn_relu(d1 + w[1], d2)
        self.alpha_head = nn.Conv2d(d2, 1, 3, padding=1)

    def forward(self, image) -> ModelOutput:
        feats = self.backbone(image)
        pyramid = up2(self.aspp(feats["block4"]))
        distilled = self.channel_attention(pyramid)
        sentry = torch.sigmoid(self.sentry_head(distilled))

        cues2 = self.sa_secondary(distilled, feats["block2"])
        guide = up2(self.fuse_secondary(torch.cat([distilled, cues2], dim=1)))
        cues1 = self.sa_initial(guide, feats["block1"])
        fused = up2(self.fuse_initial(torch.cat([guide, cues1], dim=1)))
        alpha = torch.sigmoid(self.alpha_head(fused))
        return ModelOutput(alpha, sentry)


class PatchDiscriminator(nn.Module):
    """Patch classifier over the image concatenated with an alpha matte."""

    def __init__(self, widths=(32, 64, 128)):
        super().__init__()
        layers, cin = [], 4
        for cout in widths:
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, image, alpha):
        if image.shape[0] != alpha.shape[0] or image.shape[2:] != alpha.shape[2:]:
            raise ShapeError(
                f"image {tuple(image.shape)} and alpha {tuple(alpha.shape)} do not match"
            )
        return torch.sigmoid(self.net(torch.cat([image, alpha], dim=1)))


def to_tensor(image) -> torch.Tensor:
    """``(H, W, 3)`` or ``(H, W)`` array to a ``(1, C, H, W)`` float tensor."""
    t = torch.as_tensor(image, dtype=torch.float32)
    if t.dim() == 2:
        t = t[None]
    else:
        t = t.permute(2, 0, 1)
    return t[None].contiguous()
