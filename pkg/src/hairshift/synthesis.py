"""Hair synthesis networks: mask-region estimator, region-normalized
generator, multi-scale conditional discriminator.

The generator's normalization standardizes features separately over the
inpaint region and its complement, then modulates with spatial ``gamma`` and
``beta`` maps predicted from the 6-channel condition stack
``warped-hair-mask | inpaint-mask | 4-channel semantic inpaint mask``.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import group_count

MDIV_CHANNELS = 6  # hair mask + inpaint mask + 4 semantic channels
SIM_CLASSES = 4    # face, clothes, background, unknown


class SimEstimator(nn.Module):
    """Splits the inpaint region into face / clothes / background / unknown.

    Two stride-2 down blocks, a middle convolution, two up blocks (each block
    conv + batch norm + ReLU), and a 4-way softmax head masked to the inpaint
    region.
    """

    def __init__(self, width=16):
        super().__init__()
        w = width
        self.down1 = nn.Sequential(nn.Conv2d(5, w, 3, 2, 1), nn.BatchNorm2d(w), nn.ReLU())
        self.down2 = nn.Sequential(nn.Conv2d(w, 2 * w, 3, 2, 1), nn.BatchNorm2d(2 * w), nn.ReLU())
        self.mid = nn.Sequential(nn.Conv2d(2 * w, 2 * w, 3, 1, 1), nn.BatchNorm2d(2 * w), nn.ReLU())
        self.up1 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(2 * w, w, 3, 1, 1), nn.BatchNorm2d(w), nn.ReLU())
        self.up2 = nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"),
                                 nn.Conv2d(w, w, 3, 1, 1), nn.BatchNorm2d(w), nn.ReLU())
        self.head = nn.Conv2d(w, SIM_CLASSES, 1)

    def forward(self, agnostic, warped_hair_mask, inpaint_mask):
        squeeze = agnostic.ndim == 3
        if squeeze:
            agnostic = agnostic.unsqueeze(0)
            warped_hair_mask = warped_hair_mask.unsqueeze(0)
            inpaint_mask = inpaint_mask.unsqueeze(0)
        if agnostic.shape[-2:] != inpaint_mask.shape[-2:] or \
                agnostic.shape[-2:] != warped_hair_mask.shape[-2:]:
            raise ValueError("SIM inputs must share spatial size")
        x = torch.cat([agnostic, warped_hair_mask, inpaint_mask], dim=1)
        x = self.up2(self.up1(self.mid(self.down2(self.down1(x)))))
        out = torch.softmax(self.head(x), dim=1) * inpaint_mask
        return out[0] if squeeze else out


def harden_sim(sim_mask, inpaint_mask):
    """One-hot argmax inside the inpaint region, zero outside."""
    squeeze = sim_mask.ndim == 3
    s = sim_mask.unsqueeze(0) if squeeze else sim_mask
    m = inpaint_mask.unsqueeze(0) if squeeze else inpaint_mask
    hard = F.one_hot(s.argmax(dim=1), SIM_CLASSES).permute(0, 3, 1, 2).to(s.dtype) * m
    return hard[0] if squeeze else hard


def region_normalize(x, region, eps=1e-5):
    """Standardize each channel separately over ``region`` and its complement.

    ``region`` is a hard (B,1,H,W) mask.  A region with fewer than 2 pixels
    falls back to whole-feature statistics to avoid degenerate variances.
    """
    mu_g = x.mean(dim=(2, 3), keepdim=True)
    var_g = x.var(dim=(2, 3), unbiased=False, keepdim=True)
    out = torch.zeros_like(x)
    for r in (region, 1 - region):
        n = r.sum(dim=(2, 3), keepdim=True)
        safe = n.clamp(min=1)
        mu = (x * r).sum(dim=(2, 3), keepdim=True) / safe
        var = ((x - mu) ** 2 * r).sum(dim=(2, 3), keepdim=True) / safe
        degenerate = n < 2
        mu = torch.where(degenerate, mu_g, mu)
        var = torch.where(degenerate, var_g, var)
        out = out + r * (x - mu) / torch.sqrt(var + eps)
    return out


class AliasNorm(nn.Module):
    """Region-separate standardization followed by spatial modulation
    ``x * (1 + gamma) + beta`` with maps predicted from the condition stack."""

    def __init__(self, channels, hidden=12, cond_channels=MDIV_CHANNELS):
        super().__init__()
        self.shared = nn.Conv2d(cond_channels, hidden, 3, 1, 1)
        self.gamma = nn.Conv2d(hidden, channels, 3, 1, 1)
        self.beta = nn.Conv2d(hidden, channels, 3, 1, 1)

    def forward(self, x, inpaint, mdiv):
        normalized = region_normalize(x, inpaint)
        h = F.relu(self.shared(mdiv))
        return normalized * (1 + self.gamma(h)) + self.beta(h)


class AliasResBlock(nn.Module):
    """Residual block of three (norm, ReLU, conv) sets: two on the main path,
    one on the 1x1 skip path."""

    def __init__(self, cin, cout, hidden=12):
        super().__init__()
        cmid = min(cin, cout)
        self.norm1 = AliasNorm(cin, hidden)
        self.conv1 = nn.Conv2d(cin, cmid, 3, 1, 1)
        self.norm2 = AliasNorm(cmid, hidden)
        self.conv2 = nn.Conv2d(cmid, cout, 3, 1, 1)
        self.norm_skip = AliasNorm(cin, hidden)
        self.conv_skip = nn.Conv2d(cin, cout, 1, bias=False)

    def forward(self, x, inpaint, mdiv):
        h = self.conv1(F.relu(self.norm1(x, inpaint, mdiv)))
        h = self.conv2(F.relu(self.norm2(h, inpaint, mdiv)))
        return h + self.conv_skip(F.relu(self.norm_skip(x, inpaint, mdiv)))


def _resize_mdiv(mdiv, size):
    """Hard channels (hair, inpaint) travel by nearest; soft SIM channels by
    bilinear."""
    hard = F.interpolate(mdiv[:, :2], size=size, mode="nearest")
    soft = F.interpolate(mdiv[:, 2:], size=size, mode="bilinear", align_corners=True)
    return torch.cat([hard, soft], dim=1)


class Generator(nn.Module):
    """Coarse-to-fine stack of upsampling residual blocks.

    Seed features come from a convolution of the condition images resized to
    the coarsest scale (H/2^levels); each level re-injects a convolution of
    the re-resized condition images alongside the upsampled features.  The
    output is bounded to [0, 1] by a rescaled tanh.
    """

    COND_CHANNELS = 9  # agnostic + keypoint rendering + warped hair image

    def __init__(self, levels=4, widths=(128, 64, 32, 16, 16), inject_width=12,
                 mod_hidden=12):
        super().__init__()
        if len(widths) != levels + 1:
            raise ValueError(f"widths must have levels+1 entries, got {len(widths)}")
        self.levels = levels
        self.seed = nn.Conv2d(self.COND_CHANNELS, widths[0], 3, 1, 1)
        self.injects = nn.ModuleList(
            nn.Conv2d(self.COND_CHANNELS, inject_width, 3, 1, 1) for _ in range(levels))
        self.blocks = nn.ModuleList(
            AliasResBlock(widths[i] + inject_width, widths[i + 1], mod_hidden)
            for i in range(levels))
        self.out = nn.Conv2d(widths[-1], 3, 3, 1, 1)

    def forward(self, agnostic, keypoint_image, warped_hair_image, inpaint, mdiv):
        squeeze = agnostic.ndim == 3
        if squeeze:
            agnostic = agnostic.unsqueeze(0)
            keypoint_image = keypoint_image.unsqueeze(0)
            warped_hair_image = warped_hair_image.unsqueeze(0)
            inpaint = inpaint.unsqueeze(0)
            mdiv = mdiv.unsqueeze(0)
        H, W = agnostic.shape[-2:]
        step = 1 << self.levels
        if H % step or W % step:
            raise ValueError(f"resolution {H}x{W} not divisible by 2^{self.levels}")
        if mdiv.shape[1] != MDIV_CHANNELS:
            raise ValueError(f"mdiv must have {MDIV_CHANNELS} channels")
        cond = torch.cat([agnostic, keypoint_image, warped_hair_image], dim=1)
        size = (H // step, W // step)
        h = self.seed(F.interpolate(cond, size=size, mode="bilinear", align_corners=True))
        for inject, block in zip(self.injects, self.blocks):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            size = (size[0] * 2, size[1] * 2)
            f = inject(F.interpolate(cond, size=size, mode="bilinear", align_corners=True))
            inp_i = F.interpolate(inpaint, size=size, mode="nearest")
            mdiv_i = _resize_mdiv(mdiv, size)
            h = block(torch.cat([h, f], dim=1), inp_i, mdiv_i)
        out = (torch.tanh(self.out(h)) + 1) / 2
        return out[0] if squeeze else out


class MultiScaleDiscriminator(nn.Module):
    """Conditional patch discriminators at full and half resolution.

    Each scale maps ``mdiv | image`` through a stride-2 conv stack to a patch
    logit map and exposes the intermediate activations for feature matching.
    """

    def __init__(self, widths=(16, 32, 64), cond_channels=MDIV_CHANNELS):
        super().__init__()
        w0, w1, w2 = widths
        cin = cond_channels + 3

        def stack():
            return nn.ModuleDict({
                "c1": nn.Conv2d(cin, w0, 4, 2, 1),
                "c2": nn.Conv2d(w0, w1, 4, 2, 1),
                "n2": nn.GroupNorm(group_count(w1), w1),
                "c3": nn.Conv2d(w1, w2, 4, 1, 1),
                "n3": nn.GroupNorm(group_count(w2), w2),
                "head": nn.Conv2d(w2, 1, 4, 1, 1),
            })

        self.scales = nn.ModuleList([stack(), stack()])

    def _run(self, stack, x):
        a1 = F.leaky_relu(stack["c1"](x), 0.2)
        a2 = F.leaky_relu(stack["n2"](stack["c2"](a1)), 0.2)
        a3 = F.leaky_relu(stack["n3"](stack["c3"](a2)), 0.2)
        return stack["head"](a3), [a1, a2, a3]

    def forward(self, mdiv, image):
        squeeze = image.ndim == 3
        if squeeze:
            mdiv, image = mdiv.unsqueeze(0), image.unsqueeze(0)
        if mdiv.shape[-2:] != image.shape[-2:]:
            raise ValueError("mdiv and image must share spatial size")
        x = torch.cat([mdiv, image], dim=1)
        outs = [self._run(self.scales[0], x),
                self._run(self.scales[1], F.avg_pool2d(x, 2))]
        if squeeze:
            outs = [(lg[0], [a[0] for a in acts]) for lg, acts in outs]
        return outs
