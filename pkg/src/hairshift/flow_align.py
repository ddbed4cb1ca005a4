"""Keypoint-conditioned dense-flow estimation and hair alignment.

The estimator is an hourglass: two 1x1 conv blocks bracketing five down and
five up blocks.  Its input interleaves, per keypoint, one heatmap-difference
channel with the three channels of the target image translated by that
keypoint's displacement.  It predicts an N_k-channel soft assignment mask
(channel softmax) and a 2-channel refinement flow; the dense flow is the
mask-weighted sum of keypoint displacements plus the refinement.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .blocks import ConvBlock, DownBlock, UpBlock
from .errors import TrainingDivergedError
from .geometry import (
    bilinear_warp,
    compose_flow,
    gaussian_heatmap,
    harden,
    translate_copies,
)


class FlowEstimator(nn.Module):
    def __init__(self, n_keypoints=68, base_width=16, max_width=64, levels=5):
        super().__init__()
        self.n_keypoints = n_keypoints
        self.levels = levels
        widths = [base_width] + [min(base_width * 2 ** (i + 1), max_width)
                                 for i in range(levels)]
        self.conv_in = ConvBlock(n_keypoints * 4, base_width, kernel=1)
        self.downs = nn.ModuleList(DownBlock(widths[i], widths[i + 1])
                                   for i in range(levels))
        self.ups = nn.ModuleList(UpBlock(2 * widths[i + 1], widths[i])
                                 for i in reversed(range(levels)))
        self.conv_out = ConvBlock(base_width, base_width, kernel=1)
        self.mask_head = nn.Conv2d(base_width, n_keypoints, 1)
        self.refine_head = nn.Conv2d(base_width, 2, 1)
        # start from the identity warp: zero refinement, uniform mask
        nn.init.zeros_(self.refine_head.weight)
        nn.init.zeros_(self.refine_head.bias)
        nn.init.zeros_(self.mask_head.weight)
        nn.init.zeros_(self.mask_head.bias)

    def forward(self, hdiff, copies):
        """``hdiff``: (B,N,H,W) heatmap differences; ``copies``: (B,N,3,H,W)
        translated target copies.  Returns (soft mask (B,N,H,W), refinement
        flow (B,2,H,W)); unbatched inputs give unbatched outputs."""
        squeeze = hdiff.ndim == 3
        if squeeze:
            hdiff, copies = hdiff.unsqueeze(0), copies.unsqueeze(0)
        B, N, H, W = hdiff.shape
        if N != self.n_keypoints or copies.shape[:2] != (B, N) or copies.shape[3:] != (H, W):
            raise ValueError(
                f"inputs disagree with n_keypoints={self.n_keypoints}: "
                f"hdiff {tuple(hdiff.shape)}, copies {tuple(copies.shape)}")
        if H % (1 << self.levels) or W % (1 << self.levels):
            raise ValueError(f"resolution {H}x{W} not divisible by 2^{self.levels}")
        x = torch.cat([hdiff.unsqueeze(2), copies], dim=2).reshape(B, N * 4, H, W)
        x = self.conv_in(x)
        skips = []
        for down in self.downs:
            x, skip = down(x)
            skips.append(skip)
        for up, skip in zip(self.ups, reversed(skips)):
            x = up(x, skip)
        x = self.conv_out(x)
        mask = torch.softmax(self.mask_head(x), dim=1)
        refinement = self.refine_head(x)
        if squeeze:
            return mask[0], refinement[0]
        return mask, refinement


@dataclass
class AlignmentResult:
    """Target content brought into the source pose."""

    warped_target: torch.Tensor      # (3,H,W)
    warped_hair_mask: torch.Tensor   # (1,H,W), hard
    flow: torch.Tensor               # (2,H,W)
    mask: torch.Tensor               # (N,H,W), soft
    refinement: torch.Tensor         # (2,H,W)


def estimate_flow(model, source_keypoints, target_image, target_keypoints,
                  variance=0.01):
    """Batched core: heatmap differences + translated copies -> dense flow.

    All arguments batched: keypoints (B,N,2), image (B,3,H,W).  Returns
    ``(flow, mask, refinement)``.
    """
    H, W = target_image.shape[-2:]
    kdiff = target_keypoints - source_keypoints
    h_s = gaussian_heatmap(source_keypoints, variance, H, W)
    h_t = gaussian_heatmap(target_keypoints, variance, H, W)
    copies = translate_copies(target_image, kdiff)
    mask, refinement = model(h_t - h_s, copies)
    flow = compose_flow(kdiff, mask, refinement)
    return flow, mask, refinement


def align(model, source_keypoints, target_image, target_keypoints,
          target_hair_mask, variance=0.01, image_border="clamp",
          mask_border="zeros"):
    """Warp a target image and its hair mask into the source pose."""
    if source_keypoints.shape != target_keypoints.shape:
        raise ValueError("keypoint sets must have the same shape")
    flow, mask, refinement = estimate_flow(
        model, source_keypoints.unsqueeze(0), target_image.unsqueeze(0),
        target_keypoints.unsqueeze(0), variance)
    warped = bilinear_warp(target_image.unsqueeze(0), flow, border=image_border)[0]
    warped_hair = bilinear_warp(target_hair_mask.unsqueeze(0), flow,
                                border=mask_border)[0]
    return AlignmentResult(
        warped_target=warped,
        warped_hair_mask=harden(warped_hair),
        flow=flow[0],
        mask=mask[0],
        refinement=refinement[0],
    )


def reconstruction_loss(warped, source):
    """Mean absolute difference over all pixels and channels."""
    if warped.shape != source.shape:
        raise ValueError(f"shapes disagree: {tuple(warped.shape)} vs {tuple(source.shape)}")
    return (warped - source).abs().mean()


def train_flow_step(model, optimizer, batch, variance=0.01, image_border="clamp"):
    """One gradient step of the reconstruction objective on a batch of
    same-identity pairs.

    ``batch`` maps ``source_images``/``target_images`` to (B,3,H,W) and
    ``source_keypoints``/``target_keypoints`` to (B,N,2).  Returns the loss
    value as a float.
    """
    flow, _, _ = estimate_flow(model, batch["source_keypoints"],
                               batch["target_images"], batch["target_keypoints"],
                               variance)
    warped = bilinear_warp(batch["target_images"], flow, border=image_border)
    loss = reconstruction_loss(warped, batch["source_images"])
    if not torch.isfinite(loss):
        raise TrainingDivergedError("reconstruction loss is non-finite",
                                    diagnostics={"l_rec": float(loss.detach())})
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())
