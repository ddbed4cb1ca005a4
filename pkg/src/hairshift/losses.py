"""Training objectives: adversarial, feature matching, perceptual, style, BCE.

The perceptual and style losses run on a fixed (non-trainable) convolutional
feature extractor whose weights are drawn once from a seeded distribution, or
loaded from a file.  This keeps every formula exercisable without any
pretrained network; externally supplied weights drop in through the same
interface.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import TrainingDivergedError

_BCE_EPS = 1e-7


class FeatureExtractor(nn.Module):
    """Frozen 4-tap convolutional stack with taps at strides 1, 2, 4, 8.

    Weights live in buffers, never in parameters, so no optimizer can touch
    them; gradients still flow through the taps with respect to the input.
    """

    CHANNELS = (16, 32, 64, 128)
    STRIDES = (1, 2, 2, 2)

    def __init__(self, seed=900, weights=None):
        super().__init__()
        cin = 3
        if weights is None:
            gen = torch.Generator().manual_seed(seed)
            weights = {}
            for i, (cout, _) in enumerate(zip(self.CHANNELS, self.STRIDES)):
                std = (2.0 / (cin * 9)) ** 0.5
                weights[f"w{i}"] = torch.randn(cout, cin, 3, 3, generator=gen) * std
                weights[f"b{i}"] = torch.zeros(cout)
                cin = cout
        for i in range(4):
            self.register_buffer(f"w{i}", torch.as_tensor(weights[f"w{i}"]).float())
            self.register_buffer(f"b{i}", torch.as_tensor(weights[f"b{i}"]).float())

    @classmethod
    def from_file(cls, path):
        from .checkpoint import load_checkpoint

        bundle = load_checkpoint(path)
        arrays = {k: torch.as_tensor(v) for k, v in bundle.arrays.items()}
        return cls(weights=arrays)

    def taps(self, img):
        """Four activation maps, each ReLU of a stride-s convolution."""
        x = img.unsqueeze(0) if img.ndim == 3 else img
        out = []
        for i, stride in enumerate(self.STRIDES):
            w = getattr(self, f"w{i}").to(x.dtype)
            b = getattr(self, f"b{i}").to(x.dtype)
            x = F.relu(F.conv2d(x, w, b, stride=stride, padding=1))
            out.append(x[0] if img.ndim == 3 else x)
        return out

    def pooled(self, img):
        """Spatially averaged deepest tap; the feature vector for FFD."""
        t = self.taps(img)[-1]
        return t.mean(dim=(-2, -1))

    def forward(self, img):
        return self.taps(img)


def _as_list(logits):
    return logits if isinstance(logits, (list, tuple)) else [logits]


def hinge_d(real_logits, fake_logits):
    """Discriminator hinge: mean(max(0, 1-real)) + mean(max(0, 1+fake)),
    averaged across scales."""
    real, fake = _as_list(real_logits), _as_list(fake_logits)
    terms = [F.relu(1 - r).mean() + F.relu(1 + f).mean() for r, f in zip(real, fake)]
    return sum(terms) / len(terms)


def hinge_g(fake_logits):
    fake = _as_list(fake_logits)
    return sum(-f.mean() for f in fake) / len(fake)


def logistic_d(real_logits, fake_logits):
    """Log-form adversarial loss (non-saturating BCE-with-logits variant),
    available behind the config switch as an alternative to hinge."""
    real, fake = _as_list(real_logits), _as_list(fake_logits)
    terms = [F.softplus(-r).mean() + F.softplus(f).mean() for r, f in zip(real, fake)]
    return sum(terms) / len(terms)


def logistic_g(fake_logits):
    fake = _as_list(fake_logits)
    return sum(F.softplus(-f).mean() for f in fake) / len(fake)


def feature_matching(real_acts, fake_acts):
    """Sum over scales and layers of the per-element L1 gap between
    discriminator activations."""
    if len(real_acts) != len(fake_acts):
        raise ValueError("activation lists have different scale counts")
    total = 0.0
    for rs, fs in zip(real_acts, fake_acts):
        if len(rs) != len(fs):
            raise ValueError("activation lists have different layer counts")
        for r, f in zip(rs, fs):
            total = total + (r - f).abs().mean()
    return total


def perceptual(extractor, a, b):
    """Sum over the 4 taps of the per-element L1 gap between features."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    total = 0.0
    for ta, tb in zip(extractor.taps(a), extractor.taps(b)):
        total = total + (ta - tb).abs().mean()
    return total


def gram(v):
    """Gram matrix ``v^T v`` of an ``(HW, C)`` activation matrix."""
    if v.ndim != 2:
        raise ValueError(f"gram expects a 2-D (HW, C) matrix, got {tuple(v.shape)}")
    return v.transpose(0, 1) @ v


def _tap_to_rows(tap):
    # (C,H,W) -> (HW,C); batched (B,C,H,W) -> (B,HW,C)
    if tap.ndim == 3:
        return tap.flatten(1).transpose(0, 1)
    return tap.flatten(2).transpose(1, 2)


def style_loss(extractor, target_hair_img, generated_hair_img):
    """Gram-matrix distance between hair textures, summed over the 4 taps.

    Both inputs are expected to be pre-masked (hair pixels only).  Each tap
    contributes the Frobenius distance of the Gram matrices divided by the
    Gram element count; batches are averaged.
    """
    total = 0.0
    for ta, tb in zip(extractor.taps(target_hair_img), extractor.taps(generated_hair_img)):
        va, vb = _tap_to_rows(ta), _tap_to_rows(tb)
        if va.ndim == 2:
            ga = va.transpose(0, 1) @ va
            gb = vb.transpose(0, 1) @ vb
            d = (ga - gb).pow(2).sum().sqrt() / ga.numel()
        else:
            ga = va.transpose(1, 2) @ va
            gb = vb.transpose(1, 2) @ vb
            d = ((ga - gb).pow(2).sum(dim=(1, 2)).sqrt() / (ga.shape[1] * ga.shape[2])).mean()
        total = total + d
    return total


def sim_bce(gt, pred):
    """Binary cross-entropy over the 4 mask channels, averaged over pixels
    inside the inpaint region (where the one-hot ground truth has support).

    Predictions are clamped to ``[1e-7, 1 - 1e-7]``; both inputs are zero
    outside the inpaint region.  Returns 0 when the region is empty.
    """
    region = (gt.sum(dim=-3, keepdim=True) > 0).to(gt.dtype)
    n = region.sum()
    if n == 0:
        return pred.sum() * 0.0
    p = pred.clamp(_BCE_EPS, 1 - _BCE_EPS)
    bce = -(gt * p.log() + (1 - gt) * (1 - p).log())
    return (bce * region).sum() / (n * gt.shape[-3])


@dataclass
class LossWeights:
    """Weights of the synthesis objective; defaults follow the training recipe."""

    fm: float = 10.0
    percept: float = 10.0
    style: float = 50.0
    sim: float = 100.0

    def __post_init__(self):
        for name in ("fm", "percept", "style", "sim"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


@dataclass
class LossParts:
    cgan: object
    fm: object
    percept: object
    style: object
    sim: object


def total_loss(parts, weights=None):
    """Weighted sum of the synthesis losses; raises naming the first
    non-finite part."""
    weights = weights or LossWeights()
    for name in ("cgan", "fm", "percept", "style", "sim"):
        value = getattr(parts, name)
        scalar = float(value.detach()) if torch.is_tensor(value) else float(value)
        if not torch.isfinite(torch.tensor(scalar)):
            raise TrainingDivergedError(f"loss term {name!r} is non-finite ({scalar})",
                                        diagnostics={name: scalar})
    return (parts.cgan + weights.fm * parts.fm + weights.percept * parts.percept
            + weights.style * parts.style + weights.sim * parts.sim)
