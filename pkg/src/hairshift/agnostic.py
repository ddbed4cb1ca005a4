"""Hair-agnostic image construction and the training-time random hair mask.

The agnostic image blanks out everything hair-related in the source: its own
hair, its forehead, the incoming warped target hair, and (during training) a
randomly drawn warped hair mask that widens the occlusions the generator must
learn to fill.  The inpaint mask is the blanked region not covered by the new
hair.
"""

from dataclasses import dataclass

import torch

from . import flow_align
from .errors import EmptyDatasetError
from .geometry import mask_subtract, mask_union, require_hard


@dataclass
class AgnosticBundle:
    agnostic_image: torch.Tensor  # (3,H,W), source with removal filled gray
    removal_mask: torch.Tensor    # (1,H,W), hard union of removed regions
    inpaint_mask: torch.Tensor    # (1,H,W), hard, removal minus new hair


FILL_VALUE = 0.5


def build_agnostic(source, src_hair, src_forehead, warped_target_hair,
                   warped_random_hair=None, fill=FILL_VALUE):
    """Blank the hair-related regions of ``source`` with constant gray.

    All masks must be hard ``(1,H,W)`` with the source's spatial size.  Every
    pixel outside the removal union is copied from the source exactly.
    """
    masks = [("src_hair", src_hair), ("src_forehead", src_forehead),
             ("warped_target_hair", warped_target_hair)]
    if warped_random_hair is not None:
        masks.append(("warped_random_hair", warped_random_hair))
    removal = None
    for name, m in masks:
        require_hard(m, name)
        if m.shape != (1, *source.shape[-2:]):
            raise ValueError(f"{name} shape {tuple(m.shape)} does not match source")
        removal = m if removal is None else mask_union(removal, m)
    agnostic = source * (1 - removal) + fill * removal
    inpaint = mask_subtract(removal, warped_target_hair)
    return AgnosticBundle(agnostic_image=agnostic, removal_mask=removal,
                          inpaint_mask=inpaint)


def sample_random_hair_mask(dataset, rng, flow_model, source_keypoints,
                            variance=0.01, mask_border="zeros"):
    """Draw a random training sample and align its hair mask to the source pose.

    ``rng`` is a ``numpy.random.Generator``; the draw is uniform over the
    train split.  Returns a hard ``(1,H,W)`` mask.
    """
    entries = dataset.entries("train")
    if not entries:
        raise EmptyDatasetError("dataset has no training samples to draw from")
    identity, pose = entries[int(rng.integers(len(entries)))]
    sample = dataset.sample(identity, pose)
    with torch.no_grad():
        result = flow_align.align(
            flow_model, source_keypoints, sample.image, sample.keypoints,
            sample.masks["hair"], variance=variance, mask_border=mask_border)
    return result.warped_hair_mask
