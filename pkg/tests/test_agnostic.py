from types import SimpleNamespace

import numpy as np
import pytest
import torch

from hairshift.agnostic import AgnosticBundle, build_agnostic, sample_random_hair_mask
from hairshift.errors import EmptyDatasetError
from hairshift.flow_align import FlowEstimator


def hard(h, w, seed, p=0.5):
    torch.manual_seed(seed)
    return (torch.rand(1, h, w) > p).float()


def test_build_agnostic_empty_masks():
    torch.manual_seed(0)
    src = torch.rand(3, 8, 8)
    z = torch.zeros(1, 8, 8)
    bundle = build_agnostic(src, z, z, z)
    assert torch.equal(bundle.agnostic_image, src)
    assert bundle.inpaint_mask.abs().max() == 0
    assert bundle.removal_mask.abs().max() == 0


def test_build_agnostic_full_cover():
    torch.manual_seed(1)
    src = torch.rand(3, 8, 8)
    hair = hard(8, 8, 2)
    fh = hard(8, 8, 3, p=0.7)
    covered = torch.maximum(hair, fh)  # warped hair covers everything removed
    bundle = build_agnostic(src, hair, fh, covered)
    assert bundle.inpaint_mask.abs().max() == 0


def test_build_agnostic_matches_boolean_oracle():
    torch.manual_seed(4)
    src = torch.rand(3, 16, 16)
    hair = hard(16, 16, 5)
    fh = hard(16, 16, 6, p=0.8)
    wth = hard(16, 16, 7, p=0.6)
    rnd = hard(16, 16, 8, p=0.7)
    bundle = build_agnostic(src, hair, fh, wth, rnd)
    removal = (hair.bool() | fh.bool() | wth.bool() | rnd.bool())
    inpaint = removal & ~wth.bool()
    assert torch.equal(bundle.removal_mask.bool(), removal)
    assert torch.equal(bundle.inpaint_mask.bool(), inpaint)
    outside = ~removal
    assert torch.equal(bundle.agnostic_image[:, outside[0]], src[:, outside[0]])
    inside = removal[0]
    assert (bundle.agnostic_image[:, inside] == 0.5).all()


def test_build_agnostic_invariants():
    torch.manual_seed(9)
    src = torch.rand(3, 16, 16)
    hair = hard(16, 16, 10)
    fh = hard(16, 16, 11, p=0.8)
    wth = hard(16, 16, 12, p=0.6)
    rnd = hard(16, 16, 13, p=0.7)
    without = build_agnostic(src, hair, fh, wth)
    with_rnd = build_agnostic(src, hair, fh, wth, rnd)
    # disjointness: inpaint never overlaps the incoming hair
    assert (with_rnd.inpaint_mask * wth).abs().max() == 0
    # monotonicity: the random mask can only grow removal and inpaint
    assert bool((with_rnd.removal_mask >= without.removal_mask).all())
    assert bool((with_rnd.inpaint_mask >= without.inpaint_mask).all())


def test_build_agnostic_rejects_soft_and_misshaped():
    src = torch.rand(3, 8, 8)
    z = torch.zeros(1, 8, 8)
    with pytest.raises(ValueError):
        build_agnostic(src, torch.full((1, 8, 8), 0.4), z, z)
    with pytest.raises(ValueError):
        build_agnostic(src, torch.zeros(1, 4, 4), z, z)


class StubDataset:
    """Minimal dataset protocol: entries(split) and sample(identity, pose)."""

    def __init__(self, samples):
        self.samples = samples

    def entries(self, split):
        return list(self.samples.keys())

    def sample(self, identity, pose):
        return self.samples[(identity, pose)]


def _stub_sample(seed, h=16, w=16, nk=4):
    torch.manual_seed(seed)
    return SimpleNamespace(
        image=torch.rand(3, h, w),
        keypoints=(torch.rand(nk, 2) - 0.5) * 0.8,
        masks={"hair": (torch.rand(1, h, w) > 0.6).float()},
    )


def test_sample_random_hair_mask_deterministic_and_degenerate():
    torch.manual_seed(20)
    model = FlowEstimator(n_keypoints=4, base_width=8, max_width=16, levels=3)
    sample = _stub_sample(21)
    ds = StubDataset({("a", 0): sample})
    m1 = sample_random_hair_mask(ds, np.random.default_rng(0), model, sample.keypoints)
    m2 = sample_random_hair_mask(ds, np.random.default_rng(0), model, sample.keypoints)
    assert torch.equal(m1, m2)
    # drawing the source itself: zero keypoint difference, untrained refinement
    # is zero-initialized, so the mask comes back unchanged
    assert torch.equal(m1, sample.masks["hair"])


def test_sample_random_hair_mask_empty_dataset():
    model = FlowEstimator(n_keypoints=4, base_width=8, max_width=16, levels=3)
    with pytest.raises(EmptyDatasetError):
        sample_random_hair_mask(StubDataset({}), np.random.default_rng(0), model,
                                torch.zeros(4, 2))
