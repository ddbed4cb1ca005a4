"""Pose-invariant hairstyle transfer at desk scale.

Two-stage pipeline: a keypoint-driven dense-flow network aligns a target
hairstyle with the source pose, then a region-normalized inpainting
generator synthesizes the final image.  Ships with a procedural multi-view
synthetic face dataset for fully self-contained training and evaluation.
"""

__version__ = "0.1.0"
