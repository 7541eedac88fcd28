"""brepfields: self-supervised per-face geometry embeddings for CAD B-Reps.

Pipeline: parse or generate boundary representations, sample each face's
supporting surface and clipping-boundary signed distance field, train an
encoder/decoder that rasterizes faces from 64-d face codes, then reuse the
frozen codes for few-shot segmentation, part classification, and
gradient-based shape-parameter fitting.
"""

__version__ = "0.1.0"
