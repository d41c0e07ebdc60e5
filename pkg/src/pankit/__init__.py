"""pankit: kernel-seeded text instance segmentation toolkit.

Forward-only segmentation network (stub backbone + cascaded pyramid
enhancement + fusion + detection head) with exact FLOPs accounting, the
pixel-aggregation loss family with analytic gradients, ground-truth
generation with kernel shrinking, similarity-guided post-processing, and
polygon-IoU evaluation.
"""

__version__ = "0.1.0"
