"""lesionforge: desk-scale skin-lesion classification pipeline.

Preprocessing (rebalance, augment, filter), dual-encoder segmentation,
frozen surrogate feature extractors, a soft-voting ensemble head, and a
full evaluation suite, all on a small hand-written numpy layer vocabulary.
"""

__version__ = "0.1.0"
