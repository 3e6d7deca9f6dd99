"""Desk-scale language-driven semantic segmentation.

Dense per-pixel embeddings are correlated with frozen label embeddings,
trained with a temperature-scaled pixelwise softmax objective, regularized
by label-equivariant spatial blocks, and exposed through a CLI, an HTTP
inference service, and an interactive label-exploration UI.
"""

__version__ = "0.1.0"
