"""Multimodal named-entity recognition pipeline.

Text and image-object encoders feed an image-text relevance gate and an
iterative cross-modal interaction stack; a linear-chain CRF decodes BIO2
tag sequences. Everything runs on the float64 autodiff core in
``hamnet.tensor``.
"""

__version__ = "0.1.0"
