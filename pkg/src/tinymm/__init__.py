"""tinymm: a desk-scale native-multimodal transformer workbench.

One decoder backbone handles text autoregressively and images with
flow matching, with generalized causal attention, two-dimensional rotary
positions, automatic-resolution tokens, and mixture-of-experts feed-forward
layers instrumented for per-modality routing analytics.
"""

__version__ = "0.1.0"
