"""Text-conditioned sound separation in neural-audio-codec latent space.

A miniature trainable RVQ codec, a FiLM-conditioned transformer masker with
its ablation variants, continuous and code-stream separation paths, a
deterministic synthetic mixture benchmark, and an analytic MAC profiler.
"""

__version__ = "0.1.0"
