"""Multi-condition motion diffusion at desk scale.

Subpackages: the 263-dim motion representation, the DDPM schedule, the
multi-wise attention denoiser, the zero-bridge control composition,
condition encoders, the evaluation metric suite, two-stage training,
binary containers, and the CLI entry point.
"""

__version__ = "0.1.0"
