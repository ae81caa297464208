"""Image reconstruction from multichannel signals with a Gaussian latent model."""

__version__ = "0.1.0"
