"""MAP reconstruction of degraded images in the latent space of a toy style-based generator."""

__version__ = "0.1.0"
