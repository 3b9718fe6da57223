"""Self-supervised hyperspectral inpainting with low-rank and plug-and-play sparse priors."""

__version__ = "0.1.0"
