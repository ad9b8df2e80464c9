"""Point-source reduction laboratory for exterior diffusion problems."""

__version__ = "0.1.0"
