"""Latent diffusion world model and imagination-guided diffusion policy on a 2D arena."""

__version__ = "0.1.0"
