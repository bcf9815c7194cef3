"""Stable GAN training by data scaling, with numerical checks of the optimal discriminator."""

__version__ = "0.1.0"
