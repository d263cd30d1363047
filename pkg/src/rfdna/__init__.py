"""Specific emitter identification workbench: synthetic emitters, multipath channels and three
equalise-and-identify pipelines (Nelder-Mead + MMSE, conditional GAN, joint CAE+CNN)."""

__version__ = "0.1.0"
