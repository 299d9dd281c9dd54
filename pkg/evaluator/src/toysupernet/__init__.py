"""Toy trainable supernet evaluator and trajectory plotting."""

from .surrogate import SurrogateSupernet

__version__ = "0.1.0"

__all__ = ["SurrogateSupernet"]
