"""Doubly robust counterfactual mean embeddings and matched permutation tests."""

from drcme._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
