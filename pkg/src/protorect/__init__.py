"""Prototype rectification for few-shot classification over embedding vectors."""

from . import episodes, featurestore, harness, protonet, rectify, theory, trainer
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["episodes", "featurestore", "harness", "protonet", "rectify", "theory", "trainer", "BACKEND"]
