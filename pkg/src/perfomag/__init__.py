"""Effective model of the paramagnetic-ferromagnetic transition in periodically
perforated media: cell correctors, effective tensors, Curie tensor, macro and
eps-resolved micro simulators."""

from perfomag._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
