"""Learned coarse-grid terrain for shallow-water flood simulation."""
__version__ = "0.1.0"
