"""Spline shape optimization of axisymmetric DC electron-gun electrodes.

Subpackages are imported on demand; ``gunshape.cli`` must be able to set
the BLAS thread count before numpy is loaded.
"""
__version__ = "0.1.0"
