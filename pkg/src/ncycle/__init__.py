"""Kernel dual metrics on normal cycles and currents of discrete shapes."""

from .compression import CompressionResult, RlsConfig, compress
from .geometry import Polyline, TriangleMesh, load_obj, load_shape, make_shape
from .kernels import GaussianKernel, GaussianKernelSum, dual_distance_sq, dual_inner
from .representations import DiracFunctional, currents_of_mesh, normal_cycle_of_curve, normal_cycle_of_mesh

__all__ = [
    "CompressionResult",
    "DiracFunctional",
    "GaussianKernel",
    "GaussianKernelSum",
    "Polyline",
    "RlsConfig",
    "TriangleMesh",
    "compress",
    "currents_of_mesh",
    "dual_distance_sq",
    "dual_inner",
    "load_obj",
    "load_shape",
    "make_shape",
    "normal_cycle_of_curve",
    "normal_cycle_of_mesh",
]

__version__ = "0.1.0"
