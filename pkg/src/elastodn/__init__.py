"""Piecewise-constant anisotropic elasticity from localized Dirichlet-to-Neumann maps.

Modules
-------
tensor      validated elasticity tensors, Voigt/Mandel forms, generators
stroh       Barnett-Lothe integrals, surface impedance, fundamental solution
boundary    impedance samples on curved patches and tensor recovery
fem         P1 tetrahedral assembly and localized DN matrices
stripping   inner extension of a DN map across a known layer
pipeline    chain planning, reconstruction runs, reports and the CLI
"""

from .errors import ElastoDNError
from .tensor import ElasticityTensor, make_elasticity_tensor

__version__ = "0.1.0"

__all__ = ["ElastoDNError", "ElasticityTensor", "make_elasticity_tensor", "__version__"]
