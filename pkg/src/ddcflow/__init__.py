"""Two-domain incompressible flow solver with an interface-friction coupling.

The package discretizes two viscous flows meeting at a horizontal interface
where a nonlinear friction law acts.  Each time step first advances a
stabilized implicit solve (the defect step), then applies one deferred
correction that removes the stabilization error and lifts the scheme to
second order in time.
"""

from .mesh import (
    BoundaryTag,
    InterfacePairing,
    Mesh,
    MeshFormatError,
    MeshPairingError,
    UnsupportedElementError,
    build_interface_pairing,
    generate_channel_mesh,
    generate_rect_mesh,
    import_gmsh,
    refine_uniform,
)
from .fem import (
    FunctionSpace,
    QuadratureRule,
    ReferenceElement,
    VelocityBC,
    apply_constraints,
    evaluate,
    interpolate,
    interpolate_vector,
    triangle_rule,
)

__all__ = [
    "BoundaryTag",
    "InterfacePairing",
    "Mesh",
    "MeshFormatError",
    "MeshPairingError",
    "UnsupportedElementError",
    "build_interface_pairing",
    "generate_channel_mesh",
    "generate_rect_mesh",
    "import_gmsh",
    "refine_uniform",
    "FunctionSpace",
    "QuadratureRule",
    "ReferenceElement",
    "VelocityBC",
    "apply_constraints",
    "evaluate",
    "interpolate",
    "interpolate_vector",
    "triangle_rule",
]

__version__ = "0.1.0"
