"""Adaptive virtual element SCFT solver for diblock copolymer melts.

Subpackage map:

- ``halfedge``: polygonal mesh kernel (halfedge connectivity, refinement,
  coarsening, audits).
- ``vem``: virtual element spaces of order 1 and 2, projectors, and the
  global mass / stiffness / field-weighted operators.
- ``chebyshev``: Chebyshev contour grids with spectral (Clenshaw-Curtis)
  full and cumulative integration.
- ``contour``: Crank-Nicolson chain propagator sweeps with spectral
  deferred correction.
- ``scft``: the self-consistent field model, field updates and iteration.
- ``adaptivity``: gradient-recovery error estimation, logarithmic marking
  and mesh-to-mesh field transfer.
- ``domains``: clipped-grid meshing of curved domains (requires shapely);
  pre-built meshes ship under ``data/domains/``.
- ``experiments`` / ``cli``: config-driven experiment drivers.
"""

__version__ = "0.1.0"
