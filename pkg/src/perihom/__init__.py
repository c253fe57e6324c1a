"""perihom: higher-order periodic homogenization at desk scale.

Corrector hierarchies and homogenized tensors for measurable Z^d-periodic
elliptic coefficient fields, exact polynomial calculus for the macroscopic
operator, heterogeneous-polynomial spaces with intrinsic-difference
coordinates, and experiment drivers that measure large-scale regularity and
three-ball unique-continuation behavior of discrete solutions.
"""

__version__ = "0.1.0"

from .cell import (
    CorrectorHierarchy,
    PeriodicPolyField,
    SolverError,
    TorusGridFunction,
    build_hierarchy,
    corrector_residual,
    homogenized_matrix,
    leibniz_expand,
    solve_cell,
)
from .cubesolver import (
    CubeProblem,
    CubeSolution,
    lattice_difference_norm,
    lp_norm,
    solve_dirichlet,
)
from .fields import (
    CoefficientField,
    EllipticityError,
    GridField,
    ellipticity_bounds,
    gallery_field,
    load_field_spec,
    sample_field,
)
from .hetpoly import (
    BoxSample,
    HetPolynomial,
    basis_harmonic_het,
    evaluate_het,
    fit_het,
    interpolate_het,
    intrinsic_differences,
    solve_het_rhs,
)
from .polynomials import (
    GaussianWeight,
    HomogenizedTensorSequence,
    Polynomial,
    apply_macroscopic,
    derivative_poly,
    differences_to_derivatives,
    eval_poly,
    finite_difference_poly,
    gaussian_inner,
    harmonic_twist,
    hermite_poly,
    invert_laplacian_homogeneous,
    invert_macroscopic,
)
from .tensors import (
    SymTensor,
    contract,
    identity_tensor,
    multinomial,
    symmetrized_product,
    tensor_power,
)
