"""danosim: rigid-body simulation of volumetric density-field objects.

Object geometry is a nonnegative scalar density field (grid-backed or
analytic). A preprocessing pass samples the field to estimate mass, center
of mass, and inertia, and extracts surface candidate points with outward
normals. Contact between bodies is resolved through the expected
interpenetration volume of the density fields, a spring/damper normal force,
and smoothed Coulomb friction. The simulator exposes finite-difference
step Jacobians which drive Gauss-Newton system identification and iLQR
trajectory optimization.
"""

from danosim.errors import DanosimError, DomainError, DivergenceError, ParseError
from danosim.fields import (
    GridDensityField,
    HalfSpace,
    Pose,
    Sphere,
    SphereIndicatorField,
    density_gradient,
    eval_density,
    eval_primitive_density,
    load_grid_field,
    save_grid_field,
)
from danosim.dano import (
    DanoBuildConfig,
    DanoModel,
    SampleSet,
    build_dano,
    compute_normals,
    estimate_mass_properties,
    load_dano,
    sample_uniform,
    save_dano,
    select_surface_candidates,
)
from danosim.contact import (
    ContactParams,
    ContactResult,
    contact_normal_dano_dano,
    contact_normal_primitive,
    contact_wrench,
    overlap_dano_dano,
    overlap_primitive,
)
from danosim.dynamics import (
    BodyState,
    ContactPair,
    DanoBody,
    SceneConfig,
    SphereBody,
    StaticBody,
    Trajectory,
    simulate,
    step,
)

__version__ = "0.1.0"
