"""Structure-preserving integrators for conformally Hamiltonian systems.

Library layout:

- :mod:`confint.dynamics`: phase-space types, conformal and altered systems,
  phi-simple reduction, particle models.
- :mod:`confint.integrators`: five variational discretizations of the
  altered system, the implicit symplectic step, and the RK4 reference.
- :mod:`confint.series`: closed-form order-2 coefficients of the modified
  quantities, the energy solve, and the proposed integrator.
- :mod:`confint.backward_error`: numerical extraction of step-expansion and
  modified-equation coefficients.
- :mod:`confint.measure`: point clouds, weighted hull volumes, evolution.
- :mod:`confint.cli`: the ``confint`` experiment command line.
"""

from .dynamics import (
    FREE,
    HARMONIC,
    ConformalSystem,
    DimensionMismatchError,
    MechanicalModel,
    ModelDomainError,
    PhaseState,
    Potential,
    Tangent,
    altered_hamiltonian,
    altered_vector_field,
    build_particle,
    conformal_vector_field,
    eval_conformal_factor,
    eval_hamiltonian,
    particle_model,
    phi_simple_to_conformal,
)
from .integrators import (
    DiscreteLagrangianKind,
    NewtonDivergenceError,
    ReferenceConfig,
    StepperConfig,
    discrete_lagrangian,
    grad_discrete_lagrangian,
    reference_trajectory,
    reference_trajectory_array,
    symplectic_step,
    trajectory,
)
from .series import (
    NonPositiveConformalFactorError,
    SeriesTable,
    k2_energy_slope,
    k2_gradient,
    k2_hamiltonian_field,
    modified_altered_hamiltonian,
    modified_conformal_factor,
    modified_conformal_hamiltonian,
    proposed_integrator,
    series_table,
    solve_energy,
)
from .backward_error import (
    ExtractionUnreliableError,
    ModifiedFieldData,
    OneStepMap,
    TaylorData,
    flow_map,
    modified_field_coefficients,
    taylor_coefficients,
    variational_one_step_map,
)
from .measure import (
    CloudStepError,
    DensityKind,
    FrankWolfeStallError,
    PointCloud,
    VolumeConfig,
    VolumeEstimate,
    VolumeRecord,
    cell600_vertices,
    evolve_cloud,
    hull_membership,
    registered_volume_estimates,
    sphere_cloud,
    volume_series,
    weighted_hull_volume,
    weighted_hull_volume_multi,
)

__version__ = "0.1.0"
