"""Two-phase porous-media flow toolbox.

A fully-implicit finite-volume reference simulator, a differentiable
mass-conservation residual, and a per-timestep physics-informed
convolutional surrogate trained without labeled data.
"""

from .core import (
    ControlSchedule,
    CoreyRelPerm,
    FluidModel,
    GridSpec,
    Phase,
    PhaseProps,
    ReservoirCase,
    RockModel,
    State,
    WellKind,
    WellSpec,
    corey_relperm,
    fluid_props_at,
)
from .fvm import (
    FaceTransmissibility,
    ResidualAssembler,
    ResidualBundle,
    assemble_residual,
    geometric_transmissibility,
    harmonic_perm,
    upstream_relperm,
    well_index,
)
from .network import (
    NetworkSpec,
    NormalizationBounds,
    PicnnModel,
    ScalingParams,
    build_model,
    rasterize_controls,
)
from .newton import NewtonConfig, NewtonSolver, Trajectory, newton_solve_timestep, simulate
from .training import TrainerConfig, infer_trajectory, physics_loss, smooth_l1, train_all
from .units import UnitConstants

__version__ = "0.1.0"
