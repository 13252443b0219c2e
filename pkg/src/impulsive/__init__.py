"""Impulsive semiflows: simulation, Poincare maps, fixed-point indices and C^0 closing experiments."""
from .analysis import DensityReport, RecurrentProxy, Region, densify, density_gap, recurrent_proxy
from .builtins import BUILTIN_SYSTEMS, builtin_system, singular_section_variant
from .config import SystemConfig, config_hash, emit_config, load_config, parse_config
from .errors import *  # noqa: F401,F403
from .fields import VectorFieldSpec
from .geometry import AmbientSpace, Bump, Impulse, SectionPatch, hausdorff_distance, set_distance
from .index import fixed_point_index, index_of_orbit, locate_fixed_point
from .integrate import Tolerances, c0_distance_fields, first_hitting_time, flow
from .perturbation import (
    PerturbationRecord,
    attractify,
    attractify_impulse,
    c0_distance_impulses,
    closing_field,
    closing_impulse,
    permanence_test,
)
from .poincare import PeriodicOrbit, find_periodic_orbit, periodic_orbits_up_to, poincare_hat, return_map
from .semiflow import Trajectory, impulsive_trajectory
from .shadowing import PseudoOrbit, shadowing_falsifier
from .system import ImpulsiveSystem, validate_system

__version__ = "0.1.0"
