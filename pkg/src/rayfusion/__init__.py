"""Multi-label volumetric reconstruction with exact ray potentials."""

from .grid import FREE, BinaryLabeling, LabelField, LabelSpace, VoxelGrid, argmax_round, uniform_init
from .rays import Ray, RayBundle, normalize
from .raypot import Branch, build_visibility, majorize
from .regularizer import SmoothnessModel, feasible_z, smoothness_energy
from .solver import EnergyReport, Problem, SolverConfig, project_simplex, reconstruct, total_energy

__version__ = "0.1.0"
