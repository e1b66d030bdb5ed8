"""Periodic homogenization of frame-indifferent well energies near SO(2)."""

from .cell import CellOptions, TrustRegionExceeded, solve_corrector, solve_flux_corrector
from .config import ConfigError, ExperimentConfig
from .convexify import CalibrationError, ConvexBound, bound_from_record, build_bound, calibrate
from .energy import DensityParams, make_layered, make_well_density
from .fem import DirichletGrid, PeriodicGrid
from .homogenize import d2w_hom, dw_hom, homogenized_point, rank_one_certificate, w_hom
from .layered import layered_hom, solve_layered
from .macro import LoadData, error_study, solve_eps, solve_hom, two_scale_expand

__version__ = "0.1.0"
