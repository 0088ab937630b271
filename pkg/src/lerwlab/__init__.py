"""Monte Carlo toolkit for three-dimensional loop-erased random walk."""

from .estimators import (Estimate, Moments, OccupationMeasure, MinkowskiSample, PreconditionError,
                         decompose_one_point, decoupling_factorization, decoupling_ratio, estimate_ball_hit,
                         estimate_ball_hit_profile, estimate_es, estimate_one_point, estimate_two_point, mean_length,
                         minkowski_content, occupation_measure)
from .harmonic import ScalarField, exit_distribution, expected_exit_time, green_function, hitting_field
from .lattice import (X_HAT, BallDomain, Curve, DyadicBox, GeometryContext, LatticePoint, hausdorff_distance,
                      nearest_lattice_point, rho_distance)
from .loop_erasure import SelfAvoidingPath, ilerw_sample, lerw_sample, loop_erase
from .rng import SeedSpec
from .scaling import (PowerLawFit, RatioTestReport, asymptotic_constant_fit, estimate_beta, fit_power_law,
                      funceq_check, minkowski_occupation_test)
from .walks import LatticePath, conditioned_walk, srw_transient, srw_until_exit, srw_until_hit_or_exit

__version__ = "0.1.0"
