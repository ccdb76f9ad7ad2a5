"""Birkhoff normal forms for NLS with a random convolution potential on a truncated Fourier lattice."""

from .lattice import Index, Lattice, State, analytic_constant, make_index, norm_rho, tail_norm
from .nonlinearity import SeriesSpec, expand, parse_nonlinearity, preset_power
from .normal_form import NormalFormResult, build, choose_parameters, lie_transform, solve_homological, verify_conjugacy
from .polynomial import Frequencies, Polynomial, divisor, poisson, poly_norm
from .potential import NonResReport, Potential, calibrate, check_nonres, frequencies, measure_estimate, sample_potential
from .simulate import Observables, Trajectory, flow_poly_hamiltonian, observables, simulate, step_strang

__version__ = "0.1.0"

__all__ = [
    "Index", "Lattice", "State", "analytic_constant", "make_index", "norm_rho", "tail_norm",
    "SeriesSpec", "expand", "parse_nonlinearity", "preset_power",
    "NormalFormResult", "build", "choose_parameters", "lie_transform", "solve_homological", "verify_conjugacy",
    "Frequencies", "Polynomial", "divisor", "poisson", "poly_norm",
    "NonResReport", "Potential", "calibrate", "check_nonres", "frequencies", "measure_estimate", "sample_potential",
    "Observables", "Trajectory", "flow_poly_hamiltonian", "observables", "simulate", "step_strang",
]
