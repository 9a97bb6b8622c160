"""Bessel capacities, dyadic capacitary potentials and maximal solutions of
-Δu + u^q = 0 outside compact sets, with empirical checks of the estimates
relating them."""
__version__ = "0.1.0"

from .capacity import BesselCapacity, CapacityEstimate, capacity, dual_lower_bound
from .elliptic import (MaximalSolution, SolveReport, ko_bound, ko_constant, maximal_solution,
                       radial_large_solution, solve_dirichlet, solve_measure_data)
from .geometry import Lattice, SetDescriptor, rasterize, rescale_to_unit, shell_decompose
from .kernel import bessel_kernel, kernel_table
from .potential import (CapacitaryPotential, PotentialReport, capacitary_potential,
                        star_potential, wiener_classify)
from .verify import bilateral_ratio_report, property_suite, wiener_crosscheck

__all__ = [
    "BesselCapacity", "CapacityEstimate", "capacity", "dual_lower_bound",
    "MaximalSolution", "SolveReport", "ko_bound", "ko_constant", "maximal_solution",
    "radial_large_solution", "solve_dirichlet", "solve_measure_data",
    "Lattice", "SetDescriptor", "rasterize", "rescale_to_unit", "shell_decompose",
    "bessel_kernel", "kernel_table",
    "CapacitaryPotential", "PotentialReport", "capacitary_potential", "star_potential",
    "wiener_classify", "bilateral_ratio_report", "property_suite", "wiener_crosscheck",
]
