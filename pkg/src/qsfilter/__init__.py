"""Quantum stochastic filtering: star-matrix Ito algebra, a time-bin noise
lattice with an exact conditional-expectation oracle, and the filtering
equations for continuously observed finite-dimensional systems."""

from .starmatrix import (
    BlockIndex,
    ItoDifferential,
    StarMatrix,
    classify,
    hp_generator,
    ito_product,
    polarized_product,
    qs_ito_formula,
    star_involution,
)
from .fockbin import (
    NoiseLattice,
    ObservationProcess,
    conditional_expectation_oracle,
    nondemolition_residual,
    unitary_cocycle,
)
from .filtering import (
    FilterState,
    ObservationChannel,
    SystemModel,
    gain_solve,
    initial_condition,
    run_linear_dual,
    step_counting,
    step_diffusive,
    update_diffusive,
)
from .spin import SpinScenario, collapse_check, simulate_spin, simulate_spin_linear, spin_model

__version__ = "0.1.0"
