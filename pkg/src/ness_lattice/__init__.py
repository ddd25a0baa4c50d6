"""Nonequilibrium steady states of boundary-driven anharmonic lattices."""

__version__ = "0.1.0"

from .model import (
    LANGEVIN,
    MARKOVIAN_AUX,
    LatticeTopology,
    ModelWarning,
    PolynomialPotential,
    ReservoirSpec,
    SystemConfig,
    SystemState,
    build_chain,
    build_graph,
    build_hypercube,
    check_H1,
    check_H2,
    diamond_fixture,
    potential_energy,
    potential_gradient,
    total_energy_G,
)
from .dynamics import (
    GLEConfig,
    IntegratorSpec,
    TrajectoryRecord,
    simulate,
    simulate_ensemble,
    simulate_gle,
    step,
)
