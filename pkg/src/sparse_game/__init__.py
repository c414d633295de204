"""Decay of distant-player influence in sparse network games."""
from .decay import (CostBounds, gamma_sequence, gamma_table, theta_from_game, theta_star,
                    theta_star_uniform, tilde_gamma)
from .errors import ConfigError, ConvergenceError, InfeasibleError, SolverBlowUp, SparseGameError
from .graph import Graph, NkhTable, build_chain, build_lattice, build_tree, nkh_table

__all__ = [
    "CostBounds", "gamma_sequence", "gamma_table", "theta_from_game", "theta_star",
    "theta_star_uniform", "tilde_gamma",
    "ConfigError", "ConvergenceError", "InfeasibleError", "SolverBlowUp", "SparseGameError",
    "Graph", "NkhTable", "build_chain", "build_lattice", "build_tree", "nkh_table",
]
