"""Online estimation of AC line admittances with A-optimal input design."""

from .casefile import CaseModel, branch_to_admittance, load_case, parse_case
from .estimator import Prior, fisher_information, mre, solve_mle
from .grid import Bounds, Network
from .loop import RunConfig, compare, compare_seeds, default_config, run
from .measurement import GridSimulator, NoiseModel, simulate_measurement
from .oed import OedConfig, baseline_input, oed_objective, solve_oed
from .powerflow import solve_powerflow

__version__ = "0.1.0"

__all__ = [
    "Bounds", "CaseModel", "GridSimulator", "Network", "NoiseModel", "OedConfig", "Prior",
    "RunConfig", "baseline_input", "branch_to_admittance", "compare", "compare_seeds", "default_config",
    "fisher_information", "load_case", "mre", "oed_objective", "parse_case", "run",
    "simulate_measurement", "solve_mle", "solve_oed", "solve_powerflow",
]
