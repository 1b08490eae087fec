"""Chebyshev-polynomial Kolmogorov-Arnold networks with discrete degree selection."""

from .chebyshev import eval_T, eval_basis_row, eval_dT
from .data import Dataset, OUParams, gen_ou, load_csv, make_lagged, split, weighted_r2
from .degree import (AnnealSchedule, CostMatrix, DegreeAssignment, QuboProblem, build_cost_matrix,
                     build_qubo, decode_assignment, qubo_energy, solve_evolutionary, solve_exact,
                     solve_greedy, solve_sa)
from .errors import (CPKANError, ConfigError, DataError, InvalidInputError, NumericalFailure,
                     UndefinedMetricError)
from .lstsq import FitResult, fit_coeffs, mse
from .network import (KanLayer, KanNetwork, KanNeuron, cumulative_transform, layer_forward,
                      network_forward, neuron_forward, project)
from .training import TrainConfig, TrainHistory, adam_step, backward, loss_eval, two_phase_train

__version__ = "0.1.0"
