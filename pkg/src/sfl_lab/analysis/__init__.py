from .bounds import MissingConstant, Theorem, bound_report, eval_bound, nc_stepsize_cap
from .checks import Verdict, check_decomposition, check_trace
from .cost import CostInputs, cost_model, sfl_round_inputs, trace_comm_counter
from .estimators import (Constants, client_constants, drift_bound, estimate_eps,
                         estimate_G_sq, estimate_sigma, estimate_smoothness, measure_local_drift)
from .oracle import ConvergenceError, conjugate_gradient, optimum_oracle
from .rates import fit_rate, grad_metric, grad_metric_series, loglog_slope

__all__ = [
    "Constants", "ConvergenceError", "CostInputs", "MissingConstant", "Theorem",
    "Verdict", "bound_report", "check_decomposition", "check_trace",
    "client_constants", "conjugate_gradient", "cost_model", "drift_bound",
    "estimate_G_sq", "estimate_eps", "estimate_sigma", "estimate_smoothness", "eval_bound",
    "fit_rate", "grad_metric", "grad_metric_series", "loglog_slope",
    "measure_local_drift", "nc_stepsize_cap", "optimum_oracle",
    "sfl_round_inputs", "trace_comm_counter",
]
