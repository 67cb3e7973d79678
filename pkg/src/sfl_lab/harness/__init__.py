from .cli import main
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import resolve_seeds, run_one, run_seeds, summarize
from .problem import Problem, build_problem, run_config

__all__ = ["ConfigError", "ExperimentConfig", "Problem", "build_problem", "load_config",
           "main", "parse_config", "resolve_seeds", "run_config", "run_one", "run_seeds",
           "summarize"]
