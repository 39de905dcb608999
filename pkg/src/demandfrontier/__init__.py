"""Stochastic consumption-frontier estimation for household electricity demand."""

from .data import Dataset, load_csv, write_csv, summarize
from .model import Family, ModelSpec, build
from .mle import FitResult, fit, certify
from .efficiency import Estimator, efficiency_report, efficiency_scores
from .diagnostics import lr_test, wald_joint, run_ladder, ladder_specs
from .simulate import DgpSpec, generate, monte_carlo

__all__ = [
    "Dataset", "load_csv", "write_csv", "summarize",
    "Family", "ModelSpec", "build",
    "FitResult", "fit", "certify",
    "Estimator", "efficiency_report", "efficiency_scores",
    "lr_test", "wald_joint", "run_ladder", "ladder_specs",
    "DgpSpec", "generate", "monte_carlo",
]
