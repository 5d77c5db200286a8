"""Parallel Bayesian optimisation by stochastic gradient ascent on the multi-points expected improvement."""

from .gp import GpModel, ObservationSet, fit_hyperparameters, posterior_batch
from .kernel import MeanFunction, SeKernelParams
from .policy import run_async_demo, run_outer_loop, suggest
from .qei import closed_form_ei_1, estimate_gradient, estimate_qei, quadrature_qei
from .sga import FeasibleSet, SgaConfig, propose_batch
from .testbed import FUNCTIONS, get_function

__version__ = "0.1.0"

__all__ = [
    "FUNCTIONS",
    "FeasibleSet",
    "GpModel",
    "MeanFunction",
    "ObservationSet",
    "SeKernelParams",
    "SgaConfig",
    "closed_form_ei_1",
    "estimate_gradient",
    "estimate_qei",
    "fit_hyperparameters",
    "get_function",
    "posterior_batch",
    "propose_batch",
    "quadrature_qei",
    "run_async_demo",
    "run_outer_loop",
    "suggest",
]
