"""Kernelized operator DeePC: product-kernel multi-step predictors and
receding-horizon controllers, with a Van der Pol study harness."""

from .controller import (
    ControlConfig,
    EfficientController,
    FullController,
    NmpcController,
    StepSolution,
    TrackingResult,
    run_receding_horizon,
    solve_efficient_step,
    solve_full_step,
    solve_nmpc_step,
)
from .datagen import Dataset, ExcitationConfig, KMeansConfig, generate_dataset, load_dataset, save_dataset
from .kernels import KernelSpec, gram, kernel_vector
from .plant import LtiPlant, VanDerPolPlant, simulate
from .predictor import ProductPredictor, StackedPredictor, fit_product, fit_stacked, predict_product, predict_reduced
from .solver import NlpProblem, NlpResult, solve_nlp

__version__ = "0.1.0"
