"""Penalized-spline additive models with structured-covariate terms:
varying coefficients, summed functional (signal) terms, and summed lag
tensors, fitted by penalized IRLS with GCV smoothing selection."""

from .bases import (
    BasisSpec,
    KnotVector,
    PenaltyMatrix,
    center_constraint,
    eval_basis,
    penalty_matrix,
    place_knots,
)
from .data import Dataset, DatasetSchema, ingest
from .errors import (
    DegenerateDataError,
    DimensionError,
    ExtrapolationError,
    FitError,
    FormulaSyntaxError,
    IdentifiabilityError,
    IngestError,
    ResolutionError,
    StructgamError,
    ValidationError,
)
from .families import Gaussian, NegativeBinomial, Poisson, family_from_name
from .fit import FitOptions, FittedModel, fit
from .formula import FormulaAST, parse, resolve, unparse
from .inference import (
    coef_covariance,
    cumulative_effect,
    edf,
    posterior_sample,
    predict,
    term_effect,
)
from .model_io import load_model, save_model
from .tensor import tensor_design, tensor_penalties
from .terms import DesignBlock, TermSpec, assemble_model, build_term

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "KnotVector", "PenaltyMatrix", "center_constraint",
    "eval_basis", "penalty_matrix", "place_knots",
    "Dataset", "DatasetSchema", "ingest",
    "DegenerateDataError", "DimensionError", "ExtrapolationError",
    "FitError", "FormulaSyntaxError", "IdentifiabilityError", "IngestError",
    "ResolutionError", "StructgamError", "ValidationError",
    "Gaussian", "NegativeBinomial", "Poisson", "family_from_name",
    "FitOptions", "FittedModel", "fit",
    "FormulaAST", "parse", "resolve", "unparse",
    "coef_covariance", "cumulative_effect", "edf", "posterior_sample",
    "predict", "term_effect",
    "load_model", "save_model",
    "tensor_design", "tensor_penalties",
    "DesignBlock", "TermSpec", "assemble_model", "build_term",
    "__version__",
]
