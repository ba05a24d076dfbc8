"""Neural conditional probability: learn a truncated SVD of the conditional
expectation operator and answer conditional queries from it."""
from .numerics import DimensionError, NotPSDError, NumericError
from .embeddings import MlpSpec, EmbeddingModel, StandardizationStats
from .trainer import TrainConfig, FittedModel, TrainingDiverged, train
from .postprocess import center, whiten, raw, as_operator
from .inference import (
    ConditioningEvent,
    CdfGrid,
    ConfidenceInterval,
    cond_cdf,
    cond_covariance,
    cond_expectation,
    cond_mean,
    cond_moment,
    cond_probability,
    cond_quantile,
    interval_search,
)
from .datasets import GeneratorSpec, SampleSet, generate, load_csv

__version__ = "0.1.0"
