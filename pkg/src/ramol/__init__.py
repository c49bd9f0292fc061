"""Retrieval-augmented memory for online learning under concept drift."""

__version__ = "0.1.0"

from .evaluation import (
    ABLATIONS,
    AggregateMetrics,
    RegretRecord,
    RunMetrics,
    ablation_suite,
    aggregate,
    bench,
    prequential_run,
    regret_run,
)
from .learner import Learner, LearnerConfig, StepOutcome, apply_ablation, gated_batch, naive_batch
from .memory import Buffer, MemoryEntry, NeighbourSet, retrieve, similarity_gate, similarity_weights
from .model import (
    MlpParams,
    WeightedExample,
    cross_entropy,
    forward,
    init_params,
    sgd_step,
    weighted_grad,
    weighted_loss,
)
from .stream import (
    CsvSchema,
    Example,
    GaussianComponent,
    MixtureGenerator,
    RegimeSpec,
    StandardizerState,
    bayes_predict,
    drift_budget,
    gen_piecewise_stream,
    load_stream_spec,
    open_csv_stream,
    standardize,
)
