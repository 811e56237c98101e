"""Post-hoc OOD detection from attribution-gradient abnormalities.

The public surface groups into: a small CNN engine with a reverse-mode tape
(:mod:`tensor`, :mod:`ops`, :mod:`autodiff`), declarative model graphs and
binary archives (:mod:`graph`, :mod:`archive`), the abnormality scorers and
baselines (:mod:`scoring`, :mod:`baselines`), detection metrics
(:mod:`metrics`, :mod:`benchmark`), and the ``gaia`` CLI (:mod:`cli`).
"""

from .archive import SampleBatch, WeightArchive, load_dataset, load_weights, write_archive
from .autodiff import Tape, TapGradients, backward, record_forward
from .baselines import EnergyScorer, MspScorer, score_energy, score_msp
from .errors import ConfigurationError, DataError, GaiaError, UsageError
from .graph import ModelGraph, forward, load_graph, parse_graph, plain_forward
from .metrics import DetectionMetrics, ScoreSet, compute_auroc, compute_fpr95, evaluate_scores
from .scoring import (
    AbnormalityMatrix,
    GaiaAScorer,
    GaiaZScorer,
    ScorerConfig,
    channel_avg_expectation,
    decide,
    fused_logsoftmax_seed,
    matrix_pnorm,
    score_gaia_a,
    score_gaia_z,
    zero_deflation_expectation,
)
from .tensor import Tensor, as_tensor

__version__ = "0.1.0"

__all__ = [
    "AbnormalityMatrix",
    "ConfigurationError",
    "DataError",
    "DetectionMetrics",
    "EnergyScorer",
    "GaiaAScorer",
    "GaiaError",
    "GaiaZScorer",
    "ModelGraph",
    "MspScorer",
    "SampleBatch",
    "ScoreSet",
    "ScorerConfig",
    "Tape",
    "TapGradients",
    "Tensor",
    "UsageError",
    "WeightArchive",
    "as_tensor",
    "backward",
    "channel_avg_expectation",
    "compute_auroc",
    "compute_fpr95",
    "decide",
    "evaluate_scores",
    "forward",
    "fused_logsoftmax_seed",
    "load_dataset",
    "load_graph",
    "load_weights",
    "matrix_pnorm",
    "parse_graph",
    "plain_forward",
    "record_forward",
    "score_energy",
    "score_gaia_a",
    "score_gaia_z",
    "score_msp",
    "write_archive",
    "zero_deflation_expectation",
]
