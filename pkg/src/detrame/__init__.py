"""Deep transform and metric learning: Q-metric prox activations as unrolled RNNs."""
from .core import (
    AffineTransform, Dictionary, IllConditionedError, QMetric, Regularizer, RnnCell,
    metric_from_dictionary, transform_from_dictionary, validate_spd,
)
from .qprox import (
    ProxProblem, fixed_point_residual, qprox_oracle, qprox_rnn, reparameterize, support_oracle,
)
from .sdl import check_equivalence, sparse_code

__version__ = "0.1.0"

__all__ = [
    "AffineTransform", "Dictionary", "IllConditionedError", "QMetric", "Regularizer", "RnnCell",
    "metric_from_dictionary", "transform_from_dictionary", "validate_spd",
    "ProxProblem", "fixed_point_residual", "qprox_oracle", "qprox_rnn", "reparameterize",
    "support_oracle", "check_equivalence", "sparse_code",
]
