"""Transferability scores for pretrained features.

Shrinkage-based H-score (with a Woodbury fast path for ``n < d``), the
pseudo-inverse H-score, NCE, LEEP, NLEEP and their entropy-normalized
forms, LogME, plus tooling to correlate scores with fine-tuned accuracy.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceWarning,
    DegenerateInputError,
    NumericalError,
    ValidationError,
    XferScoreError,
)
from .hscore import HScoreResult, hscore_original, hscore_shrunk  # noqa: E402
from .logme import LogMEResult, logme  # noqa: E402
from .pseudometrics import label_entropy, leep, nce, nleep, normalize_metric  # noqa: E402

__all__ = [
    "__version__",
    "ConvergenceWarning",
    "DegenerateInputError",
    "HScoreResult",
    "LogMEResult",
    "NumericalError",
    "ValidationError",
    "XferScoreError",
    "hscore_original",
    "hscore_shrunk",
    "label_entropy",
    "leep",
    "logme",
    "nce",
    "nleep",
    "normalize_metric",
]
