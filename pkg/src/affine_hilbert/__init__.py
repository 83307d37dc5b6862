"""Galerkin-truncated affine diffusions on the canonical cone ``H_I^+ + H_J``."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AffineError,
    BlowUpError,
    ConstructionError,
    DomainError,
    NumericalError,
    SolverDivergenceError,
    StiffnessError,
)
from .hilbert import IndexPartition, cpair, hermitian_inner, in_U, psd_check, psd_sqrt  # noqa: E402
from .decay import SequenceRule, TailDecay  # noqa: E402
from .params import AffineParams, S_op, mu  # noqa: E402

__all__ = [
    "AffineError", "BlowUpError", "ConstructionError", "DomainError", "NumericalError",
    "SolverDivergenceError", "StiffnessError", "IndexPartition", "cpair", "hermitian_inner",
    "in_U", "psd_check", "psd_sqrt", "SequenceRule", "TailDecay", "AffineParams", "S_op", "mu",
]
