"""Orthogonal and Lipschitz-bounded convolutions with exact spectral checks."""

from .blockconv import (
    apply_conv_cyclic,
    block_conv,
    conv_singular_values_dft,
    operator_matrix_cyclic,
    operator_matrix_zero_pad,
)
from .errors import (
    ConvergenceWarning,
    DataError,
    DivergenceError,
    FormatError,
    InvalidKernelError,
    NonDifferentiableError,
    OrthoconvError,
    PreconditionError,
    RankDeficiencyWarning,
    ShapeError,
    SignatureWarning,
)
from .linalg import bjorck, orthogonalize, power_iteration, projector_from_raw
from .param import BcopParams, bcop, bcop_1d, ossn_normalize, rko, sock_with_ranks, svcm_clip
from .topology import component_signature_2x2, sock_invariant

__version__ = "0.1.0"
