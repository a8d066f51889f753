"""Privacy-preserving decision tree inference in a dual-cloud setting.

A provider's tree is shipped encrypted: feature selectors are PRF-masked,
thresholds become FE-encrypted linear coefficients, node indexes are
shuffled and layer-encrypted, and leaf labels are symmetrically encrypted.
Two non-colluding servers then walk exactly one root-to-leaf path per query
over additive shares of the user's features, while a key center derives one
functional key per evaluated node.  The user uploads once and may go
offline until the encrypted label arrives.
"""

from .errors import (
    AuthenticationError,
    LeakageViolation,
    OnePathError,
    OracleMismatch,
    OutOfWindowError,
    ParameterError,
    ProtocolError,
)
from .params import KeyMaterial, SystemParams, derive_params, keygen
from .system import ProtocolSystem, QueryResult
from .tree import (
    CompleteTree,
    PlainTree,
    Quantizer,
    complete_pad,
    plaintext_infer,
    quantize,
    train_cart,
)

__all__ = [
    "AuthenticationError",
    "CompleteTree",
    "KeyMaterial",
    "LeakageViolation",
    "OnePathError",
    "OracleMismatch",
    "OutOfWindowError",
    "ParameterError",
    "PlainTree",
    "ProtocolError",
    "ProtocolSystem",
    "QueryResult",
    "Quantizer",
    "SystemParams",
    "complete_pad",
    "derive_params",
    "keygen",
    "plaintext_infer",
    "quantize",
    "train_cart",
]

__version__ = "0.1.0"
