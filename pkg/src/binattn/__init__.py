"""Binary query/key attention on CPU.

Queries and keys are reduced to packed sign bits plus one scale each, their
similarities come from XNOR/popcount, and the coefficient-value product can
run in uint8 x int8 integer arithmetic inside a tiled online-softmax kernel.
"""

from ._backend import BACKEND, get_threads, set_threads
from .attention import (
    AttentionConfig,
    AttentionOutput,
    BiasSpec,
    binary_attention_fused,
    binary_attention_unfused,
    materialize_bias,
    pv_error_bound,
    pv_error_envelope,
    reference_attention,
)
from .bitops import binary_gemm, hamming_distance, pack_signs, xnor_popcount_dot
from .errors import (
    BinAttnError,
    ConfigError,
    FormatError,
    IoError,
    NumericalError,
    RangeError,
    ShapeError,
    ValidationError,
)
from .fidelity import FidelityReport, OpsReport, attention_fidelity, count_ops, count_ops_instrumented
from .quantize import (
    ScaledBinary,
    binary_quantize,
    dequantize_values,
    quantize_coeffs,
    quantize_values,
)
from .tensor_io import BitMatrix, DenseMatrix, QuantizedCoeffs, QuantizedValues, read_tensor, write_tensor

__version__ = "0.1.0"
