"""Secure approximate nearest-neighbor classification over an
instrumented mock homomorphic-encryption backend.

The server classifies an encrypted 2D query against a labeled grid
database by estimating the mean and spread of the encrypted distance
distribution, thresholding at the k/n quantile, and majority-voting the
class labels below the threshold -- in low multiplicative depth and
O(n sqrt(p)) non-scalar multiplications, without ever decrypting.
"""

from .classifier import (LabeledDatabase, ProtocolParams,
                         classify_with_majority, make_protocol_params,
                         server_classify)
from .data_eval import (EvalReport, GridDataset, RawDataset, grid_dataset,
                        leave_one_out_f1, load_wdbc, plain_knn)
from .he_sim import Cipher, EvalMetrics, decrypt, encrypt, keygen, metering
from .protocol_io import (QueryMessage, ResponseMessage, decode_message,
                          encode_message, run_client, run_server)
from .ring import ParameterError, RingParams, select_ring_params

__all__ = [
    "Cipher", "EvalMetrics", "EvalReport", "GridDataset", "LabeledDatabase",
    "ParameterError", "ProtocolParams", "QueryMessage", "RawDataset",
    "ResponseMessage", "RingParams", "classify_with_majority",
    "decode_message", "decrypt", "encode_message", "encrypt", "grid_dataset",
    "keygen", "leave_one_out_f1", "load_wdbc", "make_protocol_params",
    "metering", "plain_knn", "run_client", "run_server", "select_ring_params",
    "server_classify",
]

__version__ = "1.0.0"
