"""Encrypted federated RNN training on a simulated leveled SIMD homomorphic engine."""

__version__ = "0.1.0"

from .approx import ClipSpec, PolyApprox, clip_poly, fit, load_poly, save_poly
from .costmodel import CostReport, choose_delta, ciphertext_counts, compare_packings
from .engine import CostLedger, Engine, EngineParams
from .estimator import FederatedRNNClassifier, FederatedRNNRegressor
from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    DimensionError,
    HeFedError,
    LayoutError,
    LevelError,
    ProtocolError,
    StateError,
)
from .federation import Federation, ModelConfig, TrainConfig, TreeTopology
from .packing import matmul, pack, transpose, unpack

__all__ = [
    "ClipSpec", "PolyApprox", "clip_poly", "fit", "load_poly", "save_poly",
    "CostReport", "choose_delta", "ciphertext_counts", "compare_packings",
    "CostLedger", "Engine", "EngineParams",
    "FederatedRNNClassifier", "FederatedRNNRegressor",
    "ConfigError", "ConvergenceError", "DataError", "DimensionError", "HeFedError", "LayoutError", "LevelError",
    "ProtocolError", "StateError",
    "Federation", "ModelConfig", "TrainConfig", "TreeTopology",
    "matmul", "pack", "transpose", "unpack",
]
