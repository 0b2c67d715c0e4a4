"""bikefault: detecting unusable shared bikes from GPS trajectories.

A numpy library with five layers: raw-file parsing and per-bike joining
(:mod:`~bikefault.data_model`), spatiotemporal feature tensors
(:mod:`~bikefault.feature_engine`), a small reverse-mode autodiff core
(:mod:`~bikefault.numerics`), a transformer encoder with masked-segment
pretraining and linear probing (:mod:`~bikefault.model`,
:mod:`~bikefault.training`), and metric/report tooling
(:mod:`~bikefault.evaluation`).  A synthetic fleet generator
(:mod:`~bikefault.synthetic`) and three baselines
(:mod:`~bikefault.baselines`) support end-to-end runs; the ``bikefault``
command exposes each stage.
"""

__version__ = "0.1.0"

from .data_model import BikeRecord, GpsPoint, Status, TripRecord
from .feature_engine import FeatureTensor, NormStats
from .model import Checkpoint, ModelConfig, TransformerModel
from .training import TrainConfig, finetune, pretrain
from .evaluation import MetricsReport, evaluate

__all__ = [
    "BikeRecord", "GpsPoint", "Status", "TripRecord",
    "FeatureTensor", "NormStats",
    "Checkpoint", "ModelConfig", "TransformerModel",
    "TrainConfig", "finetune", "pretrain",
    "MetricsReport", "evaluate",
    "__version__",
]
