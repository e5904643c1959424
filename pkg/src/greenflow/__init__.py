"""Energy-aware network flow classification.

The package turns packet captures into labeled per-flow feature vectors,
trains tree-based traffic classifiers whose inference cost is accounted
node visit by node visit, and searches hyperparameters for operating
points that trade detection quality (Matthews correlation) against
energy drawn per classified sample.
"""
from .capture import CaptureReader, ParsedPacket, decode_frame, read_capture
from .energy import (EnergyReport, HardwareMeter, ProxyMeter, calibrate,
                     make_meter)
from .exceptions import ConfigError, DataError, GreenflowError
from .features import (COLUMNS, FEATURE_COLUMNS, N_FEATURES, Dataset,
                       LabeledSample, flow_to_sample, read_dataset, vectorize,
                       write_dataset)
from .flowmeter import Flow, FlowKey, FlowMeter, join_labels, parse_label_file
from .forest import (ALGORITHMS, ExtraTreesClassifier, Hyperparams,
                     Prediction, RandomForestClassifier, SingleTreeClassifier,
                     deserialize, serialize, train)
from .forest import predict as predict_one
from .metrics import ConfusionMatrix, balanced_accuracy, confusion, f1, mcc
from .optimizer import (SearchSpace, Trial, ensure_default_trial,
                        pareto_front, run_search, select_all_variants,
                        select_balanced, select_variant)
from .pipeline import (RunConfig, build_dataset, error_analysis,
                       run_experiment, split_dataset)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "COLUMNS", "CaptureReader", "ConfigError",
    "ConfusionMatrix", "DataError", "Dataset", "EnergyReport",
    "ExtraTreesClassifier", "FEATURE_COLUMNS", "Flow", "FlowKey", "FlowMeter",
    "GreenflowError", "HardwareMeter", "Hyperparams", "LabeledSample",
    "N_FEATURES", "ParsedPacket", "Prediction", "ProxyMeter",
    "RandomForestClassifier", "RunConfig", "SearchSpace",
    "SingleTreeClassifier", "Trial", "balanced_accuracy", "build_dataset",
    "calibrate", "confusion", "decode_frame", "deserialize",
    "ensure_default_trial", "error_analysis", "f1", "flow_to_sample",
    "join_labels", "make_meter", "mcc",
    "pareto_front", "parse_label_file", "predict_one", "read_capture",
    "read_dataset", "run_experiment", "run_search", "select_all_variants",
    "select_balanced", "select_variant", "serialize", "split_dataset",
    "train", "vectorize", "write_dataset",
]
