"""GAT-based botnet flow classification over kNN graphs of reduced NetFlow features."""

from .data import FlowDataset, MinMaxScaler, Split, SplitSpec, load_netflow_csv, split, synth_blobs
from .dimred import (AutoencoderReducer, PCAReducer, ReducerKind, TrainConfig, VAEReducer,
                     fit_pca, kl_standard_normal, reduce, train_autoencoder, train_vae)
from .evaluation import (ClassificationReport, CostEstimate, CostInputs, classification_report,
                         cost_estimate, grid_report)
from .exceptions import (ConfigError, DataError, DegenerateVectorError, DimensionError,
                         GatBotnetError, IncompleteGridError, NumericError)
from .gat import GATClassifier, GatConfig, GatModel, RoleMasks, predict, train_gat
from .graph import KnnGraph, Metric, build_knn_graph, graph_stats, knn_indices
from .pipeline import PipelineConfig, run_grid, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AutoencoderReducer", "ClassificationReport", "ConfigError", "CostEstimate", "CostInputs",
    "DataError", "DegenerateVectorError", "DimensionError", "FlowDataset", "GATClassifier",
    "GatBotnetError", "GatConfig", "GatModel", "IncompleteGridError", "KnnGraph", "Metric",
    "MinMaxScaler", "NumericError", "PCAReducer", "PipelineConfig", "ReducerKind", "RoleMasks",
    "Split", "SplitSpec", "TrainConfig", "VAEReducer", "build_knn_graph", "classification_report",
    "cost_estimate", "fit_pca", "graph_stats", "grid_report", "kl_standard_normal", "knn_indices",
    "load_netflow_csv", "predict", "reduce", "run_grid", "run_pipeline", "split", "synth_blobs",
    "train_autoencoder", "train_gat", "train_vae",
]
