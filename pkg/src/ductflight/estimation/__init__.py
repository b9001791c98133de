from .dataset import DATASET_COLUMNS, augment_mirror, features, labels
from .ekf import EkfState, ekf_predict, ekf_update
from .geometric import GeometricProblem, GeometricSolution, problem_from_frame, solve_geometric
from .mlp import MlpModel, TrainConfig, TrainReport, load_model, mlp_forward, save_model, train_mlp

__all__ = [
    "DATASET_COLUMNS", "augment_mirror", "features", "labels",
    "EkfState", "ekf_predict", "ekf_update",
    "GeometricProblem", "GeometricSolution", "problem_from_frame", "solve_geometric",
    "MlpModel", "TrainConfig", "TrainReport", "load_model", "mlp_forward", "save_model", "train_mlp",
]
