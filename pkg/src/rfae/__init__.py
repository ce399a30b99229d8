"""Supervised out-of-sample embeddings with random-forest autoencoders."""

from .dataset import Dataset, generate_artificial_tree, load_csv
from .evaluation import knn_accuracy_curve, sia
from .forest import fit_forest, rfgap_matrix, rfgap_oos
from .model import RFAE, RFAEConfig, StageError
from .persistence import load, save

__all__ = ["Dataset", "RFAE", "RFAEConfig", "StageError", "fit_forest", "generate_artificial_tree",
           "knn_accuracy_curve", "load", "load_csv", "rfgap_matrix", "rfgap_oos", "save", "sia"]
__version__ = "0.1.0"
