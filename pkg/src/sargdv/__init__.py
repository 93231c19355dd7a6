"""SAR time-series classification of groundwater-dependent vegetation."""

__version__ = "0.1.0"

from .crf import CRFSmoother, CrfParams, smooth  # noqa: E402
from .gbt import GBTClassifier, GbtModel, TrainingConfig, train  # noqa: E402
from .idw import IDWRegressor, IdwParams, filter_boreholes, idw_interpolate  # noqa: E402
from .logreg import LogisticBaseline, train_logreg  # noqa: E402
from .metrics import compute_metrics, confusion, prc_curve, roc_curve  # noqa: E402
from .raster import BinaryMask, DataCube, GridGeometry, load_cube, save_cube  # noqa: E402

__all__ = [
    "BinaryMask", "CRFSmoother", "CrfParams", "DataCube", "GBTClassifier", "GbtModel",
    "GridGeometry", "IDWRegressor", "IdwParams", "LogisticBaseline", "TrainingConfig",
    "compute_metrics", "confusion", "filter_boreholes", "idw_interpolate", "load_cube",
    "prc_curve", "roc_curve", "save_cube", "smooth", "train", "train_logreg",
]
