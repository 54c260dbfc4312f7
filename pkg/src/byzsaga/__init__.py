"""Byzantine-robust federated learning with SAGA, resampling and the geometric median."""

from .aggregation import GeoMedParams, geometric_median, krum, resample, weiszfeld
from .attacks import AttackSpec
from .engine import Cohort, EngineConfig, run
from .models import Dataset, PartitionScheme, gaussian_blobs, make_oracle, partition
from .theorycheck import bounds, constants

__all__ = [
    "AttackSpec", "Cohort", "Dataset", "EngineConfig", "GeoMedParams", "PartitionScheme",
    "bounds", "constants", "gaussian_blobs", "geometric_median", "krum", "make_oracle",
    "partition", "resample", "run", "weiszfeld",
]
__version__ = "0.1.0"
