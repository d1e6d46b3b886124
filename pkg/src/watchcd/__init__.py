"""Month-level change-event localization for per-site embedding time series."""

__version__ = "0.1.0"

from .datamodel import Dataset, ScoreSeries, SiteLabel, SiteSeries, TimeAxis, load_dataset, save_dataset
from .errors import WatchError
from .eval import EvalConfig, EvalReport, directional_gap, macro_average, recall_suite
from .kernels import BACKEND
from .normalize import CalendarStats, normalize_dataset
from .synth import SynthSpec, generate_dataset, oracle_recall
from .ted import TedConfig, ted_score

__all__ = [
    "BACKEND",
    "CalendarStats",
    "Dataset",
    "EvalConfig",
    "EvalReport",
    "ScoreSeries",
    "SiteLabel",
    "SiteSeries",
    "SynthSpec",
    "TedConfig",
    "TimeAxis",
    "WatchError",
    "directional_gap",
    "generate_dataset",
    "load_dataset",
    "macro_average",
    "normalize_dataset",
    "oracle_recall",
    "recall_suite",
    "save_dataset",
    "ted_score",
]
