"""Cybersickness prediction from head-mounted-display kinematics, with an
EDA-trained teacher distilled into a kinematic-only student."""

from .errors import CyberseerError
from .telemetry import RawSession, generate_cohort, load_session, save_session
from .features import SegmentDataset, build_dataset
from .models import build_model, preset

__version__ = "0.1.0"

__all__ = [
    "CyberseerError",
    "RawSession",
    "SegmentDataset",
    "build_dataset",
    "build_model",
    "generate_cohort",
    "load_session",
    "preset",
    "save_session",
]
