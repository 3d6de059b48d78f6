"""Hybrid SLC/TLC/QLC SSD simulator with retry-gated block mode conversion."""
from .flash import FlashMode, FlashModel, ReliabilityStage, rber, retry_count
from .ftl import FTL, Geometry, OutOfSpaceError
from .policy import Heat, Policy, PolicyKind, PolicyThresholds
from .engine import Simulator, StatsSnapshot, precondition

__version__ = "0.1.0"
