"""Crafty: persistent transactions by nondestructive undo logging over
emulated hardware transactional memory and emulated non-volatile memory."""

from __future__ import annotations

from .engine import CraftyEngine, EngineConfig, EngineStats, Path
from .htm import AbortKind, Htm, HtmConfig, TxnAborted
from .memory import NvmConfig, NvmImage, dump_snapshot, load_snapshot
from .recovery import LogsMeta, RecoveredImage, recover, scan_sequences
from .scheduler import Schedule, Scheduler
from .system import Layout, System, SystemConfig
from .undo_log import ThreadLog

__version__ = "0.1.0"

__all__ = [
    "CraftyEngine", "EngineConfig", "EngineStats", "Path",
    "AbortKind", "Htm", "HtmConfig", "TxnAborted",
    "NvmConfig", "NvmImage", "dump_snapshot", "load_snapshot",
    "LogsMeta", "RecoveredImage", "recover", "scan_sequences",
    "Schedule", "Scheduler",
    "Layout", "System", "SystemConfig",
    "ThreadLog",
]
