"""Engine selection by name, with the matching recovery procedure."""

from __future__ import annotations

from ..baselines import HtmOnlyEngine, RedoBufferedEngine, UndoPerWriteEngine, recover_redo, recover_undo
from ..engine import VARIANTS, CraftyEngine, EngineConfig
from ..recovery import recover

ENGINES = VARIANTS + ("undo", "redo", "htm-only")
DURABLE = VARIANTS + ("undo", "redo")


def make_engine(name: str, system, config: EngineConfig | None = None):
    if name in VARIANTS:
        cfg = config or EngineConfig()
        cfg.variant = name
        return CraftyEngine(system, cfg)
    if name == "undo":
        return UndoPerWriteEngine(system)
    if name == "redo":
        return RedoBufferedEngine(system)
    if name == "htm-only":
        return HtmOnlyEngine(system, retries=(config or EngineConfig()).retries)
    raise ValueError(f"unknown engine {name!r}; choose from {', '.join(ENGINES)}")


def recovery_for(name: str):
    if name in VARIANTS:
        return recover
    if name == "undo":
        return recover_undo
    if name == "redo":
        return recover_redo
    raise ValueError(f"engine {name!r} has no recovery procedure")
