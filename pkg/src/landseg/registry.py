"""The model registry backing the service and the bench command.

A registry file is a JSON list of entries:

    [{"id": "unet", "name": "U-Net", "description": "...",
      "checkpoint": "ckpt/unet.lseg", "architecture": "unet-plain",
      "f1": 0.73}, ...]

Checkpoint paths are resolved relative to the registry file. Headers are
validated at startup; entries whose checkpoint cannot be opened are dropped
with a logged reason. Weights load lazily on first prediction and are then
cached (models are safe for concurrent eval-mode forward).
"""
import json
import logging
import os
import threading
from dataclasses import dataclass

from .checkpoint import CheckpointError, load_checkpoint, read_header
from .data import BandStats, ChannelConfig

log = logging.getLogger(__name__)


@dataclass
class RegistryEntry:
    id: str
    name: str
    description: str
    checkpoint: str
    architecture: str
    f1: float | None = None

    def public_fields(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "architecture": self.architecture,
            "f1": self.f1,
        }


class ModelRegistry:
    """Immutable after construction; resolution order is id-sorted."""

    def __init__(self, entries):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate registry ids: {dupes}")
        self._entries = sorted(entries, key=lambda e: e.id)
        self._loaded = {}
        self._lock = threading.Lock()

    @staticmethod
    def from_file(path: str) -> "ModelRegistry":
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        if not isinstance(raw, list):
            raise ValueError(f"{path}: registry must be a JSON list")
        base = os.path.dirname(os.path.abspath(path))
        entries = []
        for item in raw:
            entry = RegistryEntry(
                id=item["id"],
                name=item.get("name", item["id"]),
                description=item.get("description", ""),
                checkpoint=os.path.join(base, item["checkpoint"]),
                architecture=item.get("architecture", ""),
                f1=item.get("f1"),
            )
            try:
                header = read_header(entry.checkpoint)
            except (OSError, CheckpointError) as e:
                log.warning("registry: dropping %r (%s)", entry.id, e)
                continue
            if not entry.architecture:
                entry.architecture = header["spec"].get("arch", "")
            entries.append(entry)
        return ModelRegistry(entries)

    def entries(self):
        return list(self._entries)

    def ids(self):
        return [e.id for e in self._entries]

    def get_entry(self, model_id: str) -> RegistryEntry:
        for e in self._entries:
            if e.id == model_id:
                return e
        raise KeyError(model_id)

    def get_model(self, model_id: str):
        """(model, channels, stats) for one id, loading weights on demand."""
        entry = self.get_entry(model_id)
        with self._lock:
            if model_id not in self._loaded:
                model, header = load_checkpoint(entry.checkpoint)
                channels = (ChannelConfig.from_dict(header["channels"])
                            if header.get("channels")
                            else ChannelConfig.identity14())
                stats = (BandStats.from_dict(header["band_stats"])
                         if header.get("band_stats") else None)
                self._loaded[model_id] = (model, channels, stats)
            return self._loaded[model_id]
