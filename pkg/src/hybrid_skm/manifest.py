"""Run manifests: the JSON sidecar written next to every output file."""

from __future__ import annotations

import json
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .rng import RNG_FAMILY


def code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class RunManifest:
    command: list
    config: dict
    seed: int | None
    outputs: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    code_version: str = field(default_factory=code_version)
    rng_family: str = RNG_FAMILY
    python: str = field(default_factory=lambda: sys.version.split()[0])
    platform: str = field(default_factory=platform.platform)
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S%z"))

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(_jsonable(asdict(self)), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text())
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def sidecar_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")
