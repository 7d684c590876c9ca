"""Run manifests written next to every command's outputs."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    parameters: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    duration_s: float = 0.0
    _started: float = field(default_factory=time.perf_counter, repr=False)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def finish(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        self.outputs = {
            p.name: sha256_file(p)
            for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name != MANIFEST_NAME
        }
        self.duration_s = round(time.perf_counter() - self._started, 3)
        doc = {
            "command": self.command,
            "argv": self.argv,
            "parameters": self.parameters,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "tool_version": self.version,
            "duration_s": self.duration_s,
        }
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path
