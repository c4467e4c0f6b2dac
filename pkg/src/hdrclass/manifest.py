"""Run manifests written next to every CLI output."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from datetime import datetime, timezone

import jsonschema

from . import __version__

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hdrclass run manifest",
    "type": "object",
    "required": ["tool", "version", "command", "argv", "config", "seed", "inputs", "outputs", "started", "finished"],
    "properties": {
        "tool": {"const": "hdrclass"},
        "version": {"type": "string"},
        "command": {"type": "string"},
        "argv": {"type": "array", "items": {"type": "string"}},
        "config": {"type": "object"},
        "seed": {"type": ["integer", "null"]},
        "inputs": {
            "type": "object",
            "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        },
        "outputs": {"type": "array", "items": {"type": "string"}},
        "started": {"type": "string", "format": "date-time"},
        "finished": {"type": "string", "format": "date-time"},
        "python": {"type": "string"},
    },
    "additionalProperties": False,
}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def manifest_path(output) -> str:
    return f"{output}.manifest.json"


def build_manifest(command, argv, config, seed, inputs, outputs, started) -> dict:
    return {
        "tool": "hdrclass",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs if p and os.path.isfile(p)},
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": now(),
        "python": platform.python_version(),
    }


def validate_manifest(doc: dict) -> None:
    jsonschema.validate(doc, MANIFEST_SCHEMA)


def write_manifests(doc: dict) -> list[str]:
    validate_manifest(doc)
    written = []
    for out in doc["outputs"]:
        path = manifest_path(out)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        written.append(path)
    return written
