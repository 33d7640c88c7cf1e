"""Versioned checkpoint directories with validating manifests.

A checkpoint is a directory holding ``manifest.json`` (format version,
model kind, class order, encoder identity, shape-determining settings,
config hash) and ``params.pt`` (opaque parameter blob).  Loading validates
the manifest against the current configuration so a checkpoint can never
be silently applied to a mismatched model.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import torch

from .errors import ConfigError

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, state_dict: dict, manifest: dict[str, Any]) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    torch.save(state_dict, directory / "params.pt")
    return directory


def load_checkpoint(path: str | Path) -> tuple[dict[str, Any], dict]:
    directory = Path(path)
    manifest_path = directory / "manifest.json"
    params_path = directory / "params.pt"
    if not manifest_path.exists() or not params_path.exists():
        raise FileNotFoundError(f"not a checkpoint directory: {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format version: {manifest.get('format_version')}"
        )
    state_dict = torch.load(params_path, map_location="cpu", weights_only=True)
    return manifest, state_dict


def validate_manifest(manifest: dict[str, Any], expected: dict[str, Any]) -> None:
    """Compare shape-determining manifest fields against the current config."""
    for key, want in expected.items():
        have = manifest.get(key)
        if have != want:
            raise ConfigError(
                f"checkpoint manifest mismatch for {key!r}: "
                f"checkpoint has {have!r}, current config expects {want!r}"
            )
