# -*- coding: utf-8 -*-
"""
Emitted files: JSON helpers, model persistence and the run manifest.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, packages_distributions, version
from pathlib import Path
from typing import Any, Optional

import numpy as np
import pandas as pd

from .errors import DataError
from .forest import RandomForest
from .mlp import MlpModel

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TRACKED_PACKAGES = ("numpy", "pandas", "python-dotenv")


def _plain(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def to_json(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True,
                      default=_plain) + "\n"


def write_json(path: Path, data: Any) -> Path:
    """
    Write data as sorted, indented JSON.

    Args:
        path: Target file.
        data: JSON-compatible data; numpy values are converted.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.write_text(to_json(data), encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


def save_model(path: Path, model: MlpModel) -> Path:
    return write_json(path, model.to_dict())


def load_model(path: Path) -> MlpModel:
    return MlpModel.from_dict(read_json(path))


def save_forest(path: Path, forest: RandomForest) -> Path:
    return write_json(path, forest.to_dict())


def load_forest(path: Path) -> RandomForest:
    return RandomForest.from_dict(read_json(path))


def load_delta(path: Path) -> np.ndarray:
    """
    Read a shift vector written one value per line.

    Raises:
        DataError: The file is unreadable or holds a non-numeric line.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").split()
        return np.array([float(line) for line in lines])
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read shift vector {path}: {e}") from e


def get_content_hash(content: str) -> str:
    """SHA-256 hex digest of text."""
    return hashlib.sha256(content.encode("utf-8")).hexdigest()


def _distribution(package: str) -> str:
    dists = packages_distributions().get(package, [])
    return dists[0] if dists else package


def package_versions() -> dict[str, Optional[str]]:
    """Installed versions of the numeric stack and of this package."""
    names = list(TRACKED_PACKAGES)
    pkg = (__package__ or "").split(".", maxsplit=1)[0]
    names.append(_distribution(pkg))
    versions = {}
    for name in names:
        try:
            versions[name] = version(name)
        except PackageNotFoundError:
            versions[name] = None
    return versions


class RunArtifacts:
    """
    Output directory of one command.

    Every file goes through this object so the manifest lists exactly
    what the run emitted.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.files: set[str] = set()

    def path(self, name: str) -> Path:
        return self.directory / name

    def register(self, path: Path) -> Path:
        path = Path(path)
        self.files.add(path.resolve().relative_to(self.directory.resolve()).as_posix())
        return path

    def write_json(self, name: str, data: Any) -> Path:
        return self.register(write_json(self.path(name), data))

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text, encoding="utf-8")
        return self.register(path)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format="%.17g")
        return self.register(path)

    def write_manifest(self, command: str, config_hash: str, seed: int) -> Path:
        """Write manifest.json; it lists every registered file but itself."""
        manifest = {
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "versions": package_versions(),
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": sorted(self.files),
        }
        path = write_json(self.path(MANIFEST), manifest)
        logger.info("Wrote %s (%d files)", path, len(self.files))
        return path
