"""Local artifact storage under an output directory (default results/<run_id>/)."""

import logging
from pathlib import Path

from gasnet.paths import ensure_dir, run_dir
from gasnet.settings import get_settings

logger = logging.getLogger(__name__)


def output_dir(run_id: str, out: Path | None = None) -> Path:
    """Explicit --out directory, or results/<run_id>/ under the configured results root."""
    return ensure_dir(Path(out) if out is not None else run_dir(run_id, get_settings().results_dir))


def artifact_path(out: Path, name: str) -> Path:
    """Path for an artifact file (does not create it)."""
    return ensure_dir(Path(out)) / name


def write_artifact(out: Path, name: str, content: bytes | str) -> Path:
    """Write artifact; content can be bytes or str. Returns path."""
    path = artifact_path(out, name)
    if isinstance(content, str):
        content = content.encode("utf-8")
    path.write_bytes(content)
    logger.info("Wrote artifact %s", path)
    return path

