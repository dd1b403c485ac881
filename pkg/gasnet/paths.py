"""Centralized repo, result and data path handling."""

from pathlib import Path

PACKAGE_ROOT = Path(__file__).resolve().parent
REPO_ROOT = PACKAGE_ROOT.parent
NETWORKS_ROOT = PACKAGE_ROOT / "networks"
RESULTS_ROOT = REPO_ROOT / "results"


def run_dir(run_id: str, root: Path | None = None) -> Path:
    """Output directory for a run: results/<run_id>/."""
    return (root or RESULTS_ROOT) / run_id


def builtin_network_path(name: str) -> Path:
    """Path of a bundled network file: gasnet/networks/<name>.json."""
    return NETWORKS_ROOT / f"{name}.json"


def ensure_dir(path: Path) -> Path:
    """Create the directory (and parents) if missing. Returns it."""
    path.mkdir(parents=True, exist_ok=True)
    return path
