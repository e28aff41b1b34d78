"""
gridfreq: integral frequency control with economic dispatch on DC power-flow grids
"""

import re
from pathlib import Path


def _get_version_from_pyproject():
    """Get version from pyproject.toml file."""
    try:
        pyproject_path = Path(__file__).parent.parent.parent / "pyproject.toml"
        if pyproject_path.exists():
            content = pyproject_path.read_text()
            match = re.search(r'^version\s*=\s*["\']([^"\']+)["\']', content, re.MULTILINE)
            if match:
                return match.group(1)
    except OSError:
        pass

    # installed without the source tree
    return "0.3.0"


__version__ = _get_version_from_pyproject()

from .main import main  # noqa: E402

__all__ = ["main"]
