from __future__ import annotations

import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quakemesh.core import GeoLocation

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"

DEG_PER_10KM = 10.0 / (math.pi * 6371.0 / 180.0)


def grid_locations(rows: int = 5, cols: int = 5) -> dict[str, GeoLocation]:
    """The bundled grid: 10 km spacing, row-major ids d01..dNN."""
    out = {}
    for r in range(rows):
        for c in range(cols):
            out[f"d{r * cols + c + 1:02d}"] = GeoLocation(r * DEG_PER_10KM, c * DEG_PER_10KM)
    return out


@pytest.fixture
def grid25() -> dict[str, GeoLocation]:
    return grid_locations()


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR
