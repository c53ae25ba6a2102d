import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT / "src") not in sys.path:
    sys.path.insert(0, str(ROOT / "src"))

TOY_DIR = ROOT / "data" / "toy"


@pytest.fixture(scope="session")
def toy_manifest_path():
    return TOY_DIR / "manifest.json"


@pytest.fixture(scope="session")
def toy_contours_dir():
    return TOY_DIR / "contours"


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT-compile once so per-test timings measure the algorithms
    from cephgeo._kernels import warmup

    warmup()


def rotate_translate(points, angle_rad, tx, ty):
    """Rigid transform helper shared across geometry tests."""
    pts = np.asarray(points, dtype=np.float64)
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.array([tx, ty])
