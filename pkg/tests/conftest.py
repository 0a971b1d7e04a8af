import sys
import numpy as np
import pytest

from herdtrack.masks import BitMask


def rect(h, w, x, y, rw, rh):
    """``rw`` x ``rh`` rectangle with top-left corner at (x, y) in an h x w frame."""
    arr = np.zeros((h, w), bool)
    arr[y:y + rh, x:x + rw] = True
    return BitMask.from_array(arr)


def disk(h, w, cx, cy, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return BitMask.from_array((xs - cx) ** 2 + (ys - cy) ** 2 <= r * r)


def random_mask(rng, h=None, w=None, density=None):
    h = h or int(rng.integers(1, 24))
    w = w or int(rng.integers(1, 24))
    p = rng.uniform(0, 1) if density is None else density
    return BitMask.from_array(rng.random((h, w)) < p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
