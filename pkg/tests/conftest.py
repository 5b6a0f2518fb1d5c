import numpy as np
import pytest

from vischunk.scene import GroundTruthInstance, PixelGrid, Scene


def row_scene(sizes, instances):
    """One-pixel-high scene: superpixel i is a run of ``sizes[i]`` pixels.

    ``instances`` lists flat pixel indices per instance.
    """
    labels = np.repeat(np.arange(len(sizes)), sizes)[None, :]
    grid = PixelGrid(labels.shape[1], 1, labels)
    return Scene(grid, [GroundTruthInstance(j, 1, np.array(sorted(px))) for j, px in enumerate(instances)])


def grid_scene(labels, instances):
    """Scene from a 2-D label list and per-instance lists of (row, col) pixels."""
    labels = np.asarray(labels)
    h, w = labels.shape
    insts = [GroundTruthInstance(j, 1, np.array(sorted(r * w + c for r, c in px))) for j, px in enumerate(instances)]
    return Scene(PixelGrid(w, h, labels), insts)


@pytest.fixture
def chain_scene():
    # |g| = 10; s0 = (3, 3), s1 = (5, 3), s2 = (5, 1) as (area, overlap);
    # s3 holds the remaining 3 pixels of g inside 40 background pixels
    g = [0, 1, 2, 3, 4, 5, 8, 13, 14, 15]
    return row_scene([3, 5, 5, 40], [g])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(name: str, ok: bool, detail: str, gate: bool = True):
        status = "PASS" if ok else "FAIL"
        if not gate:
            status += " (report-only)"
        line = f"{status} {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        if gate:
            assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
