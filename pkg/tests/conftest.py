import numpy as np
import pytest

from mrtraj.workspace import OccupancyGrid, Rect


def open_map(width: float = 10.0, height: float = 10.0, boxes=(), resolution: float = 0.1,
             origin=(0.0, 0.0)) -> OccupancyGrid:
    return OccupancyGrid.empty(width, height, resolution, origin).with_boxes(boxes)


def dense_disc_free(grid: OccupancyGrid, c, r: float) -> bool:
    """Oracle: no occupied cell (or outside-map area) within distance r of c, by brute force."""
    b = grid.bounds
    if c[0] - r < b.xmin or c[0] + r > b.xmax or c[1] - r < b.ymin or c[1] + r > b.ymax:
        return False
    jj, ii = np.nonzero(grid.cells)
    x0 = grid.origin[0] + ii * grid.resolution
    y0 = grid.origin[1] + jj * grid.resolution
    dx = np.maximum(np.maximum(x0 - c[0], c[0] - (x0 + grid.resolution)), 0.0)
    dy = np.maximum(np.maximum(y0 - c[1], c[1] - (y0 + grid.resolution)), 0.0)
    return bool(np.all(np.hypot(dx, dy) > r))


def dense_clearance(grid: OccupancyGrid, pts) -> np.ndarray:
    """Oracle: exact distance from each point to the nearest occupied cell or the map border."""
    pts = np.asarray(pts, dtype=float)
    b = grid.bounds
    out = np.minimum.reduce([pts[:, 0] - b.xmin, b.xmax - pts[:, 0], pts[:, 1] - b.ymin, b.ymax - pts[:, 1]])
    jj, ii = np.nonzero(grid.cells)
    x0 = grid.origin[0] + ii * grid.resolution
    y0 = grid.origin[1] + jj * grid.resolution
    for s in range(0, len(pts), 500):
        c = pts[s:s + 500, None, :]
        dx = np.maximum(np.maximum(x0 - c[..., 0], c[..., 0] - (x0 + grid.resolution)), 0.0)
        dy = np.maximum(np.maximum(y0 - c[..., 1], c[..., 1] - (y0 + grid.resolution)), 0.0)
        out[s:s + 500] = np.minimum(out[s:s + 500], np.hypot(dx, dy).min(axis=1))
    return out


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Log one PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""
    def _record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[ACCEPTANCE].append(line)
        print(line)
        return ok
    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def warehouse_runs():
    """Pipeline results on a few seeded warehouse instances, shared by several test files."""
    from mrtraj.harness.pipeline import Budget, run_pipeline
    from mrtraj.harness.scenario import gen_warehouse
    out = {}
    for N, seed in ((4, 0), (8, 1)):
        sc = gen_warehouse(seed, N)
        out[(N, seed)] = (sc, {m: run_pipeline(sc, m, Budget()) for m in ("coupled", "prioritized")})
    return out


__all__ = ["open_map", "dense_disc_free", "Rect"]
