import numpy as np
import pytest
from scipy import sparse
from scipy.sparse import csgraph

from navstack.sim_world import bundled_world_path, load_world, world_from_dict


def room_dict(width, height, res=0.05, objects=(), starts=((1.0, 1.0, 0.0),), walls=(), name="room"):
    """Closed rectangular room, interior ``width`` x ``height`` m plus a one-cell wall ring.

    ``walls`` are extra (x0, y0, x1, y1) rectangles in meters, filled as occupied.
    World coordinates put the inner face of the left/bottom walls at x = res, y = res.
    """
    nx = int(round(width / res)) + 2
    ny = int(round(height / res)) + 2
    occ = np.zeros((ny, nx), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    for x0, y0, x1, y1 in walls:
        occ[int(round(y0 / res)):int(round(y1 / res)), int(round(x0 / res)):int(round(x1 / res))] = True
    rows = ["".join("#" if c else "." for c in row) for row in occ[::-1]]
    return {
        "name": name,
        "resolution": res,
        "grid": rows,
        "objects": [{"category": c, "x": x, "y": y, "radius": r} for c, x, y, r in objects],
        "starts": [{"x": x, "y": y, "heading": h} for x, y, h in starts],
    }


def room(width, height, **kw):
    return world_from_dict(room_dict(width, height, **kw))


def dijkstra_8(occupied, goal, res):
    """8-neighbor grid Dijkstra (diagonals may not cut blocked corners)."""
    ny, nx = occupied.shape
    idx = np.arange(ny * nx).reshape(ny, nx)
    free = ~occupied
    rows, cols, w = [], [], []
    for dy, dx, cost in ((0, 1, 1.0), (1, 0, 1.0), (1, 1, np.sqrt(2)), (1, -1, np.sqrt(2))):
        ys0, ys1 = max(0, -dy), ny - max(0, dy)
        xs0, xs1 = max(0, -dx), nx - max(0, dx)
        a = (slice(ys0, ys1), slice(xs0, xs1))
        b = (slice(ys0 + dy, ys1 + dy), slice(xs0 + dx, xs1 + dx))
        ok = free[a] & free[b]
        if dy and dx:
            ok &= free[ys0:ys1, xs0 + dx:xs1 + dx] & free[ys0 + dy:ys1 + dy, xs0:xs1]
        rows.append(idx[a][ok])
        cols.append(idx[b][ok])
        w.append(np.full(ok.sum(), cost * res))
    g = sparse.coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(ny * nx, ny * nx)).tocsr()
    d = csgraph.dijkstra(g, directed=False, indices=idx[goal])
    return d.reshape(ny, nx)


@pytest.fixture(scope="session")
def apartment():
    return load_world(bundled_world_path())


_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        num = int(name.split("_")[2])
        label = name.split("_", 3)[3].replace("_", " ")
        terminalreporter.write_line(f"criterion {num:2d} {label:24s} {_CRITERIA[name]}")
