"""Generate the bundled apartment map (src/navstack/data/apartment.json).

Interior 10 x 7.5 m: open living / kitchen / study area on the west side,
bedroom (north-east) and bathroom (south-east). Walls are 0.1 m thick.
"""

import json
from pathlib import Path

import numpy as np

RES = 0.05
WALL = 0.1
W, H = 10.0, 7.5

OUT = Path(__file__).resolve().parents[1] / "src" / "navstack" / "data" / "apartment.json"


def main() -> None:
    nx = int(round((W + 2 * WALL) / RES))
    ny = int(round((H + 2 * WALL) / RES))
    occ = np.zeros((ny, nx), dtype=bool)

    def box(x0, y0, x1, y1):
        """Fill interior-frame rectangle [x0, x1] x [y0, y1] (meters)."""
        ix0 = int(round((x0 + WALL) / RES))
        ix1 = int(round((x1 + WALL) / RES))
        iy0 = int(round((y0 + WALL) / RES))
        iy1 = int(round((y1 + WALL) / RES))
        occ[iy0:iy1, ix0:ix1] = True

    # outer walls
    box(-WALL, -WALL, W + WALL, 0.0)
    box(-WALL, H, W + WALL, H + WALL)
    box(-WALL, -WALL, 0.0, H + WALL)
    box(W, -WALL, W + WALL, H + WALL)
    # wall between the open area and the east rooms, with two doors
    box(6.0, 0.0, 6.1, 1.0)      # bathroom door y in [1.0, 1.9]
    box(6.0, 1.9, 6.1, 5.0)      # bedroom door y in [5.0, 6.0]
    box(6.0, 6.0, 6.1, H)
    # bedroom / bathroom separation
    box(6.1, 3.0, W, 3.1)
    # study partition (open toward the east)
    box(0.0, 4.5, 2.5, 4.6)

    # the grid is stored top row first; the origin of the world frame is the
    # outer corner of the boundary wall
    rows = ["".join("#" if c else "." for c in row) for row in occ[::-1]]

    def at(x, y):
        return x + WALL, y + WALL

    objects = []
    for cat, x, y, r in [
        ("chair", 2.0, 1.1, 0.25),
        ("chair", 1.0, 5.6, 0.25),
        ("chair", 9.3, 3.8, 0.25),
        ("table", 2.0, 2.2, 0.35),
        ("sofa", 3.6, 6.9, 0.35),
        ("bed", 7.8, 5.6, 0.35),
        ("toilet", 7.9, 1.1, 0.3),
        ("monitor", 0.5, 6.9, 0.25),
        ("monitor", 5.5, 3.6, 0.25),
        ("plant", 5.5, 0.5, 0.25),
        ("plant", 6.6, 7.0, 0.25),
        ("plant", 7.0, 2.5, 0.2),
    ]:
        ox, oy = at(x, y)
        objects.append({"category": cat, "x": round(ox, 3), "y": round(oy, 3), "radius": r})

    starts = []
    for x, y, h in [
        (1.0, 0.6, 0.0), (3.5, 1.0, 90.0), (4.8, 2.5, 180.0), (1.0, 3.5, 270.0), (3.5, 4.2, 45.0),
        (4.5, 5.5, 135.0), (1.5, 6.5, 0.0), (2.8, 3.2, 300.0), (5.2, 7.0, 225.0), (7.5, 4.2, 90.0),
        (8.0, 5.0, 180.0), (9.0, 7.0, 270.0), (7.2, 1.2, 0.0), (8.5, 2.0, 120.0), (0.8, 2.0, 60.0),
    ]:
        sx, sy = at(x, y)
        starts.append({"x": round(sx, 3), "y": round(sy, 3), "heading": h})

    data = {"name": "apartment", "resolution": RES, "robot_radius": 0.18,
            "grid": rows, "objects": objects, "starts": starts}
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({nx} x {ny} cells, {len(objects)} objects, {len(starts)} starts)")


if __name__ == "__main__":
    main()
