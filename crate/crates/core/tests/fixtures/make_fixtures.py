"""Regenerates the test fixtures in this directory.

Rasters are computed with numpy and matplotlib's point-in-path test so that
they do not depend on the Rust code under test. Run from this directory:

    python3 make_fixtures.py
"""

import json
from collections import Counter

import numpy as np
from matplotlib.path import Path
from PIL import Image

ROOM_TYPES = [
    "Bedroom", "Livingroom", "Kitchen", "Dining", "Corridor",
    "Stairs", "Storeroom", "Bathroom", "Balcony",
]
ZONING = {
    "Bedroom": "Zone1", "Bathroom": "Zone1",
    "Livingroom": "Zone2", "Dining": "Zone2", "Kitchen": "Zone2", "Balcony": "Zone2",
    "Corridor": "Zone3", "Stairs": "Zone3",
    "Storeroom": "Zone4",
}
LABELS = {"background": 0, "structure": 1}
LABELS.update({name: i + 2 for i, name in enumerate(ROOM_TYPES)})

SIZE = 128
WALL_HALF = 2.0  # wall pixels: centre strictly closer than this to the centre line


def vocab():
    return {
        "zoning_types": ["Zone1", "Zone2", "Zone3", "Zone4"],
        "room_types": ROOM_TYPES,
        "grid_labels": LABELS,
    }


# Each layout: rooms as (type, polygon in pixel-boundary coordinates) and
# structural walls as axis-aligned centre lines, also in pixel coordinates.
LAYOUTS = {
    "gt_01": {
        "rooms": [
            ("Livingroom", [(16, 16), (72, 16), (72, 60), (44, 60), (44, 112), (16, 112)]),
            ("Kitchen", [(72, 16), (112, 16), (112, 60), (72, 60)]),
            ("Bedroom", [(44, 60), (84, 60), (84, 112), (44, 112)]),
            ("Bathroom", [(84, 60), (112, 60), (112, 112), (84, 112)]),
        ],
        "walls": [
            ((16, 16), (112, 16)), ((112, 16), (112, 112)), ((112, 112), (16, 112)),
            ((16, 112), (16, 16)), ((44, 60), (112, 60)), ((44, 60), (44, 112)),
        ],
    },
    "gt_02": {
        "rooms": [
            ("Corridor", [(8, 56), (120, 56), (120, 72), (8, 72)]),
            ("Bedroom", [(8, 24), (48, 24), (48, 56), (8, 56)]),
            ("Bedroom", [(48, 24), (88, 24), (88, 56), (48, 56)]),
            ("Bathroom", [(88, 24), (120, 24), (120, 56), (88, 56)]),
            ("Livingroom", [(8, 72), (80, 72), (80, 104), (8, 104)]),
            ("Kitchen", [(80, 72), (120, 72), (120, 104), (80, 104)]),
        ],
        "walls": [
            ((8, 24), (120, 24)), ((120, 24), (120, 104)), ((120, 104), (8, 104)),
            ((8, 104), (8, 24)), ((8, 56), (120, 56)), ((8, 72), (120, 72)),
            ((48, 24), (48, 56)), ((80, 72), (80, 104)),
        ],
    },
    "gt_03": {
        "rooms": [
            ("Livingroom", [(20, 20), (100, 20), (100, 50), (50, 50), (50, 108), (20, 108)]),
            ("Kitchen", [(50, 50), (100, 50), (100, 80), (50, 80)]),
            ("Bedroom", [(50, 80), (108, 80), (108, 108), (50, 108)]),
        ],
        "walls": [
            ((20, 20), (100, 20)), ((20, 20), (20, 108)), ((20, 108), (108, 108)),
            ((108, 80), (108, 108)), ((50, 80), (108, 80)), ((100, 20), (100, 80)),
            ((50, 50), (50, 108)), ((50, 50), (100, 50)),
        ],
    },
    "gt_04": {
        "rooms": [
            ("Bedroom", [(16, 16), (64, 16), (64, 48), (40, 48), (40, 80), (16, 80)]),
            ("Bathroom", [(40, 48), (64, 48), (64, 80), (40, 80)]),
            ("Livingroom", [(64, 16), (112, 16), (112, 80), (64, 80)]),
            ("Kitchen", [(16, 80), (64, 80), (64, 112), (16, 112)]),
            ("Dining", [(64, 80), (112, 80), (112, 112), (64, 112)]),
        ],
        "walls": [
            ((16, 16), (112, 16)), ((112, 16), (112, 112)), ((112, 112), (16, 112)),
            ((16, 112), (16, 16)), ((64, 16), (64, 112)), ((16, 80), (112, 80)),
        ],
    },
    "gt_05": {
        "rooms": [
            ("Corridor", [(56, 8), (72, 8), (72, 120), (56, 120)]),
            ("Bedroom", [(16, 8), (56, 8), (56, 64), (16, 64)]),
            ("Bathroom", [(16, 64), (56, 64), (56, 88), (16, 88)]),
            ("Storeroom", [(16, 88), (56, 88), (56, 120), (16, 120)]),
            ("Livingroom", [(72, 8), (112, 8), (112, 72), (96, 72), (96, 96), (72, 96)]),
            ("Kitchen", [(96, 72), (112, 72), (112, 96), (96, 96)]),
            ("Balcony", [(72, 96), (112, 96), (112, 120), (72, 120)]),
        ],
        "walls": [
            ((16, 8), (112, 8)), ((112, 8), (112, 120)), ((112, 120), (16, 120)),
            ((16, 120), (16, 8)), ((56, 8), (56, 120)), ((72, 8), (72, 120)),
            ((72, 96), (112, 96)),
        ],
    },
}


def norm(p):
    half = SIZE / 2
    return [(p[0] - half) / half, (p[1] - half) / half]


def pixel_centres():
    ys, xs = np.mgrid[0:SIZE, 0:SIZE]
    return np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)


def wall_pixels(walls):
    pts = pixel_centres()
    hit = np.zeros(len(pts), dtype=bool)
    for (a, b) in walls:
        a = np.array(a, float)
        b = np.array(b, float)
        ab = b - a
        t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        hit |= d < WALL_HALF
    return hit.reshape(SIZE, SIZE)


def shared_length(p, q):
    """Length of boundary shared by two rectilinear polygons."""
    def edges(poly):
        out = []
        for i in range(len(poly)):
            out.append((poly[i], poly[(i + 1) % len(poly)]))
        return out

    total = 0.0
    for a0, a1 in edges(p):
        for b0, b1 in edges(q):
            if a0[0] == a1[0] == b0[0] == b1[0]:
                lo = max(min(a0[1], a1[1]), min(b0[1], b1[1]))
                hi = min(max(a0[1], a1[1]), max(b0[1], b1[1]))
                total += max(0, hi - lo)
            elif a0[1] == a1[1] == b0[1] == b1[1]:
                lo = max(min(a0[0], a1[0]), min(b0[0], b1[0]))
                hi = min(max(a0[0], a1[0]), max(b0[0], b1[0]))
                total += max(0, hi - lo)
    return total


def connection(t1, t2):
    pair = {t1, t2}
    if "Balcony" in pair:
        return "entrance"
    if pair <= {"Livingroom", "Kitchen", "Dining"}:
        return "passage"
    return "door"


def build_layout(name, spec):
    grid = np.zeros(SIZE * SIZE, dtype=np.uint8)
    pts = pixel_centres()
    for room_type, poly in spec["rooms"]:
        inside = Path(np.array(poly, float)).contains_points(pts)
        grid[inside] = LABELS[room_type]
    grid = grid.reshape(SIZE, SIZE)
    walls = wall_pixels(spec["walls"])
    grid[walls] = LABELS["structure"]
    Image.fromarray(grid, mode="L").save(f"{name}_truth.png")
    Image.fromarray((walls * 255).astype(np.uint8), mode="L").save(f"{name}_walls.png")

    plan = {
        "rooms": [
            {"id": i, "room_type": t, "polygon": [norm(p) for p in poly]}
            for i, (t, poly) in enumerate(spec["rooms"])
        ],
        "walls": {
            "source_size": [SIZE, SIZE],
            "segments": [[norm(a), norm(b)] for (a, b) in spec["walls"]],
        },
    }
    with open(f"{name}_plan.json", "w") as f:
        json.dump(plan, f, indent=1)

    nodes = [
        {"id": i, "zoning": ZONING[t], "room_type": t, "polygon": None}
        for i, (t, _) in enumerate(spec["rooms"])
    ]
    edges = []
    rooms = spec["rooms"]
    for i in range(len(rooms)):
        for j in range(i + 1, len(rooms)):
            if shared_length(rooms[i][1], rooms[j][1]) >= 8:
                edges.append({"a": i, "b": j, "type": connection(rooms[i][0], rooms[j][0])})
    graph = {"nodes": nodes, "edges": edges}
    with open(f"{name}_graph.json", "w") as f:
        json.dump(graph, f, indent=1)

    counts = Counter(grid.ravel().tolist())
    return graph, {str(k): v for k, v in sorted(counts.items())}


def walls_cross():
    img = np.zeros((48, 64), dtype=np.uint8)
    img[22:25, 6:58] = 1
    img[4:44, 30:33] = 1
    Image.fromarray(img, mode="L").save("walls_cross.png")
    return int((img == 1).sum())


def plus_pgm():
    img = np.zeros((17, 17), dtype=np.uint8)
    img[8, 2:15] = 255
    img[2:15, 8] = 255
    rows = ["P2", "17 17", "255"]
    rows += [" ".join(str(v) for v in row) for row in img]
    with open("plus.pgm", "w") as f:
        f.write("\n".join(rows) + "\n")
    return int((img > 0).sum())


def main():
    with open("vocab.json", "w") as f:
        json.dump(vocab(), f, indent=1)
    manifest = {
        "walls_cross.png": {"foreground": walls_cross(), "segments": 4},
        "plus.pgm": {"foreground": plus_pgm(), "segments": 4},
        "gt": {},
    }
    for name, spec in LAYOUTS.items():
        graph, counts = build_layout(name, spec)
        manifest["gt"][name] = {"rooms": len(spec["rooms"]), "label_counts": counts}
        if name == "gt_05":
            with open("apartment_7rooms.json", "w") as f:
                json.dump(graph, f, indent=1)
            manifest["apartment_7rooms.json"] = {
                "nodes": len(graph["nodes"]),
                "edges": sorted([e["a"], e["b"], e["type"]] for e in graph["edges"]),
            }
    with open("manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)


if __name__ == "__main__":
    main()
