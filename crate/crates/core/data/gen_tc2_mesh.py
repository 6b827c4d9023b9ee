"""Generate the Test Case 2 fixture mesh.

Unit square, with edges along the 48-gons inscribed in the source disc and
the sink ellipse (parameters must match `oracle::tc2`). Writes the
`nv nt nb` text format to stdout.

    python3 gen_tc2_mesh.py > tc2_mesh.txt
"""

import numpy as np
from scipy.spatial import Delaunay

SIDES = 48
H = 0.044
SUPPORTS = [((0.3, 0.5), (0.125, 0.125)), ((0.7, 0.5), (0.08, 0.14))]


def polygon(center, axes, sides):
    a = 2 * np.pi * np.arange(sides) / sides
    return np.column_stack([center[0] + axes[0] * np.cos(a), center[1] + axes[1] * np.sin(a)])


def main():
    pts = []
    # square boundary
    n = int(round(1 / H))
    s = np.linspace(0, 1, n + 1)
    for t in s[:-1]:
        pts += [(t, 0.0), (1.0, t), (1 - t, 1.0), (0.0, 1 - t)]
    rings = []
    polys = []
    for center, axes in SUPPORTS:
        poly = polygon(center, axes, SIDES)
        rings.append(poly)
        polys.append(poly)
        # one layer of nodes on either side, off the edge midpoints along the
        # normal, keeping every polygon edge a Gabriel edge
        nxt = np.roll(poly, -1, axis=0)
        mid, d = 0.5 * (poly + nxt), nxt - poly
        length = np.hypot(d[:, 0], d[:, 1])[:, None]
        normal = np.column_stack([d[:, 1], -d[:, 0]]) / length
        for sign in (-1, 1):
            rings.append(mid + sign * 0.85 * length * normal)
    # hexagonal interior lattice
    lattice = []
    dy = H * np.sqrt(3) / 2
    for j in range(1, int(1 / dy) + 1):
        y = j * dy
        if y > 1 - 0.6 * H:
            break
        off = 0.5 * H if j % 2 else 0.0
        x = off + H
        while x < 1 - 0.6 * H:
            lattice.append((x, y))
            x += H
    lattice = np.array(lattice)
    mask = np.ones(len(lattice), bool)
    for poly in polys:
        nxt = np.roll(poly, -1, axis=0)
        for a, b in zip(poly, nxt):
            d = b - a
            t = np.clip(((lattice - a) @ d) / (d @ d), 0, 1)
            dist = np.hypot(*(lattice - a - t[:, None] * d).T)
            mask &= dist > max(1.9 * np.hypot(*d), 0.75 * H)
    nodes = np.vstack([np.array(pts)] + rings + [lattice[mask]])

    tri = Delaunay(nodes).simplices
    a, b, c = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    area = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    tri[area < 0] = tri[area < 0][:, [0, 2, 1]]
    area = np.abs(area)
    assert area.min() > 1e-8, area.min()

    edges = set()
    for t in tri:
        for i in range(3):
            edges.add(tuple(sorted((t[i], t[(i + 1) % 3]))))
    base = len(pts)
    for r in (0, 3):
        start = base + r * SIDES
        for k in range(SIDES):
            e = tuple(sorted((start + k, start + (k + 1) % SIDES)))
            assert e in edges, f"support edge {e} not recovered"

    print(f"{len(nodes)} {len(tri)} 0")
    for x, y in nodes:
        print(f"{x:.17g} {y:.17g}")
    for t in tri:
        print(f"{t[0]} {t[1]} {t[2]}")


if __name__ == "__main__":
    main()
