"""Procedural watertight mesh primitives: boxes, icospheres, extrusions, revolves.

All generators return consistently wound, outward-facing TriMesh objects and
go through full mesh validation, so anything built here satisfies the same
contracts as a loaded asset.
"""

from __future__ import annotations

import numpy as np

from .mesh import MeshError, TriMesh


def _oriented(vertices, triangles) -> TriMesh:
    """Build a TriMesh, flipping winding globally if the volume is negative."""
    mesh = TriMesh(vertices, triangles)
    if mesh.volume() < 0:
        tris = np.asarray(triangles, dtype=np.int64)[:, [0, 2, 1]]
        mesh = TriMesh(vertices, tris)
    return mesh


def box(size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box spanning origin .. origin + size (12 triangles)."""
    sx, sy, sz = size
    ox, oy, oz = origin
    verts = np.array(
        [
            [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
            [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        ],
        dtype=float,
    ) * [sx, sy, sz] + [ox, oy, oz]
    tris = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z = 0
            [4, 5, 6], [4, 6, 7],  # z = max
            [0, 1, 5], [0, 5, 4],  # y = 0
            [3, 7, 6], [3, 6, 2],  # y = max
            [0, 4, 7], [0, 7, 3],  # x = 0
            [1, 2, 6], [1, 6, 5],  # x = max
        ],
        dtype=np.int64,
    )
    return _oriented(verts, tris)


def unit_cube() -> TriMesh:
    return box()


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron projected onto a sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        tris = [
            t
            for (a, b, c) in tris
            for t in (
                (a, midpoint(a, b), midpoint(a, c)),
                (b, midpoint(b, c), midpoint(a, b)),
                (c, midpoint(a, c), midpoint(b, c)),
                (midpoint(a, b), midpoint(b, c), midpoint(a, c)),
            )
        ]
    pts = np.asarray(verts) * radius + np.asarray(center, dtype=float)
    return _oriented(pts, np.asarray(tris, dtype=np.int64))


# -- polygon machinery ---------------------------------------------------------


def _polygon_area(poly: np.ndarray) -> float:
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def triangulate_polygon(poly: np.ndarray) -> np.ndarray:
    """Ear-clipping triangulation of a simple polygon ((n, 2), no holes)."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    if n < 3:
        raise MeshError("polygon needs at least 3 vertices")
    order = list(range(n))
    if _polygon_area(poly) < 0:
        order.reverse()

    def cross2(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def point_in_tri(p, a, b, c, eps=1e-12):
        d1, d2, d3 = cross2(a, b, p), cross2(b, c, p), cross2(c, a, p)
        return d1 > eps and d2 > eps and d3 > eps

    tris = []
    idx = order[:]
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * n * n:
            raise MeshError("ear clipping failed; polygon may be self-intersecting")
        clipped = False
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross2(a, b, c) <= 1e-15:
                continue
            if any(point_in_tri(poly[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            clipped = True
            break
        if not clipped:
            raise MeshError("no ear found; polygon may be degenerate")
    tris.append(tuple(idx))
    return np.asarray(tris, dtype=np.int64)


def extrude_polygon(poly, y_min: float, y_max: float) -> TriMesh:
    """Extrude a simple polygon in the X-Z plane along Y into a closed prism."""
    poly = np.asarray(poly, dtype=float)
    if _polygon_area(poly) < 0:
        poly = poly[::-1]
    n = len(poly)
    cap = triangulate_polygon(poly)
    bottom = np.column_stack([poly[:, 0], np.full(n, y_min), poly[:, 1]])
    top = np.column_stack([poly[:, 0], np.full(n, y_max), poly[:, 1]])
    verts = np.vstack([bottom, top])
    tris = []
    for (i, j, k) in cap:
        tris.append((i, j, k))              # bottom cap, normal -y for CCW outline
        tris.append((n + i, n + k, n + j))  # top cap, normal +y
    for i in range(n):
        j = (i + 1) % n
        tris.append((i, n + j, j))
        tris.append((i, n + i, n + j))
    return _oriented(verts, np.asarray(tris, dtype=np.int64))


def revolve_profile(profile, segments: int = 24) -> TriMesh:
    """Revolve a (radius, z) profile around the Z axis into a closed surface.

    The profile must start and end on the axis (radius 0) with positive radii
    in between; it is traversed pole-to-pole.
    """
    prof = np.asarray(profile, dtype=float)
    if abs(prof[0, 0]) > 1e-12 or abs(prof[-1, 0]) > 1e-12:
        raise MeshError("profile must start and end on the axis")
    if np.any(prof[1:-1, 0] <= 0):
        raise MeshError("interior profile radii must be positive")
    inner = prof[1:-1]
    phis = np.arange(segments) * (2.0 * np.pi / segments)
    rings = []
    verts = [np.array([0.0, 0.0, prof[0, 1]])]
    for r, z in inner:
        start = len(verts)
        for phi in phis:
            verts.append(np.array([r * np.cos(phi), r * np.sin(phi), z]))
        rings.append(start)
    verts.append(np.array([0.0, 0.0, prof[-1, 1]]))
    top_pole = len(verts) - 1

    tris = []
    for s in range(segments):
        s1 = (s + 1) % segments
        tris.append((0, rings[0] + s, rings[0] + s1))  # bottom fan
        for k in range(len(rings) - 1):
            a, b = rings[k] + s, rings[k] + s1
            c, d = rings[k + 1] + s, rings[k + 1] + s1
            tris.append((a, d, b))
            tris.append((a, c, d))
        tris.append((rings[-1] + s, top_pole, rings[-1] + s1))  # top fan
    return _oriented(np.asarray(verts), np.asarray(tris, dtype=np.int64))
