"""Procedural closed meshes used for the bundled object set and in tests."""
import numpy as np

from .mesh import TriangleMesh


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    sx, sy, sz = (0.5 * np.asarray(size, dtype=float)).tolist()
    v = np.array(
        [[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)]
    ) + np.asarray(center, dtype=float)
    # vertex index = 4*ix + 2*iy + iz
    f = [
        [0, 1, 3], [0, 3, 2],  # -x
        [4, 6, 7], [4, 7, 5],  # +x
        [0, 4, 5], [0, 5, 1],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [0, 2, 6], [0, 6, 4],  # -z
        [1, 5, 7], [1, 7, 3],  # +z
    ]
    return TriangleMesh.from_arrays(v, f)


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [list(np.asarray(v, float) / np.linalg.norm(v)) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(verts[i]) + np.asarray(verts[j])
                verts.append(list(m / np.linalg.norm(m)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    v = np.asarray(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh.from_arrays(v, faces)


def revolve(profile, segments=32) -> TriangleMesh:
    """Closed surface of revolution about +z.

    ``profile`` is a list of (radius, z) from bottom to top; the first and
    last entries must have radius 0 so the solid is capped.
    """
    prof = np.asarray(profile, dtype=float)
    if prof[0, 0] != 0 or prof[-1, 0] != 0:
        raise ValueError("profile must start and end on the axis")
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    verts = [[0.0, 0.0, prof[0, 1]]]
    rings = []
    for r, z in prof[1:-1]:
        start = len(verts)
        verts += [[r * np.cos(a), r * np.sin(a), z] for a in ang]
        rings.append(start)
    top = len(verts)
    verts.append([0.0, 0.0, prof[-1, 1]])
    faces = []
    s = segments
    first = rings[0]
    for k in range(s):
        faces.append([0, first + (k + 1) % s, first + k])
    for a0, a1 in zip(rings[:-1], rings[1:]):
        for k in range(s):
            i0, i1 = a0 + k, a0 + (k + 1) % s
            j0, j1 = a1 + k, a1 + (k + 1) % s
            faces += [[i0, i1, j1], [i0, j1, j0]]
    last = rings[-1]
    for k in range(s):
        faces.append([top, last + k, last + (k + 1) % s])
    return TriangleMesh.from_arrays(verts, faces)


def torus(major, minor, segments=24, tube_segments=12, center=(0.0, 0.0, 0.0), axis="y"):
    """Torus lying in the plane perpendicular to ``axis``."""
    u = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    w = np.linspace(0, 2 * np.pi, tube_segments, endpoint=False)
    verts = []
    for a in u:
        for b in w:
            r = major + minor * np.cos(b)
            verts.append([r * np.cos(a), r * np.sin(a), minor * np.sin(b)])
    verts = np.asarray(verts)
    if axis == "y":
        verts = verts[:, [0, 2, 1]] * np.array([1.0, -1.0, 1.0])
    elif axis == "x":
        verts = verts[:, [2, 0, 1]]
    faces = []
    for i in range(segments):
        for j in range(tube_segments):
            a = i * tube_segments + j
            b = ((i + 1) % segments) * tube_segments + j
            c = ((i + 1) % segments) * tube_segments + (j + 1) % tube_segments
            d = i * tube_segments + (j + 1) % tube_segments
            faces += [[a, b, c], [a, c, d]]
    mesh = TriangleMesh.from_arrays(verts + np.asarray(center, dtype=float), faces)
    # make winding outward regardless of the axis permutation
    cen = np.asarray(center, dtype=float)
    tri_c = mesh.triangles.mean(axis=1) - cen
    if axis == "y":
        ring = tri_c * np.array([1.0, 0.0, 1.0])
    elif axis == "x":
        ring = tri_c * np.array([0.0, 1.0, 1.0])
    else:
        ring = tri_c * np.array([1.0, 1.0, 0.0])
    ring = ring / np.linalg.norm(ring, axis=1, keepdims=True) * major
    outward = np.einsum("ij,ij->i", mesh.face_normals, tri_c - ring)
    if np.mean(outward) < 0:
        mesh = TriangleMesh.from_arrays(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def merge(*meshes) -> TriangleMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    return TriangleMesh.from_arrays(np.vstack(verts), np.vstack(faces))


def mug(radius=0.04, height=0.09, segments=32) -> TriangleMesh:
    body = revolve(
        [(0.0, 0.0), (radius, 0.0), (radius, height * 0.5), (radius, height), (0.0, height)],
        segments=segments,
    )
    handle = torus(0.025, 0.007, segments=20, tube_segments=8,
                   center=(radius + 0.012, 0.0, 0.5 * height), axis="y")
    return merge(body, handle)


def bottle(segments=32) -> TriangleMesh:
    return revolve(
        [(0.0, 0.0), (0.03, 0.0), (0.03, 0.10), (0.022, 0.13), (0.012, 0.15),
         (0.012, 0.17), (0.0, 0.17)],
        segments=segments,
    )
