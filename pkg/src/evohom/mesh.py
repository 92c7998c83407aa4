"""Triangulations of the perforated reference cell, the tiled micro domain and plain boxes.

The reference cell mesh is a structured O-grid: rays join uniformly spaced
points on the hole boundary to uniformly spaced points on the square, and the
quads between consecutive rays and layers are split with a diagonal pattern
that is mirrored in every eighth of the cell.  The resulting mesh is
invariant under the symmetry group of the square, its periodic traces match
node for node, and hole vertices lie exactly on the circle.
"""
from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CellLookupFailure, MeshQualityFailure, NonConformingTiling
from .geometry import CENTER

GAMMA = "GammaHole"
OUTER = "OuterBoundary"
LEFT, RIGHT, TOP, BOTTOM = "PeriodicLeft", "PeriodicRight", "PeriodicTop", "PeriodicBottom"

MIN_ANGLE_DEG = 15.0
# thinning of the outer collar layers; 3 already breaks the angle floor
COLLAR_REFINE = 2.0


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edge_tags: dict = field(default_factory=dict)
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    element_cell: np.ndarray | None = None
    hole_edge_cell: np.ndarray | None = None
    h: float = 0.0
    hole_radius: float | None = None
    extents: tuple = (1.0, 1.0)
    grid_shape: tuple | None = None
    # micro meshes only: template mesh and (n_cells, n_template_nodes) node map
    template: "Mesh | None" = None
    cell_nodes: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def edges(self, tag: str) -> np.ndarray:
        return self.edge_tags.get(tag, np.zeros((0, 2), dtype=int))

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        ang = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return float(np.min(ang))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]


def all_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges and how many triangles share each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def boundary_edges(mesh: Mesh) -> np.ndarray:
    uniq, counts = all_edges(mesh.triangles)
    return uniq[counts == 1]


def check_mesh(mesh: Mesh) -> dict:
    """Evaluate the structural invariants; returns name -> (passed, measured)."""
    out = {}
    sa = mesh.signed_areas()
    out["positive_signed_area"] = (bool(np.all(sa > 0.0)), float(sa.min()))
    _, counts = all_edges(mesh.triangles)
    out["conforming_edges"] = (bool(np.all(counts <= 2)), int(counts.max()))
    bnd = {tuple(e) for e in boundary_edges(mesh)}
    tagged = set()
    for arr in mesh.edge_tags.values():
        tagged |= {tuple(sorted(e)) for e in arr}
    out["boundary_edges_tagged"] = (bnd <= tagged, len(bnd - tagged))
    if len(mesh.periodic_pairs):
        d = mesh.vertices[mesh.periodic_pairs[:, 0]] - mesh.vertices[mesh.periodic_pairs[:, 1]]
        per = np.asarray(mesh.extents, dtype=float)
        # every pair differs by a combination of period vectors
        frac = d / per
        err = float(np.max(np.abs(frac - np.round(frac)) * per))
        out["periodic_match"] = (err <= 1e-12, err)
    if mesh.hole_radius is not None and len(mesh.edges(GAMMA)):
        err = _hole_radius_error(mesh)
        out["hole_on_circle"] = (err <= 1e-12, err)
    return out


def _hole_radius_error(mesh: Mesh) -> float:
    nodes = np.unique(mesh.edges(GAMMA))
    if mesh.template is None:
        r = np.linalg.norm(mesh.vertices[nodes] - CENTER, axis=1)
        return float(np.max(np.abs(r - mesh.hole_radius)))
    eps = mesh.extents[0] / mesh.grid_shape[0]
    cells = mesh.hole_edge_cell
    n2 = mesh.grid_shape[1]
    centers = eps * (np.stack([cells // n2, cells % n2], axis=1) + 0.5)
    e = mesh.edges(GAMMA)
    r = np.linalg.norm(mesh.vertices[e[:, 0]] - centers, axis=1)
    return float(np.max(np.abs(r - eps * mesh.hole_radius)))


def find_periodic_pairs(vertices: np.ndarray, extents) -> np.ndarray:
    """``(slave, master)`` pairs identifying right->left and top->bottom nodes.

    Matching is on exact coordinates; corners all collapse onto the node at
    the origin.
    """
    lx, ly = (float(e) for e in extents)
    x, y = vertices[:, 0], vertices[:, 1]
    key_left = {float(y[i]): i for i in np.flatnonzero(x == 0.0)}
    key_bottom = {float(x[i]): i for i in np.flatnonzero(y == 0.0)}
    master = {}
    for i in np.flatnonzero(x == lx):
        j = key_left.get(float(y[i]))
        if j is None:
            raise NonConformingTiling(f"no left partner for right node {i}")
        master[int(i)] = int(j)
    for i in np.flatnonzero(y == ly):
        j = key_bottom.get(float(x[i]))
        if j is None:
            raise NonConformingTiling(f"no bottom partner for top node {i}")
        if int(i) in master:
            # corner: both rules apply; follow them to the root below
            master[int(i)] = min(master[int(i)], int(j))
        else:
            master[int(i)] = int(j)

    def root(i):
        while i in master:
            i = master[i]
        return i

    pairs = sorted((s, root(s)) for s in master)
    return np.asarray(pairs, dtype=int).reshape(-1, 2)


def _ograd_counts(R_hole: float, h: float) -> tuple[int, int, np.ndarray]:
    n_t = max(math.ceil(1.0 / h), math.ceil(2.0 * math.pi * R_hole / (4.0 * h)))
    n_t += n_t % 2
    h_hole = 2.0 * math.pi * R_hole / (4 * n_t)
    h_side = 1.0 / n_t
    # mean ray length between circle and square
    th = np.linspace(-math.pi / 4, math.pi / 4, 65)
    gap = float(np.mean(0.5 / np.cos(th))) - R_hole
    n_r = max(2, round(gap / (0.5 * (h_hole + h_side))))
    q = (h_side / h_hole) ** (1.0 / max(n_r - 1, 1))
    if abs(q - 1.0) < 1e-12:
        s = np.linspace(0.0, 1.0, n_r + 1)
    else:
        s = (q ** np.arange(n_r + 1) - 1.0) / (q**n_r - 1.0)
    return n_t, n_r, s


def build_reference_cell_mesh(R_hole: float, h: float, collar: float | None = None,
                              collar_refine: float = 1.0) -> Mesh:
    """Mesh of the unit cell minus the closed disc of radius ``R_hole`` about the centre.

    With ``collar`` set, the annulus ``R_hole <= |y - m| <= R_hole + collar`` is
    meshed in exact circular layers that include the radii ``R_hole + collar/2``
    and ``R_hole + collar``; layers in the outer half of the annulus are
    ``collar_refine`` times thinner than the tangential spacing on the hole.
    """
    if not 0.0 < R_hole < 0.5:
        raise ValueError("hole radius must lie in (0, 1/2)")
    if h > R_hole / 4.0:
        raise ValueError(f"mesh size h={h} exceeds R_hole/4={R_hole / 4}")
    if collar is not None and not 0.0 < collar < 0.5 - R_hole:
        raise ValueError("collar must fit between the hole and the cell boundary")
    n_t, n_r, s = _ograd_counts(R_hole, h)
    n_ray = 4 * n_t
    t = np.arange(n_t + 1) / n_t
    i = np.arange(n_ray)
    side, j = i // n_t, i % n_t
    px = np.select([side == 0, side == 1, side == 2, side == 3],
                   [np.ones(n_ray), t[n_t - j], np.zeros(n_ray), t[j]])
    py = np.select([side == 0, side == 1, side == 2, side == 3],
                   [t[j], np.ones(n_ray), t[n_t - j], np.zeros(n_ray)])
    outer = np.stack([px, py], axis=1)
    theta = -math.pi / 4 + 2.0 * math.pi * i / n_ray
    inner = CENTER + R_hole * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    if collar is None:
        layers = [inner] + [inner + sk * (outer - inner) for sk in s[1:-1]] + [outer]
    else:
        layers = _collar_layers(R_hole, n_t, theta, outer, collar, collar_refine)
        n_r = len(layers) - 1
    verts = np.concatenate(layers)

    def node(ii, kk):
        return kk * n_ray + (ii % n_ray)

    ii, kk = np.meshgrid(np.arange(n_ray), np.arange(n_r), indexing="ij")
    ii, kk = ii.ravel(), kk.ravel()
    a, b = node(ii, kk), node(ii + 1, kk)
    c, d = node(ii + 1, kk + 1), node(ii, kk + 1)
    even = ((ii // (n_t // 2)) % 2) == 0
    tri1 = np.where(even[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
    tri2 = np.where(even[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
    tris = np.concatenate([tri1, tri2])
    tris = _orient(verts, tris)

    hole = np.stack([node(i, 0), node(i + 1, 0)], axis=1)
    outer_edges = np.stack([node(i, n_r), node(i + 1, n_r)], axis=1)
    tags = {GAMMA: hole}
    for sd, name in enumerate((RIGHT, TOP, LEFT, BOTTOM)):
        tags[name] = outer_edges[side == sd]
    mesh = Mesh(verts, tris, tags, find_periodic_pairs(verts, (1.0, 1.0)), h=h,
                hole_radius=R_hole, extents=(1.0, 1.0))
    _assert_quality(mesh)
    return mesh


def build_collar_mesh(R_hole: float, h: float, delta0: float) -> Mesh:
    """Reference cell mesh whose layers resolve the deformation collar of width ``delta0``."""
    return build_reference_cell_mesh(R_hole, h, collar=delta0, collar_refine=COLLAR_REFINE)


def _collar_layers(R_hole, n_t, theta, outer, collar, refine):
    radial = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    h_tan = 2.0 * math.pi * R_hole / (4 * n_t)
    n_p = max(1, math.ceil(0.5 * collar / h_tan))
    n_b = max(1, math.ceil(0.5 * collar * refine / h_tan))
    d = np.concatenate([np.linspace(0.0, 0.5 * collar, n_p + 1),
                        np.linspace(0.5 * collar, collar, n_b + 1)[1:]])
    layers = [CENTER + (R_hole + dk) * radial for dk in d]
    q = layers[-1]
    mean_len = float(np.mean(np.linalg.norm(outer - q, axis=1)))
    n_o = max(1, round(mean_len * n_t))
    layers += [q + sk * (outer - q) for sk in np.arange(1, n_o) / n_o]
    layers.append(outer)
    return layers


def _orient(verts, tris):
    p = verts[tris]
    sa = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    if not (np.all(sa > 0) or np.all(sa < 0)):
        raise MeshQualityFailure("mixed triangle orientation; mesh is folded")
    return tris if sa[0] > 0 else tris[:, [0, 2, 1]]


def _assert_quality(mesh: Mesh):
    if np.any(mesh.signed_areas() <= 0.0):
        raise MeshQualityFailure("inverted or degenerate triangle")
    ang = mesh.min_angle_deg()
    if ang < MIN_ANGLE_DEG:
        raise MeshQualityFailure(f"minimum angle {ang:.2f} deg below {MIN_ANGLE_DEG} deg")


def build_box_mesh(extents=(1.0, 1.0), n=(8, 8)) -> Mesh:
    """Structured right-triangle mesh of ``(0, l1) x (0, l2)`` with ``n`` squares per side."""
    lx, ly = (float(e) for e in extents)
    nx, ny = n
    xs = lx * (np.arange(nx + 1) / nx)
    ys = ly * (np.arange(ny + 1) / ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def node(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a, b, c, d = node(I, J), node(I + 1, J), node(I + 1, J + 1), node(I, J + 1)
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    # square s owns triangles s and s + nx*ny
    jj = np.arange(ny)
    ii = np.arange(nx)
    tags = {
        LEFT: np.stack([node(0, jj), node(0, jj + 1)], 1),
        RIGHT: np.stack([node(nx, jj), node(nx, jj + 1)], 1),
        BOTTOM: np.stack([node(ii, 0), node(ii + 1, 0)], 1),
        TOP: np.stack([node(ii, ny), node(ii + 1, ny)], 1),
    }
    tags[OUTER] = np.concatenate([tags[LEFT], tags[RIGHT], tags[BOTTOM], tags[TOP]])
    h = max(lx / nx, ly / ny)
    return Mesh(verts, tris, tags, find_periodic_pairs(verts, (lx, ly)), h=h,
                extents=(lx, ly), grid_shape=(nx, ny))


class CellIndexer:
    """Cells ``eps (Y + k)`` tiling ``(0, l1) x (0, l2)`` with integer ``l`` and ``1/eps``."""

    def __init__(self, eps: float, extents=(1, 1)):
        n = round(1.0 / eps)
        if n < 1 or abs(n * eps - 1.0) > 1e-12:
            raise ValueError(f"1/eps must be a positive integer, got eps={eps!r}")
        ext = tuple(int(round(e)) for e in extents)
        if any(abs(e - r) > 0 or r < 1 for e, r in zip(extents, ext)):
            raise ValueError(f"domain extents must be positive integers, got {extents!r}")
        self.eps = 1.0 / n
        self.n_per_unit = n
        self.extents = ext
        self.shape = (ext[0] * n, ext[1] * n)

    @property
    def n_cells(self) -> int:
        return self.shape[0] * self.shape[1]

    def cells(self) -> np.ndarray:
        """All admissible indices, flat order ``c = k1 * n2 + k2``."""
        k1, k2 = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]), indexing="ij")
        return np.stack([k1.ravel(), k2.ravel()], axis=1)

    def flat(self, k) -> np.ndarray:
        k = np.asarray(k)
        return k[..., 0] * self.shape[1] + k[..., 1]

    def centers(self) -> np.ndarray:
        return self.eps * (self.cells() + 0.5)

    def cell_of_point(self, x) -> np.ndarray:
        """Index ``k`` of the closed cell containing ``x``; shared faces go to the lower index."""
        x = np.asarray(x, dtype=float)
        hi = np.asarray(self.extents, dtype=float)
        if np.any(x < 0.0) or np.any(x > hi):
            raise CellLookupFailure("point outside the tiled domain")
        k = np.ceil(x * self.n_per_unit).astype(int) - 1
        return np.clip(k, 0, np.asarray(self.shape) - 1)


def build_micro_mesh(indexer: CellIndexer, h_cell: float, R_hole: float = 0.35,
                     template: Mesh | None = None, delta0: float | None = None) -> Mesh:
    """Tile the reference cell mesh over every cell and merge shared face nodes."""
    if template is not None:
        tmpl = template
    elif delta0 is not None:
        tmpl = build_collar_mesh(R_hole, h_cell, delta0)
    else:
        tmpl = build_reference_cell_mesh(R_hole, h_cell)
    eps = indexer.eps
    cells = indexer.cells()
    nc, nv = len(cells), tmpl.n_vertices
    raw = eps * (cells[:, None, :] + tmpl.vertices[None, :, :])
    raw = raw.reshape(-1, 2)
    uniq, first, inverse = np.unique(raw, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    # renumber by first occurrence so node order follows cell order
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    gid = rank[inverse]
    verts = uniq[order]

    near = np.unique(np.round(raw / eps, 9), axis=0)
    if len(near) != len(verts):
        raise NonConformingTiling(
            f"{len(near)} distinct nodes up to rounding but {len(verts)} exact; traces do not match"
        )
    cell_nodes = gid.reshape(nc, nv)
    tris = cell_nodes[:, tmpl.triangles].reshape(-1, 3)
    element_cell = np.repeat(np.arange(nc), tmpl.n_triangles)
    hole = cell_nodes[:, tmpl.edges(GAMMA)].reshape(-1, 2)
    hole_cell = np.repeat(np.arange(nc), len(tmpl.edges(GAMMA)))

    n1, n2 = indexer.shape
    k1, k2 = cells[:, 0], cells[:, 1]
    outer = []
    for tag, on in ((LEFT, k1 == 0), (RIGHT, k1 == n1 - 1), (BOTTOM, k2 == 0), (TOP, k2 == n2 - 1)):
        e = tmpl.edges(tag)
        outer.append(cell_nodes[on][:, e].reshape(-1, 2))
    tags = {GAMMA: hole, OUTER: np.concatenate(outer)}
    mesh = Mesh(verts, tris, tags, np.zeros((0, 2), dtype=int), element_cell, hole_cell,
                h=h_cell * eps, hole_radius=tmpl.hole_radius,
                extents=tuple(float(e) for e in indexer.extents), grid_shape=indexer.shape,
                template=tmpl, cell_nodes=cell_nodes)
    _assert_quality(mesh)
    return mesh


def locate_in_box(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Triangle index and barycentric coordinates of points in a :func:`build_box_mesh` mesh."""
    if mesh.grid_shape is None or mesh.template is not None:
        raise ValueError("point location needs a structured box mesh")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nx, ny = mesh.grid_shape
    lx, ly = mesh.extents
    if np.any(pts < 0.0) or np.any(pts > [lx, ly]):
        raise CellLookupFailure("point outside the box")
    u = pts[:, 0] / lx * nx
    v = pts[:, 1] / ly * ny
    i = np.clip(np.floor(u).astype(int), 0, nx - 1)
    j = np.clip(np.floor(v).astype(int), 0, ny - 1)
    fu, fv = u - i, v - j
    sq = i * ny + j
    upper = fv > fu
    tri = np.where(upper, sq + nx * ny, sq)
    p = mesh.vertices[mesh.triangles[tri]]
    lam = _barycentric(p, pts)
    return tri, lam


def _barycentric(p, x):
    v0, v1 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    w = x - p[:, 0]
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (w[:, 0] * v1[:, 1] - w[:, 1] * v1[:, 0]) / det
    l2 = (v0[:, 0] * w[:, 1] - v0[:, 1] * w[:, 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def interpolate_p1(mesh: Mesh, values, points) -> np.ndarray:
    tri, lam = locate_in_box(mesh, points)
    return np.einsum("ij,ij->i", lam, np.asarray(values)[mesh.triangles[tri]])


def write_vtk(mesh: Mesh, path, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid, written atomically."""
    fmt = repr
    lines = ["# vtk DataFile Version 3.0", "evohom mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    # edge tags go into dataset-level field data, whose arrays may have any length
    tags = {k: v for k, v in mesh.edge_tags.items() if len(v)}
    if tags:
        lines.append(f"FIELD FieldData {len(tags)}")
        for name, e in tags.items():
            lines.append(f"{name} 2 {len(e)} int")
            lines += [f"{a} {b}" for a, b in e]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [f"{fmt(float(x))} {fmt(float(y))} 0.0" for x, y in mesh.vertices]
    m = mesh.n_triangles
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    ec = mesh.element_cell if mesh.element_cell is not None else np.zeros(m, dtype=int)
    lines += [f"CELL_DATA {m}", "SCALARS cell_index int 1", "LOOKUP_TABLE default"]
    lines += [str(int(c)) for c in ec]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, vals in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(float(v)) for v in vals]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
