"""Planar triangulation, Clough-Tocher split and affine edge quantities.

Conventions used throughout the package:

* Triangles are stored counter-clockwise with vertices ``V0, V1, V2`` and
  centroid ``S``.  Edge ``E_i`` is opposite ``V_i`` and runs from ``V_j`` to
  ``V_k`` where ``(i, j, k)`` is a cyclic permutation of ``(0, 1, 2)``.
* Micro-triangle ``m`` is ``(V_m, V_{m+1}, S)``; it borders macro edge
  ``E_{m+2}`` and carries the interior ordinate ``C_{m+2}``.
* ``C_i`` sits at the centroid of the micro-triangle bordering ``E_i``.  Its
  counterpart across the edge, ``Cbar_i``, is the neighbour's ``C`` for the
  shared edge, or the reflection of ``C_i`` through the edge midpoint when
  ``E_i`` lies on the convex hull.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay

from .errors import (
    CollinearInput,
    DegenerateTriangle,
    DuplicateSite,
    OutsideConvexHull,
    ParallelLines,
)

BARY_TOL = 1e-10
DEGENERACY_TOL = 1e-12

CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


@dataclass(frozen=True)
class Site:
    x: float
    y: float
    id: int


@dataclass(frozen=True)
class EdgeGeom:
    """Affine quantities of one macro edge as seen from one triangle.

    Attributes:
        xstar: intersection of the line ``C_i Cbar_i`` with the edge line.
        eta: distance from ``xstar`` to ``C_i``.
        theta_kj: weight of ``T_jk`` in ``xstar = theta_kj*T_jk + theta_jk*T_kj``.
        theta_jk: weight of ``T_kj``; ``theta_kj + theta_jk == 1``.
        direction: unit vector from ``xstar`` towards ``C_i``.
        cbar: the point used as ``Cbar_i``.
    """

    xstar: np.ndarray
    eta: float
    theta_kj: float
    theta_jk: float
    direction: np.ndarray
    cbar: np.ndarray


@dataclass(frozen=True)
class Edge:
    vertices: tuple[int, int]
    triangles: tuple[int, ...]

    @property
    def interior(self) -> bool:
        return len(self.triangles) == 2


@dataclass(frozen=True)
class MacroTriangle:
    """A triangulation cell with its Clough-Tocher geometry."""

    index: int
    vertices: tuple[int, int, int]
    points: np.ndarray
    edges: tuple[EdgeGeom, EdgeGeom, EdgeGeom]
    edge_ids: tuple[int, int, int] = (-1, -1, -1)
    edge_signs: tuple[int, int, int] = (1, 1, 1)
    neighbors: tuple[int, int, int] = (-1, -1, -1)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    @property
    def area(self) -> float:
        return signed_area(self.points)

    def c_point(self, i: int) -> np.ndarray:
        """Domain location of the interior ordinate ``C_i``."""
        _, j, k = CYCLIC[i]
        return (self.points[j] + self.points[k] + self.centroid) / 3.0


@dataclass
class Triangulation:
    """Delaunay triangulation with edge adjacency.

    ``points`` holds the site coordinates as an ``(n, 2)`` array and
    ``triangles[t].vertices`` index into it.
    """

    sites: list[Site]
    points: np.ndarray
    triangles: list[MacroTriangle]
    edges: list[Edge]
    hull: list[int]
    _edge_index: dict = field(default_factory=dict, repr=False)

    @property
    def n_interior_edges(self) -> int:
        return sum(e.interior for e in self.edges)

    def edge_id(self, a: int, b: int) -> int:
        return self._edge_index[(min(a, b), max(a, b))]

    @property
    def scale(self) -> float:
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.hypot(*span))


def signed_area(points) -> float:
    p = np.asarray(points, dtype=float)
    return 0.5 * float(
        (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    )


def _check_nondegenerate(points: np.ndarray) -> float:
    area2 = 2.0 * signed_area(points)
    span = points.max(axis=0) - points.min(axis=0)
    diag2 = float(span @ span)
    if diag2 == 0.0 or abs(area2) < DEGENERACY_TOL * diag2:
        raise DegenerateTriangle(f"triangle {points.tolist()} has |2A| = {abs(area2):.3g}")
    return area2


def barycentric(tri, p) -> np.ndarray:
    """Barycentric coordinates of ``p`` from signed-area ratios.

    Args:
        tri: a MacroTriangle or a ``(3, 2)`` array of vertices.
        p: a point ``(2,)`` or an array of points ``(..., 2)``.

    Returns:
        Array of shape ``(..., 3)`` whose last axis sums to one.
    """
    v = np.asarray(tri.points if isinstance(tri, MacroTriangle) else tri, dtype=float)
    area2 = _check_nondegenerate(v)
    p = np.asarray(p, dtype=float)
    out = np.empty(p.shape[:-1] + (3,))
    for i, j, k in CYCLIC:
        # area of (p, V_j, V_k)
        out[..., i] = (
            (v[j, 0] - p[..., 0]) * (v[k, 1] - p[..., 1])
            - (v[k, 0] - p[..., 0]) * (v[j, 1] - p[..., 1])
        ) / area2
    return out


def ct_split(tri) -> np.ndarray:
    """The three micro-triangles ``(V_m, V_{m+1}, S)`` as a ``(3, 3, 2)`` array."""
    v = np.asarray(tri.points if isinstance(tri, MacroTriangle) else tri, dtype=float)
    s = v.mean(axis=0)
    return np.stack([np.stack([v[m], v[(m + 1) % 3], s]) for m in range(3)])


def _line_intersection(vj, vk, c, cbar) -> np.ndarray:
    """Intersection of line ``c cbar`` with line ``vj vk`` (closed form)."""
    # shift to a local origin so the cross products do not cancel badly
    o = vj
    xj, yj = vj - o
    xk, yk = vk - o
    xc, yc = c - o
    xb, yb = cbar - o
    den = (xb - xc) * (yk - yj) - (yb - yc) * (xk - xj)
    scale = np.hypot(xb - xc, yb - yc) * np.hypot(xk - xj, yk - yj)
    if scale == 0.0 or abs(den) < DEGENERACY_TOL * scale:
        raise ParallelLines("line through C and Cbar is parallel to the edge")
    cross_e = xj * yk - xk * yj
    cross_c = xc * yb - xb * yc
    xs = ((xb - xc) * cross_e - (xk - xj) * cross_c) / den
    ys = ((yb - yc) * cross_e - (yk - yj) * cross_c) / den
    return np.array([xs, ys]) + o


def edge_geometry_points(vj, vk, c, cbar) -> EdgeGeom:
    """Edge quantities from raw points (edge ``vj -> vk``, ordinates ``c``, ``cbar``)."""
    vj, vk, c, cbar = (np.asarray(a, dtype=float) for a in (vj, vk, c, cbar))
    xstar = _line_intersection(vj, vk, c, cbar)
    t_jk = (2.0 * vj + vk) / 3.0
    t_kj = (vj + 2.0 * vk) / 3.0
    delta = t_kj - t_jk
    # ratio along the dominant axis; equals the x-ratio whenever x is usable
    ax = 0 if abs(delta[0]) >= abs(delta[1]) else 1
    theta_kj = float((t_kj[ax] - xstar[ax]) / (t_kj[ax] - t_jk[ax]))
    theta_jk = 1.0 - theta_kj
    offset = c - xstar
    eta = float(np.hypot(*offset))
    if eta == 0.0:
        raise ParallelLines("C lies on the edge")
    return EdgeGeom(xstar, eta, theta_kj, theta_jk, offset / eta, cbar)


def edge_geometry(tri: MacroTriangle, i: int, neighbor: MacroTriangle | None = None) -> EdgeGeom:
    """Edge quantities of edge ``E_i`` of ``tri``.

    Args:
        tri: the triangle.
        i: edge index (edge opposite ``V_i``).
        neighbor: the triangle across ``E_i``, or None for a hull edge, in
            which case ``Cbar_i`` is the reflection of ``C_i`` through the
            edge midpoint.
    """
    return _edge_geom_raw(tri.points, i, None if neighbor is None else neighbor.points)


def _edge_geom_raw(points: np.ndarray, i: int, nb_points: np.ndarray | None) -> EdgeGeom:
    _, j, k = CYCLIC[i]
    vj, vk = points[j], points[k]
    s = points.mean(axis=0)
    c = (vj + vk + s) / 3.0
    if nb_points is None:
        cbar = vj + vk - c
    else:
        cbar = (vj + vk + nb_points.mean(axis=0)) / 3.0
    return edge_geometry_points(vj, vk, c, cbar)


def macro_triangle(points, neighbor_points=(None, None, None), index: int = 0,
                   vertices=(0, 1, 2)) -> MacroTriangle:
    """Build a standalone MacroTriangle, e.g. for local tests.

    ``neighbor_points[i]`` is the vertex array of the triangle across
    ``E_i`` or None for a hull edge.  Clockwise input is rejected.
    """
    pts = np.array(points, dtype=float).reshape(3, 2)
    area2 = _check_nondegenerate(pts)
    if area2 < 0:
        raise DegenerateTriangle("triangle must be counter-clockwise")
    edges = tuple(
        _edge_geom_raw(pts, i, None if neighbor_points[i] is None else np.asarray(neighbor_points[i], float))
        for i in range(3)
    )
    return MacroTriangle(index, tuple(vertices), pts, edges)


def _as_points(sites) -> tuple[list[Site], np.ndarray]:
    if len(sites) and isinstance(sites[0], Site):
        site_list = list(sites)
        pts = np.array([[s.x, s.y] for s in site_list], dtype=float)
    else:
        pts = np.asarray(sites, dtype=float).reshape(-1, 2)
        site_list = [Site(float(x), float(y), n) for n, (x, y) in enumerate(pts)]
    return site_list, pts


def triangulate(sites: Sequence[Site] | np.ndarray) -> Triangulation:
    """Delaunay triangulation with Clough-Tocher edge geometry.

    Args:
        sites: list of Site or an ``(n, 2)`` coordinate array.

    Raises:
        DuplicateSite: two sites share coordinates.
        CollinearInput: fewer than 3 sites or all sites on one line.
    """
    site_list, pts = _as_points(sites)
    n = len(pts)
    if n < 3:
        raise CollinearInput(f"need at least 3 sites, got {n}")
    if not np.all(np.isfinite(pts)):
        raise CollinearInput("site coordinates must be finite")
    _, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
    if np.any(counts > 1):
        dup = pts[first[counts > 1][0]]
        raise DuplicateSite(f"duplicate site at ({dup[0]:.17g}, {dup[1]:.17g})")
    if np.ptp(pts[:, 1]) == 0.0:
        raise CollinearInput("all sites share one y value (fewer than 2 distinct resolutions)")
    if np.ptp(pts[:, 0]) == 0.0:
        raise CollinearInput("all sites share one x value (fewer than 2 distinct bitrates)")
    centred = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-12 * sv[0]:
        raise CollinearInput("all sites lie on one line")

    simplices = Delaunay(pts).simplices.astype(int)
    tri_verts = []
    for simplex in simplices:
        a, b, c = (int(v) for v in simplex)
        if signed_area(pts[[a, b, c]]) < 0:
            b, c = c, b
        tri_verts.append((a, b, c))
    return build_triangulation(site_list, pts, tri_verts)


def build_triangulation(sites, points: np.ndarray, tri_verts) -> Triangulation:
    """Assemble adjacency and edge geometry for given CCW vertex triples."""
    pts = np.asarray(points, dtype=float)
    tri_verts = [tuple(int(v) for v in t) for t in tri_verts]
    for vs in tri_verts:
        if _check_nondegenerate(pts[list(vs)]) < 0:
            raise DegenerateTriangle(f"triangle {vs} is not counter-clockwise")

    edge_index: dict[tuple[int, int], int] = {}
    edge_tris: list[list[int]] = []
    tri_edge_ids = []
    for t, vs in enumerate(tri_verts):
        ids = []
        for i, j, k in CYCLIC:
            key = (min(vs[j], vs[k]), max(vs[j], vs[k]))
            if key not in edge_index:
                edge_index[key] = len(edge_tris)
                edge_tris.append([])
            eid = edge_index[key]
            edge_tris[eid].append(t)
            ids.append(eid)
        tri_edge_ids.append(tuple(ids))
    if any(len(owners) > 2 for owners in edge_tris):
        raise DegenerateTriangle("an edge is shared by more than two triangles")
    edges = [Edge(key, tuple(edge_tris[eid])) for key, eid in edge_index.items()]

    triangles = []
    for t, vs in enumerate(tri_verts):
        p = pts[list(vs)]
        nbs, signs, geoms = [], [], []
        for i in range(3):
            owners = edge_tris[tri_edge_ids[t][i]]
            other = [o for o in owners if o != t]
            nb = other[0] if other else -1
            nbs.append(nb)
            signs.append(1 if owners[0] == t else -1)
            geoms.append(_edge_geom_raw(p, i, None if nb < 0 else pts[list(tri_verts[nb])]))
        triangles.append(MacroTriangle(t, vs, p, tuple(geoms), tri_edge_ids[t], tuple(signs), tuple(nbs)))

    # hull boundary: directed hull edges taken from their CCW triangle
    nxt = {}
    for t, vs in enumerate(tri_verts):
        for i, j, k in CYCLIC:
            if len(edge_tris[tri_edge_ids[t][i]]) == 1:
                if vs[j] in nxt:
                    raise DegenerateTriangle("boundary is not a simple polygon")
                nxt[vs[j]] = vs[k]
    start = min(nxt)
    hull = [start]
    while nxt.get(hull[-1], start) != start and len(hull) <= len(nxt):
        hull.append(nxt[hull[-1]])
    if len(hull) != len(nxt):
        raise DegenerateTriangle("boundary is not a single closed polygon")

    return Triangulation(list(sites), pts, triangles, edges, hull, edge_index)


def macro_barycentric_all(tri: Triangulation, p: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points ``(m, 2)`` in every triangle: ``(m, T, 3)``."""
    v = np.stack([t.points for t in tri.triangles])  # (T, 3, 2)
    area2 = 2.0 * np.array([t.area for t in tri.triangles])
    px = p[:, None, 0]
    py = p[:, None, 1]
    out = np.empty((len(p), len(v), 3))
    for i, j, k in CYCLIC:
        out[..., i] = (
            (v[None, :, j, 0] - px) * (v[None, :, k, 1] - py)
            - (v[None, :, k, 0] - px) * (v[None, :, j, 1] - py)
        ) / area2[None, :]
    return out


def micro_from_macro(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pick the micro-triangle and its barycentric coordinates.

    With macro coordinates ``(b0, b1, b2)``, the point has coordinates
    ``(b_m - b_k, b_{m+1} - b_k, 3 b_k)`` in micro ``m`` where ``k = m+2``.
    The lowest micro index whose coordinates are all above ``-BARY_TOL`` wins.
    """
    b = np.asarray(b, dtype=float)
    micro = np.full(b.shape[:-1], -1, dtype=int)
    bary = np.full(b.shape, np.nan)
    for m, (i, j, k) in enumerate(CYCLIC):
        cand = np.stack([b[..., i] - b[..., k], b[..., j] - b[..., k], 3.0 * b[..., k]], axis=-1)
        ok = (micro < 0) & np.all(cand >= -BARY_TOL, axis=-1)
        micro[ok] = m
        bary[ok] = cand[ok]
    # numerically a point can miss every micro by a hair; assign the closest
    miss = micro < 0
    if np.any(miss):
        m = np.argmin(b[miss], axis=-1)  # smallest b_k -> micro k-2
        micro[miss] = (m + 1) % 3
        for idx, mm in zip(np.flatnonzero(miss), micro[miss]):
            i, j, k = CYCLIC[mm]
            bb = b.reshape(-1, 3)[idx]
            bary.reshape(-1, 3)[idx] = (bb[i] - bb[k], bb[j] - bb[k], 3.0 * bb[k])
    return micro, bary


def locate_many(tri: Triangulation, p, chunk: int | None = None):
    """Vectorised locate.

    Returns:
        ``(macro, micro, bary)`` with ``macro == -1`` for points outside the
        hull (their ``micro`` is -1 and ``bary`` is nan).
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    n_tri = len(tri.triangles)
    if chunk is None:
        chunk = max(1, 2_000_000 // max(n_tri, 1))
    macro = np.full(len(p), -1, dtype=int)
    micro = np.full(len(p), -1, dtype=int)
    bary = np.full((len(p), 3), np.nan)
    for s in range(0, len(p), chunk):
        sl = slice(s, s + chunk)
        b = macro_barycentric_all(tri, p[sl])
        inside = np.all(b >= -BARY_TOL, axis=-1)
        hit = inside.any(axis=1)
        first = np.argmax(inside, axis=1)
        rows = np.flatnonzero(hit)
        mb = b[rows, first[rows]]
        mi, ub = micro_from_macro(mb)
        macro[sl][rows] = first[rows]
        micro[sl][rows] = mi
        bary[sl][rows] = ub
    return macro, micro, bary


def locate(tri: Triangulation, p) -> tuple[int, int, np.ndarray]:
    """Containing macro id, micro id and micro barycentric coordinates of ``p``.

    Raises:
        OutsideConvexHull: ``p`` is not inside the closed hull.
    """
    macro, micro, bary = locate_many(tri, np.asarray(p, dtype=float).reshape(1, 2))
    if macro[0] < 0:
        raise OutsideConvexHull(f"point {tuple(np.ravel(p))} lies outside the convex hull")
    return int(macro[0]), int(micro[0]), bary[0]
