"""Cubic triangular Bezier patches of the Clough-Tocher control net.

A macro-triangle carries 19 ordinates.  They are stored in the order of
``ORDINATES``: the three vertex values first, then the 16 unknown-bearing
ordinates in the order used by the assembly matrices.

A micro patch is the 10-vector ``[V_i, T_ij, I_i1, V_j, T_ji, I_j1, S, I_i2,
I_j2, C_k]`` for micro ``(V_i, V_j, S)``, evaluated as::

    z = c0 a^3 + 3 c1 a^2 b + 3 c2 a^2 g + c3 b^3 + 3 c4 a b^2
        + 3 c5 b^2 g + c6 g^3 + 3 c7 a g^2 + 3 c8 b g^2 + 6 c9 a b g
"""

from __future__ import annotations

import numpy as np

from .geometry import CYCLIC, MacroTriangle, barycentric, locate_many, micro_from_macro
from .errors import OutsideConvexHull

C_NAMES = (
    "T01", "T02", "I01", "T12", "T10", "I11", "T20", "T21", "I21",
    "C0", "C1", "C2", "I02", "I12", "I22", "S",
)
ORDINATES = ("V0", "V1", "V2") + C_NAMES
INDEX = {name: n for n, name in enumerate(ORDINATES)}
C_INDEX = {name: n for n, name in enumerate(C_NAMES)}


def micro_names(m: int) -> tuple[str, ...]:
    i, j, k = CYCLIC[m]
    return (f"V{i}", f"T{i}{j}", f"I{i}1", f"V{j}", f"T{j}{i}", f"I{j}1", "S", f"I{i}2", f"I{j}2", f"C{k}")


# (3, 10) index table from micro patch slots into the 19-ordinate vector
MICRO_LAYOUT = np.array([[INDEX[n] for n in micro_names(m)] for m in range(3)])

# exponents (a, b, g) and multinomial weights of the 10 slots
_EXP = np.array([
    (3, 0, 0), (2, 1, 0), (2, 0, 1), (0, 3, 0), (1, 2, 0),
    (0, 2, 1), (0, 0, 3), (1, 0, 2), (0, 1, 2), (1, 1, 1),
])
_WEIGHT = np.array([1, 3, 3, 1, 3, 3, 1, 3, 3, 6], dtype=float)


def ordinate_locations(points) -> np.ndarray:
    """Domain locations ``(19, 2)`` of the ordinates of a macro-triangle."""
    v = np.asarray(points, dtype=float).reshape(3, 2)
    s = v.mean(axis=0)
    loc = {f"V{i}": v[i] for i in range(3)}
    for i, j, k in CYCLIC:
        loc[f"T{i}{j}"] = (2 * v[i] + v[j]) / 3
        loc[f"T{i}{k}"] = (2 * v[i] + v[k]) / 3
        loc[f"I{i}1"] = (2 * v[i] + s) / 3
        loc[f"I{i}2"] = (v[i] + 2 * s) / 3
        loc[f"C{i}"] = (v[j] + v[k] + s) / 3
    loc["S"] = s
    return np.array([loc[n] for n in ORDINATES])


def _basis(bary: np.ndarray) -> np.ndarray:
    a, b, g = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack(
        [a**3, a * a * b, a * a * g, b**3, a * b * b, b * b * g, g**3, a * g * g, b * g * g, a * b * g],
        axis=-1,
    ) * _WEIGHT


def eval_patch(patch, bary) -> np.ndarray:
    """Evaluate a micro patch at barycentric coordinates.

    ``patch`` is ``(10,)`` or ``(..., 10)`` and broadcasts against
    ``bary`` of shape ``(..., 3)``.
    """
    patch = np.asarray(patch, dtype=float)
    bary = np.asarray(bary, dtype=float)
    return np.sum(_basis(bary) * patch, axis=-1)


def _control_triangle(patch) -> dict:
    """Patch slots keyed by Bezier multi-index ``(i, j, k)``, ``i+j+k = 3``."""
    return {tuple(e): patch[..., n] for n, e in enumerate(_EXP)}


def eval_patch_decasteljau(patch, bary) -> np.ndarray:
    """Evaluate a micro patch by repeated barycentric averaging."""
    patch = np.asarray(patch, dtype=float)
    bary = np.asarray(bary, dtype=float)
    a, b, g = bary[..., 0], bary[..., 1], bary[..., 2]
    net = _control_triangle(patch)
    for r in (2, 1, 0):
        net = {
            (i, j, r - i - j): a * net[(i + 1, j, r - i - j)]
            + b * net[(i, j + 1, r - i - j)]
            + g * net[(i, j, r - i - j + 1)]
            for i in range(r + 1)
            for j in range(r + 1 - i)
        }
    return net[(0, 0, 0)]


def patch_bary_gradient(patch, bary) -> np.ndarray:
    """Partial derivatives ``(dz/da, dz/db, dz/dg)`` of a patch, shape ``(..., 3)``."""
    c = np.asarray(patch, dtype=float)
    bary = np.asarray(bary, dtype=float)
    a, b, g = bary[..., 0], bary[..., 1], bary[..., 2]
    c = [c[..., n] for n in range(10)]
    da = 3 * c[0] * a * a + 6 * c[1] * a * b + 6 * c[2] * a * g + 3 * c[4] * b * b + 3 * c[7] * g * g + 6 * c[9] * b * g
    db = 3 * c[1] * a * a + 6 * c[4] * a * b + 6 * c[9] * a * g + 3 * c[3] * b * b + 3 * c[8] * g * g + 6 * c[5] * b * g
    dg = 3 * c[2] * a * a + 6 * c[9] * a * b + 6 * c[7] * a * g + 3 * c[5] * b * b + 3 * c[6] * g * g + 6 * c[8] * b * g
    return np.stack([da, db, dg], axis=-1)


def bary_partials(micro_points) -> np.ndarray:
    """Gradient of the barycentric coordinates of a triangle: ``(3, 2)``.

    Row ``n`` is ``(d lambda_n/dx, d lambda_n/dy)``.
    """
    p = np.asarray(micro_points, dtype=float)
    area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    out = np.empty((3, 2))
    for i, j, k in CYCLIC:
        out[i] = ((p[j, 1] - p[k, 1]) / area2, (p[k, 0] - p[j, 0]) / area2)
    return out


def ddx_coefficients(micro_points, patch) -> np.ndarray:
    """The six coefficients of ``dz/dx`` as a quadratic form in ``(a, b, g)``.

    Order: ``a^2, b^2, g^2, a b, a g, b g``.  The first three are the
    x-derivatives at the micro vertices.
    """
    p = np.asarray(micro_points, dtype=float)
    c = np.asarray(patch, dtype=float)
    area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1])
    yi, yj, ys = p[0, 1], p[1, 1], p[2, 1]
    wa, wb, wg = yj - ys, ys - yi, yi - yj

    def bracket(u, v, w):
        return c[..., u] * wa + c[..., v] * wb + c[..., w] * wg

    return np.stack([
        3 / area2 * bracket(0, 1, 2),
        3 / area2 * bracket(4, 3, 5),
        3 / area2 * bracket(7, 8, 6),
        6 / area2 * bracket(1, 4, 9),
        6 / area2 * bracket(2, 9, 7),
        6 / area2 * bracket(9, 5, 8),
    ], axis=-1)


class ControlNet:
    """The 19 ordinates of one macro-triangle, with evaluation helpers.

    Args:
        points: ``(3, 2)`` macro vertices (counter-clockwise).
        ordinates: ``(19,)`` values in ``ORDINATES`` order.
    """

    def __init__(self, points, ordinates):
        self.points = np.asarray(points, dtype=float).reshape(3, 2)
        self.ordinates = np.asarray(ordinates, dtype=float).reshape(19)
        self._micro = np.stack([
            np.stack([self.points[i], self.points[j], self.points.mean(axis=0)]) for i, j, _ in CYCLIC
        ])
        self._partials = np.stack([bary_partials(m) for m in self._micro])

    @property
    def patches(self) -> np.ndarray:
        return self.ordinates[MICRO_LAYOUT]

    def value(self, name: str) -> float:
        return float(self.ordinates[INDEX[name]])

    def micro_points(self, m: int) -> np.ndarray:
        return self._micro[m]

    def _locate(self, p):
        p = np.asarray(p, dtype=float)
        b = barycentric(self.points, p)
        if np.any(b < -1e-10):
            raise OutsideConvexHull("point lies outside the triangle")
        return micro_from_macro(b)

    def evaluate(self, p) -> np.ndarray:
        micro, bary = self._locate(p)
        return eval_patch(self.patches[micro], bary)

    def gradient(self, p) -> np.ndarray:
        micro, bary = self._locate(p)
        return gradient_in_micro(self.patches[micro], self._partials[micro], bary)


def gradient_in_micro(patch, partials, bary) -> np.ndarray:
    """Cartesian gradient ``(..., 2)`` from patch values and barycentric partials."""
    dz = patch_bary_gradient(patch, bary)  # (..., 3)
    return np.einsum("...n,...nd->...d", dz, partials)


def ddx(net: ControlNet, tri: MacroTriangle | None, p) -> np.ndarray:
    """``dz/dx`` at ``p`` via the quadratic form of the x-derivative."""
    micro, bary = net._locate(p)
    coef = ddx_coefficients(net._micro[micro], net.patches[micro])
    a, b, g = bary[..., 0], bary[..., 1], bary[..., 2]
    mono = np.stack([a * a, b * b, g * g, a * b, a * g, b * g], axis=-1)
    return np.sum(coef * mono, axis=-1)


def ddir(net: ControlNet, tri: MacroTriangle | None, p, u) -> np.ndarray:
    """Directional derivative along the unit vector ``u``."""
    u = np.asarray(u, dtype=float)
    return net.gradient(p) @ u


def nets_from_ordinates(points_stack: np.ndarray, ordinates: np.ndarray) -> list[ControlNet]:
    return [ControlNet(p, o) for p, o in zip(points_stack, ordinates)]


def evaluate_nets(tri, ordinates: np.ndarray, p, outside: str = "raise"):
    """Evaluate a piecewise surface over a triangulation.

    Args:
        tri: Triangulation.
        ordinates: ``(T, 19)`` ordinates per triangle.
        p: points ``(m, 2)``.
        outside: ``"raise"`` or ``"nan"`` for points outside the hull.

    Returns:
        ``(values, gradients)`` of shapes ``(m,)`` and ``(m, 2)``.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    macro, micro, bary = locate_many(tri, p)
    bad = macro < 0
    if np.any(bad) and outside == "raise":
        q = p[np.flatnonzero(bad)[0]]
        raise OutsideConvexHull(f"point ({q[0]:.6g}, {q[1]:.6g}) lies outside the convex hull")
    ok = ~bad
    values = np.full(len(p), np.nan)
    grads = np.full((len(p), 2), np.nan)
    if np.any(ok):
        patches = ordinates[macro[ok]][np.arange(ok.sum())[:, None], MICRO_LAYOUT[micro[ok]]]
        values[ok] = eval_patch(patches, bary[ok])
        partials = _partials_table(tri)[macro[ok], micro[ok]]
        grads[ok] = gradient_in_micro(patches, partials, bary[ok])
    return values, grads


def _partials_table(tri) -> np.ndarray:
    cache = getattr(tri, "_partials_cache", None)
    if cache is None:
        cache = np.empty((len(tri.triangles), 3, 3, 2))
        for t, mt in enumerate(tri.triangles):
            s = mt.points.mean(axis=0)
            for m, (i, j, _) in enumerate(CYCLIC):
                cache[t, m] = bary_partials(np.stack([mt.points[i], mt.points[j], s]))
        tri._partials_cache = cache
    return cache
