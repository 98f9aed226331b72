"""Local constraint/objective matrices and the global quadratic program.

Per macro-triangle, the 16 unknown-bearing ordinates ``c`` (order
``bezier.C_NAMES``) are affine in the 9 local unknowns::

    d = [dx_V0, dy_V0, dx_V1, dy_V1, dx_V2, dy_V2, de_E0, de_E1, de_E2]
    c = R d + f

Monotonicity in x is imposed through ten sufficient cell conditions
``G c <= h``.  Each is the statement that the plane through three control
points has non-negative x-slope.  Rows come in four kinds, in this order:

* ``vertex`` (3 rows): the vertex tangent planes, ``dx_Vi >= 0``.
* ``inner`` (3 rows): cells ``(I_i1, C_k, C_j)``; these may be relaxed.
* ``centre`` (1 row): cell ``(I_02, I_12, I_22)``.
* ``edge`` (3 rows): cells ``(T_ij, T_ji, C_k)``; these may be relaxed.

The ``vertex`` and ``centre`` rows are necessary for monotonicity and are
never relaxed.  Relaxation adds six slacks ``xi <= 0`` per triangle that
loosen the ``inner`` and ``edge`` rows, penalised by ``-lam * sum(xi)``.

The curvature objective is the integral of the squared second derivative
of every edge curve of the control net (outer edges weighted one half).  It
is the quadratic ``c^T U c + w^T c + const``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bezier import C_INDEX, C_NAMES
from .errors import DegenerateTriangle, SingularAssembly, ParallelLines
from .geometry import CYCLIC, MacroTriangle, Triangulation

ROW_KINDS = ("vertex",) * 3 + ("inner",) * 3 + ("centre",) + ("edge",) * 3
SOFT_ROWS = (3, 4, 5, 7, 8, 9)

# second-difference quadratic of a cubic Bezier curve: 12 (P^2 + P Q + Q^2)
_P2 = np.array([1.0, -2.0, 1.0, 0.0])
_Q2 = np.array([0.0, 1.0, -2.0, 1.0])
CURVE_FORM = 12.0 * (np.outer(_P2, _P2) + 0.5 * (np.outer(_P2, _Q2) + np.outer(_Q2, _P2)) + np.outer(_Q2, _Q2))


@dataclass
class LocalSystem:
    R: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray
    U: np.ndarray
    w: np.ndarray
    const: float

    def ordinates(self, d) -> np.ndarray:
        return self.R @ np.asarray(d, dtype=float) + self.f


def build_Rf(tri: MacroTriangle, z) -> tuple[np.ndarray, np.ndarray]:
    """Affine map ``c = R d + f`` from the local unknowns to the 16 ordinates."""
    v = tri.points
    z = np.asarray(z, dtype=float).reshape(3)
    s = v.mean(axis=0)
    rows: dict[str, np.ndarray] = {}
    consts: dict[str, float] = {}

    def vertex_plane(name, i, loc):
        r = np.zeros(9)
        r[2 * i: 2 * i + 2] = loc - v[i]
        rows[name] = r
        consts[name] = z[i]

    for i, j, k in CYCLIC:
        vertex_plane(f"T{i}{j}", i, (2 * v[i] + v[j]) / 3)
        vertex_plane(f"T{i}{k}", i, (2 * v[i] + v[k]) / 3)
        vertex_plane(f"I{i}1", i, (2 * v[i] + s) / 3)
    for i, j, k in CYCLIC:
        g = tri.edges[i]
        r = g.theta_kj * rows[f"T{j}{k}"] + g.theta_jk * rows[f"T{k}{j}"]
        r[6 + i] += g.eta
        rows[f"C{i}"] = r
        consts[f"C{i}"] = g.theta_kj * consts[f"T{j}{k}"] + g.theta_jk * consts[f"T{k}{j}"]
    for i, j, k in CYCLIC:
        parts = (f"I{i}1", f"C{k}", f"C{j}")
        rows[f"I{i}2"] = sum(rows[n] for n in parts) / 3
        consts[f"I{i}2"] = sum(consts[n] for n in parts) / 3
    parts = ("I02", "I12", "I22")
    rows["S"] = sum(rows[n] for n in parts) / 3
    consts["S"] = sum(consts[n] for n in parts) / 3

    R = np.stack([rows[n] for n in C_NAMES])
    f = np.array([consts[n] for n in C_NAMES])
    return R, f


def _slope_row(coef: dict, names, ys) -> None:
    """Accumulate ``-[c_p (y_q - y_r) + c_q (y_r - y_p) + c_r (y_p - y_q)]``."""
    yp, yq, yr = ys
    for name, w in zip(names, (yq - yr, yr - yp, yp - yq)):
        coef[name] = coef.get(name, 0.0) - w


def build_Gh(tri: MacroTriangle, z) -> tuple[np.ndarray, np.ndarray]:
    """Monotonicity rows ``G c <= h`` (10 x 16) in the order of ``ROW_KINDS``."""
    y = tri.points[:, 1]
    ys = float(tri.points[:, 1].mean())
    z = np.asarray(z, dtype=float).reshape(3)
    G = np.zeros((10, 16))
    h = np.zeros(10)
    specs = []
    for i, j, k in CYCLIC:
        specs.append(((f"V{i}", f"T{i}{j}", f"T{i}{k}"), (y[i], y[j], y[k])))
    for i, j, k in CYCLIC:
        specs.append(((f"I{i}1", f"C{k}", f"C{j}"), (y[i], y[j], y[k])))
    specs.append((("I02", "I12", "I22"), (y[0], y[1], y[2])))
    for i, j, k in CYCLIC:
        specs.append(((f"T{i}{j}", f"T{j}{i}", f"C{k}"), (y[i], y[j], ys)))
    for row, (names, yy) in enumerate(specs):
        coef: dict[str, float] = {}
        _slope_row(coef, names, yy)
        for name, val in coef.items():
            if name.startswith("V"):
                h[row] -= val * z[int(name[1])]
            else:
                G[row, C_INDEX[name]] += val
    return G, h


def build_Uw(tri: MacroTriangle, z) -> tuple[np.ndarray, np.ndarray, float]:
    """Curvature objective ``c^T U c + w^T c + const`` over the 16 ordinates."""
    v = tri.points
    z = np.asarray(z, dtype=float).reshape(3)
    s = v.mean(axis=0)
    U = np.zeros((16, 16))
    w = np.zeros(16)
    const = 0.0
    curves = []
    for i, j, k in CYCLIC:
        length = float(np.hypot(*(v[k] - v[j])))
        curves.append((0.5, length, (("z", j), ("c", f"T{j}{k}"), ("c", f"T{k}{j}"), ("z", k))))
    for i in range(3):
        length = float(np.hypot(*(s - v[i])))
        curves.append((1.0, length, (("z", i), ("c", f"I{i}1"), ("c", f"I{i}2"), ("c", "S"))))
    for weight, length, nodes in curves:
        if length <= 0.0:
            raise DegenerateTriangle("zero-length edge in curvature objective")
        form = weight * CURVE_FORM / length**3
        for a, (ka, na) in enumerate(nodes):
            for b, (kb, nb) in enumerate(nodes):
                val = form[a, b]
                if ka == "c" and kb == "c":
                    U[C_INDEX[na], C_INDEX[nb]] += val
                elif ka == "c":
                    w[C_INDEX[na]] += 2.0 * val * z[nb]
                elif kb == "z":
                    const += val * z[na] * z[nb]
    return U, w, const


def build_robust_blocks(tri: MacroTriangle | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Slack coupling ``J1`` (10 x 6) and sign block ``J2`` (6 x 6 identity)."""
    J1 = np.zeros((10, 6))
    for col, row in enumerate(SOFT_ROWS):
        J1[row, col] = 1.0
    return J1, np.eye(6)


def local_system(tri: MacroTriangle, z) -> LocalSystem:
    R, f = build_Rf(tri, z)
    G, h = build_Gh(tri, z)
    U, w, const = build_Uw(tri, z)
    return LocalSystem(R, f, G, h, U, w, const)


@dataclass
class UnknownLayout:
    """Global variable indexing.

    Vertex ``v`` owns ``(2v, 2v+1)``; undirected edge ``e`` owns
    ``2*n_vertices + e``; triangle ``t`` owns six slacks starting at
    ``slack_start + 6 t`` (when slacks are present).  With explicit edge
    variables every triangle owns its own three ``de`` entries instead and
    equality rows tie neighbours together.
    """

    n_vertices: int
    n_edges: int
    n_triangles: int
    robust: bool
    explicit_edges: bool = False

    @property
    def n_edge_vars(self) -> int:
        return 3 * self.n_triangles if self.explicit_edges else self.n_edges

    @property
    def slack_start(self) -> int:
        return 2 * self.n_vertices + self.n_edge_vars

    @property
    def n_variables(self) -> int:
        return self.slack_start + (6 * self.n_triangles if self.robust else 0)

    def local_index(self, tri: MacroTriangle) -> tuple[np.ndarray, np.ndarray]:
        """Global indices and signs of the 9 local unknowns of ``tri``."""
        idx = np.empty(9, dtype=int)
        sign = np.ones(9)
        for n, vid in enumerate(tri.vertices):
            idx[2 * n] = 2 * vid
            idx[2 * n + 1] = 2 * vid + 1
        for i in range(3):
            if self.explicit_edges:
                idx[6 + i] = 2 * self.n_vertices + 3 * tri.index + i
            else:
                idx[6 + i] = 2 * self.n_vertices + tri.edge_ids[i]
                sign[6 + i] = tri.edge_signs[i]
        return idx, sign

    def slack_index(self, t: int) -> np.ndarray:
        return self.slack_start + 6 * t + np.arange(6)


@dataclass
class QuadraticProgram:
    """``min 1/2 v^T P v + q^T v + const`` s.t. ``A v <= b`` and ``E v = e``."""

    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    E: sp.csr_matrix | None = None
    e: np.ndarray | None = None
    tags: list = field(default_factory=list)
    const: float = 0.0
    layout: UnknownLayout | None = None

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(0.5 * v @ (self.P @ v) + self.q @ v + self.const)

    def dump(self) -> str:
        """Plain-text matrix dump, one row per line, space separated."""
        lines = [f"# n={self.n} m={self.m} const={self.const!r}", "# P"]
        lines += [" ".join(repr(float(x)) for x in row) for row in self.P.toarray()]
        lines += ["# q", " ".join(repr(float(x)) for x in self.q), "# A b tag"]
        A = self.A.toarray()
        for r in range(self.m):
            tag = self.tags[r] if r < len(self.tags) else ("", "")
            lines.append(" ".join(repr(float(x)) for x in A[r]) + f" | {self.b[r]!r} | {tag[0]}:{tag[1]}")
        if self.E is not None and self.E.shape[0]:
            lines.append("# E e")
            E = self.E.toarray()
            lines += [" ".join(repr(float(x)) for x in E[r]) + f" | {self.e[r]!r}" for r in range(E.shape[0])]
        return "\n".join(lines) + "\n"


def assemble_global(tri: Triangulation, z, lam: float = 1e-4, *, monotone: bool = True,
                    robust: bool = True, explicit_edges: bool = False,
                    locals_: list[LocalSystem] | None = None) -> QuadraticProgram:
    """Scatter the local systems into one global QP.

    Args:
        tri: triangulation of the sites.
        z: one value per site.
        lam: slack penalty weight (ignored unless ``robust``).
        monotone: include the monotonicity rows.
        robust: add slack variables on the ``inner`` and ``edge`` rows.
        explicit_edges: one ``de`` variable per triangle edge plus equality
            rows ``de + de_bar = 0`` on interior edges (reference form).
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (len(tri.points),):
        raise ValueError("need exactly one z value per site")
    robust = robust and monotone
    if robust and not lam > 0:
        raise ValueError("lam must be positive")
    layout = UnknownLayout(len(tri.points), len(tri.edges), len(tri.triangles), robust, explicit_edges)
    n = layout.n_variables
    if locals_ is None:
        try:
            locals_ = [local_system(t, z[list(t.vertices)]) for t in tri.triangles]
        except (DegenerateTriangle, ParallelLines) as exc:
            raise SingularAssembly(f"degenerate triangle in assembly: {exc}") from exc

    p_rows, p_cols, p_vals = [], [], []
    q = np.zeros(n)
    a_rows, a_cols, a_vals, b = [], [], [], []
    tags = []
    const = 0.0
    J1, _ = build_robust_blocks()
    row = 0
    for t, (mt, ls) in enumerate(zip(tri.triangles, locals_)):
        idx, sign = layout.local_index(mt)
        Rs = ls.R * sign[None, :]
        P_loc = 2.0 * Rs.T @ ls.U @ Rs
        q_loc = Rs.T @ (2.0 * ls.U @ ls.f + ls.w)
        const += float(ls.f @ ls.U @ ls.f + ls.w @ ls.f + ls.const)
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        p_rows.append(ii.ravel())
        p_cols.append(jj.ravel())
        p_vals.append(P_loc.ravel())
        np.add.at(q, idx, q_loc)
        if not monotone:
            continue
        GR = ls.G @ Rs
        rhs = ls.h - ls.G @ ls.f
        for r in range(10):
            a_rows.append(np.full(9, row))
            a_cols.append(idx)
            a_vals.append(GR[r])
            if robust and J1[r].any():
                col = layout.slack_index(t)[np.argmax(J1[r])]
                a_rows.append(np.array([row]))
                a_cols.append(np.array([col]))
                a_vals.append(np.array([1.0]))
            b.append(rhs[r])
            tags.append((t, ROW_KINDS[r]))
            row += 1
        if robust:
            sl = layout.slack_index(t)
            q[sl] -= lam
            for s_col in sl:
                a_rows.append(np.array([row]))
                a_cols.append(np.array([s_col]))
                a_vals.append(np.array([1.0]))
                b.append(0.0)
                tags.append((t, "slack"))
                row += 1

    P = sp.coo_matrix((np.concatenate(p_vals), (np.concatenate(p_rows), np.concatenate(p_cols))), shape=(n, n)).tocsc()
    P = ((P + P.T) * 0.5).tocsc()
    if row:
        A = sp.coo_matrix((np.concatenate(a_vals), (np.concatenate(a_rows), np.concatenate(a_cols))), shape=(row, n)).tocsr()
    else:
        A = sp.csr_matrix((0, n))
    E = e = None
    if explicit_edges:
        e_rows, e_cols, e_vals = [], [], []
        k = 0
        for eid, edge in enumerate(tri.edges):
            if not edge.interior:
                continue
            for t in edge.triangles:
                i = tri.triangles[t].edge_ids.index(eid)
                e_rows.append(k)
                e_cols.append(2 * layout.n_vertices + 3 * t + i)
                e_vals.append(1.0)
            k += 1
        E = sp.coo_matrix((e_vals, (e_rows, e_cols)), shape=(k, n)).tocsr()
        e = np.zeros(k)
    return QuadraticProgram(P, q, A, np.asarray(b, dtype=float), E, e, tags, const, layout)


def ordinates_from_solution(tri: Triangulation, z, v, layout: UnknownLayout,
                            locals_: list[LocalSystem] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle 19 ordinates and local ``d`` vectors from a solution ``v``."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    ords = np.empty((len(tri.triangles), 19))
    ds = np.empty((len(tri.triangles), 9))
    for t, mt in enumerate(tri.triangles):
        zt = z[list(mt.vertices)]
        ls = locals_[t] if locals_ is not None else None
        if ls is None:
            R, f = build_Rf(mt, zt)
        else:
            R, f = ls.R, ls.f
        idx, sign = layout.local_index(mt)
        d = sign * v[idx]
        ds[t] = d
        ords[t, :3] = zt
        ords[t, 3:] = R @ d + f
    return ords, ds
