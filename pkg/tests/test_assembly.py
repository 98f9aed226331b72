import numpy as np
import pytest
from hypothesis import given, strategies as st

from grdkit.assembly import (
    ROW_KINDS,
    SOFT_ROWS,
    assemble_global,
    build_Gh,
    build_Rf,
    build_robust_blocks,
    build_Uw,
    local_system,
    ordinates_from_solution,
)
from grdkit.bezier import C_INDEX, C_NAMES, ordinate_locations
from grdkit.geometry import macro_triangle, triangulate
from grdkit.qp import solve

from oracles import plane_unknowns

RIGHT = macro_triangle([[0, 0], [3, 0], [0, 3]])


def _random_triangle(rng):
    p = rng.random((3, 2))
    if (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]) < 0:
        p = p[[0, 2, 1]]
    return macro_triangle(p)


def test_rf_first_row():
    R, f = build_Rf(RIGHT, [5.0, 6.0, 7.0])
    assert np.allclose(R[C_INDEX["T01"]], [1, 0, 0, 0, 0, 0, 0, 0, 0])
    assert f[C_INDEX["T01"]] == 5.0
    assert R.shape == (16, 9) and f.shape == (16,)


def test_rf_constant_reproduction(rng):
    for _ in range(10):
        R, f = build_Rf(_random_triangle(rng), [2.5, 2.5, 2.5])
        assert np.allclose(f, 2.5, atol=1e-13)


def _plane_case(mt, a, b, c):
    z = mt.points @ [a, b] + c
    d = plane_unknowns(mt, a, b)
    return z, d


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_rf_plane_oracle(seed, a, b):
    mt = _random_triangle(np.random.default_rng(seed))
    z, d = _plane_case(mt, a, b, 0.4)
    R, f = build_Rf(mt, z)
    loc = ordinate_locations(mt.points)[3:]
    assert np.allclose(R @ d + f, loc @ [a, b] + 0.4, atol=1e-9)


def test_gh_shapes_and_h_support(rng):
    G, h = build_Gh(_random_triangle(rng), [1.0, 2.0, 3.0])
    assert G.shape == (10, 16)
    assert np.all(h[3:] == 0) and np.any(h[:3] != 0)
    # vertex rows reference only the two vertex-adjacent T ordinates
    assert ROW_KINDS[:3] == ("vertex",) * 3 and ROW_KINDS[6] == "centre"


def test_gh_vertex_row_value():
    y = RIGHT.points[:, 1]
    _, h = build_Gh(RIGHT, [1.0, 2.0, 3.0])
    for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        assert h[i] == pytest.approx((y[j] - y[k]) * [1.0, 2.0, 3.0][i])


def test_gh_monotone_plane_feasible(rng):
    for _ in range(20):
        mt = _random_triangle(rng)
        z, d = _plane_case(mt, rng.uniform(0.1, 2), rng.uniform(-2, 2), 1.0)
        ls = local_system(mt, z)
        assert np.all(ls.G @ ls.ordinates(d) - ls.h <= 1e-10)


def test_gh_decreasing_plane_violates_vertex_row(rng):
    for _ in range(20):
        mt = _random_triangle(rng)
        z, d = _plane_case(mt, -rng.uniform(0.1, 2), rng.uniform(-2, 2), 1.0)
        ls = local_system(mt, z)
        slack = ls.G @ ls.ordinates(d) - ls.h
        assert np.any(slack[:3] > 1e-12)


def test_gh_constant_data_holds(rng):
    mt = _random_triangle(rng)
    ls = local_system(mt, [4.0, 4.0, 4.0])
    assert np.all(ls.G @ ls.ordinates(np.zeros(9)) - ls.h <= 1e-12)


def test_uw_closed_form_entries():
    U, w, _ = build_Uw(RIGHT, [0.0, 0.0, 0.0])
    e2 = 3.0
    t01, t10 = C_INDEX["T01"], C_INDEX["T10"]
    assert U[t01, t01] == pytest.approx(18 / e2**3)
    assert U[t01, t10] == pytest.approx(-9 / e2**3)
    for name in ("C0", "C1", "C2"):
        assert np.all(U[C_INDEX[name]] == 0) and np.all(U[:, C_INDEX[name]] == 0)
    assert np.allclose(U, U.T)


def test_uw_affine_net_zero(rng):
    for _ in range(10):
        mt = _random_triangle(rng)
        z, d = _plane_case(mt, rng.normal(), rng.normal(), rng.normal())
        ls = local_system(mt, z)
        c = ls.ordinates(d)
        assert c @ ls.U @ c + ls.w @ c + ls.const == pytest.approx(0.0, abs=1e-9)


def test_uw_positive_semidefinite(rng):
    U, _, _ = build_Uw(_random_triangle(rng), [0, 0, 0])
    assert np.linalg.eigvalsh(U).min() >= -1e-10


def test_robust_blocks():
    J1, J2 = build_robust_blocks()
    assert np.array_equal(J2, np.eye(6))
    assert np.all(J1.sum(axis=0) == 1)
    assert np.all(J1[[0, 1, 2, 6]] == 0)
    assert [int(np.argmax(J1[r])) for r in SOFT_ROWS] == list(range(6))
    G, h = build_Gh(RIGHT, [1, 2, 3])
    c = np.arange(16.0)
    assert np.allclose(np.c_[G, J1] @ np.r_[c, np.zeros(6)], G @ c)


def test_variable_counts():
    one = assemble_global(triangulate([(0, 0), (1, 0), (0, 1)]), np.zeros(3))
    assert one.n == 15
    two_tri = triangulate([(0, 0), (1, 0), (0, 1), (1, 1)])
    two = assemble_global(two_tri, np.zeros(4))
    assert two.n == 25
    shared = [e for e in two_tri.edges if e.interior][0]
    sid = two_tri.edges.index(shared)
    signs = []
    for mt in two_tri.triangles:
        idx, sign = two.layout.local_index(mt)
        pos = mt.edge_ids.index(sid)
        assert idx[6 + pos] == 8 + sid
        signs.append(sign[6 + pos])
    assert sorted(signs) == [-1, 1]
    assert two.m == 2 * (10 + 6)


def test_constant_data_optimum_zero():
    t = triangulate([(0, 0), (1, 0), (0, 1), (1, 1), (0.4, 0.6)])
    qp = assemble_global(t, np.full(5, 3.0))
    v0 = np.zeros(qp.n)
    assert np.all(qp.A @ v0 <= qp.b + 1e-12)
    assert qp.objective(v0) == pytest.approx(0.0, abs=1e-9)
    sol = solve(qp)
    assert sol.status == "Solved"
    assert sol.objective == pytest.approx(0.0, abs=1e-9)
    assert np.max(np.abs(sol.v)) <= 1e-5


def test_psd_on_random_meshes(rng):
    for n in (5, 12, 28):
        t = triangulate(rng.random((n, 2)))
        assert len(t.triangles) <= 50
        qp = assemble_global(t, rng.random(n))
        P = qp.P.toarray()
        assert np.linalg.eigvalsh(P).min() >= -1e-8 * np.linalg.norm(P)


def test_affine_feasibility(rng):
    pts = rng.random((15, 2))
    t = triangulate(pts)
    z = pts @ [1.3, -0.4] + 2.0
    qp = assemble_global(t, z)
    # analytic plane solution in global unknowns
    v = np.zeros(qp.n)
    for mt in t.triangles:
        idx, sign = qp.layout.local_index(mt)
        v[idx] = sign * plane_unknowns(mt, 1.3, -0.4)
    assert np.all(qp.A @ v <= qp.b + 1e-9)
    assert qp.objective(v) == pytest.approx(0.0, abs=1e-9)
    sol = solve(qp)
    assert sol.objective <= 1e-8


def test_explicit_edges_equivalent(rng):
    pts = rng.random((8, 2))
    t = triangulate(pts)
    z = pts[:, 0] + 0.3 * pts[:, 0] ** 2 + 0.2 * pts[:, 1]
    a = solve(assemble_global(t, z))
    qb = assemble_global(t, z, explicit_edges=True)
    b = solve(qb)
    assert qb.E.shape[0] == t.n_interior_edges
    assert a.objective == pytest.approx(b.objective, rel=1e-6, abs=1e-9)


def test_ordinates_from_solution_matches_locals(rng):
    pts = rng.random((7, 2))
    t = triangulate(pts)
    z = rng.random(7)
    qp = assemble_global(t, z, monotone=False)
    v = rng.normal(size=qp.n)
    ords, ds = ordinates_from_solution(t, z, v, qp.layout)
    for mt, o, d in zip(t.triangles, ords, ds):
        ls = local_system(mt, z[list(mt.vertices)])
        assert np.allclose(o[3:], ls.ordinates(d))
        assert np.allclose(o[:3], z[list(mt.vertices)])


def test_objective_consistent_with_local_sum(rng):
    pts = rng.random((9, 2))
    t = triangulate(pts)
    z = rng.random(9)
    qp = assemble_global(t, z, monotone=False)
    v = rng.normal(size=qp.n)
    ords, ds = ordinates_from_solution(t, z, v, qp.layout)
    total = 0.0
    for mt, o in zip(t.triangles, ords):
        ls = local_system(mt, z[list(mt.vertices)])
        c = o[3:]
        total += c @ ls.U @ c + ls.w @ c + ls.const
    assert qp.objective(v) == pytest.approx(total, rel=1e-10)


def test_rejects_bad_input():
    t = triangulate([(0, 0), (1, 0), (0, 1)])
    with pytest.raises(ValueError):
        assemble_global(t, np.zeros(2))
    with pytest.raises(ValueError):
        assemble_global(t, np.zeros(3), lam=0.0)
