import numpy as np
import pytest
from hypothesis import given, strategies as st

from grdkit.bezier import (
    INDEX,
    MICRO_LAYOUT,
    ORDINATES,
    ControlNet,
    ddir,
    ddx,
    ddx_coefficients,
    eval_patch,
    eval_patch_decasteljau,
    evaluate_nets,
    ordinate_locations,
)
from grdkit.errors import OutsideConvexHull
from grdkit.geometry import triangulate

from oracles import central_difference

TRI = np.array([[0.0, 0.0], [3.0, 0.2], [1.0, 2.5]])


def _bary(rng, n):
    b = rng.random((n, 3))
    return b / b.sum(axis=1, keepdims=True)


def test_partition_of_unity(rng):
    b = _bary(rng, 1000)
    assert np.allclose(eval_patch(np.ones(10), b), 1.0, atol=1e-14)


def test_vertex_values():
    patch = np.arange(10.0)
    assert eval_patch(patch, [1, 0, 0]) == 0.0
    assert eval_patch(patch, [0, 1, 0]) == 3.0
    assert eval_patch(patch, [0, 0, 1]) == 6.0


@given(st.integers(0, 2**32 - 1))
def test_decasteljau_agrees(seed):
    r = np.random.default_rng(seed)
    patch = r.normal(size=10)
    b = _bary(r, 50)
    assert np.allclose(eval_patch(patch, b), eval_patch_decasteljau(patch, b), atol=1e-12)


def test_ordinate_layout():
    assert len(ORDINATES) == 19 and len(set(ORDINATES)) == 19
    assert MICRO_LAYOUT.shape == (3, 10)
    # every micro patch shares S and its two macro vertices
    for m in range(3):
        assert INDEX["S"] in MICRO_LAYOUT[m]
    loc = ordinate_locations(TRI)
    assert np.allclose(loc[INDEX["S"]], TRI.mean(axis=0))
    assert np.allclose(loc[INDEX["T01"]], (2 * TRI[0] + TRI[1]) / 3)


def test_linear_precision(rng):
    a, b, c = 1.5, -0.7, 2.0
    loc = ordinate_locations(TRI)
    net = ControlNet(TRI, a * loc[:, 0] + b * loc[:, 1] + c)
    for p in _bary(rng, 100) @ TRI:
        assert net.evaluate(p) == pytest.approx(a * p[0] + b * p[1] + c, abs=1e-12)
        assert np.allclose(net.gradient(p), [a, b], atol=1e-12)


def test_gradient_matches_finite_differences(rng):
    net = ControlNet(TRI, rng.normal(size=19))
    for p in _bary(rng, 30) @ TRI:
        # stay away from micro edges where the gradient may jump
        for u in ([1.0, 0.0], [0.0, 1.0]):
            fd = central_difference(net.evaluate, p, u, 1e-6)
            try:
                g = net.gradient(p) @ np.array(u)
            except OutsideConvexHull:
                continue
            if abs(fd - g) > 1e-4:
                # central difference straddled a micro boundary
                pl, pr = p - 1e-6 * np.array(u), p + 1e-6 * np.array(u)
                assert net._locate(pl)[0] != net._locate(pr)[0]
            else:
                assert fd == pytest.approx(g, abs=1e-5)


def test_ddx_quadratic_form_matches_gradient(rng):
    net = ControlNet(TRI, rng.normal(size=19))
    for p in _bary(rng, 50) @ TRI:
        assert ddx(net, None, p) == pytest.approx(net.gradient(p)[0], abs=1e-10)
        u = np.array([0.6, 0.8])
        assert ddir(net, None, p, u) == pytest.approx(net.gradient(p) @ u, abs=1e-12)


def test_ddx_coefficients_vertex_brackets(rng):
    net = ControlNet(TRI, rng.normal(size=19))
    for m in range(3):
        pts = net.micro_points(m)
        coef = ddx_coefficients(pts, net.patches[m])
        for n in range(3):
            b = np.zeros(3)
            b[n] = 1.0
            inner = 0.999 * b + 0.001 / 3
            p = inner @ pts
            expect = net.gradient(p)[0]
            val = ddx(net, None, p)
            assert val == pytest.approx(expect, abs=1e-9)
        # the a^2 coefficient is the x-derivative at the first vertex
        near = 0.9999 * pts[0] + 0.0001 * pts.mean(axis=0)
        assert coef[0] == pytest.approx(ddx(net, None, near), rel=1e-2, abs=1e-2)


def test_outside_triangle_raises():
    net = ControlNet(TRI, np.zeros(19))
    with pytest.raises(OutsideConvexHull):
        net.evaluate([5.0, 5.0])


def test_evaluate_nets_nan_outside(rng):
    pts = rng.random((10, 2))
    t = triangulate(pts)
    ords = np.stack([ordinate_locations(mt.points) @ [1.0, 2.0] for mt in t.triangles])
    q = np.array([[5.0, 5.0], pts.mean(axis=0)])
    with pytest.raises(OutsideConvexHull):
        evaluate_nets(t, ords, q)
    v, g = evaluate_nets(t, ords, q, outside="nan")
    assert np.isnan(v[0]) and np.isnan(g[0]).all()
    assert v[1] == pytest.approx(q[1] @ [1.0, 2.0])
    assert np.allclose(g[1], [1.0, 2.0])
