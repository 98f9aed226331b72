import json
import warnings

import numpy as np
import pytest

from grdkit import CoordinateMap, FitOptions, GRDModel, SamplePoint, fit, fit_surface
from grdkit.bezier import ControlNet
from grdkit.corpus import SyntheticSpec, perturbed_grid, synth_corpus
from grdkit.errors import (
    CorruptDocument,
    DuplicateSite,
    OutsideConvexHull,
    QualityOutOfRange,
    UnknownDevice,
    VersionMismatch,
)
from grdkit.sampling import GridSpec, random_plan

from oracles import central_difference


def _hull_points(surface, rng, n):
    lo, hi = surface.sites.min(axis=0), surface.sites.max(axis=0)
    out = []
    while len(out) < n:
        p = lo + rng.random((4 * n, 2)) * (hi - lo)
        out.extend(p[surface.contains_xy(p)])
    return np.array(out[:n])


def _synthetic_fit(seed, k=30, options=None):
    corpus = synth_corpus(SyntheticSpec(seed=seed), 1)
    grid = corpus.grid
    idx = random_plan(grid, k, np.random.default_rng(seed))
    pts = corpus.surfaces[0].samples(grid, idx, ["laptop"])["laptop"]
    xy = CoordinateMap().to_xy([p.bitrate for p in pts], [p.width for p in pts], [p.height for p in pts])
    return fit_surface(xy, [p.z for p in pts], options), corpus, xy, np.array([p.z for p in pts])


def test_constant_reproduction(rng):
    xy = rng.random((25, 2)) * [2, 5] + [2, 16]
    s = fit_surface(xy, np.full(25, 70.0))
    q = _hull_points(s, rng, 1000)
    assert np.max(np.abs(s.evaluate_xy(q) - 70.0)) <= 1e-8


def test_plane_reproduction(rng):
    xy = rng.random((20, 2)) * [2, 5] + [2, 16]
    plane = lambda p: 20 * p[..., 0] + 5 * p[..., 1] + 10
    s = fit_surface(xy, plane(xy), FitOptions(z_range=(-1e6, 1e6)))
    q = _hull_points(s, rng, 1000)
    assert np.max(np.abs(s.evaluate_xy(q) - plane(q))) < 1e-6
    assert np.allclose(s.gradient_xy(q), [20, 5], atol=1e-6)
    assert s.slack_free


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_synthetic_interpolation_and_monotonicity(seed, rng):
    s, corpus, xy, z = _synthetic_fit(seed)
    assert np.max(np.abs(s.evaluate_xy(xy) - z)) <= 1e-9
    if s.slack_free:
        q = _hull_points(s, rng, 10_000)
        assert np.min(s.gradient_xy(q)[:, 0]) >= -1e-6
    # the approximation error stays moderate with 30 sites
    grid = corpus.grid
    b, w, h = grid.arrays()
    err = s.evaluate_xy(CoordinateMap().to_xy(b, w, h)) - corpus.device_matrix("laptop")[0]
    assert np.sqrt(np.mean(err**2)) < 10.0


def test_c1_across_interior_edges(rng):
    s, _, _, z = _synthetic_fit(4)
    zr = float(np.ptp(z))
    tri = s.tri
    worst = 0.0
    for e in tri.edges:
        if not e.interior:
            continue
        a, b = tri.points[list(e.vertices)]
        ts = rng.random(50)
        pts = a + ts[:, None] * (b - a)
        nets = [ControlNet(tri.triangles[t].points, s.ordinates[t]) for t in e.triangles]
        for p in pts:
            g0, g1 = (n.gradient(p) / np.array(s.frame.scale) for n in nets)
            worst = max(worst, float(np.max(np.abs(g0 - g1))))
            assert nets[0].evaluate(p) == pytest.approx(nets[1].evaluate(p), abs=1e-9)
    assert worst <= 1e-5 * zr


def test_affine_invariance():
    s, _, xy, z = _synthetic_fit(5)
    scaled = xy * [1e3, 1.0]
    s2 = fit_surface(scaled, z)
    q = s.sites[s.tri.triangles[0].vertices[0]] * 0 + xy.mean(axis=0)
    pts = np.vstack([q, 0.5 * (xy[:-1] + xy[1:])])
    pts = pts[s.contains_xy(pts)]
    diff = s.evaluate_xy(pts) - s2.evaluate_xy(pts * [1e3, 1.0])
    assert np.max(np.abs(diff)) <= 1e-6 * np.ptp(z)


def test_non_monotone_data_is_absorbed_by_slack(rng):
    xy = rng.random((30, 2))
    z = 50 + 20 * np.sin(6 * xy[:, 0]) + 5 * xy[:, 1]
    s = fit_surface(xy, z)
    assert s.report["status"] == "Solved"
    assert np.all(s.xi <= 0) and s.total_slack > 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_noisy_grid_slack_grows_as_lam_shrinks(seed):
    corpus = synth_corpus(SyntheticSpec(seed=seed), 1)
    grid = corpus.grid
    r = np.random.default_rng(seed)
    idx = random_plan(grid, 40, r)
    vals = perturbed_grid(corpus.device_matrix("laptop")[0], grid, 8.0, r)
    b, w, h = grid.arrays()
    xy = CoordinateMap().to_xy(b[idx], w[idx], h[idx])
    z = np.clip(vals[idx], 0, 100)
    slack = []
    for lam in (1e-2, 1e-4, 1e-6):
        s = fit_surface(xy, z, FitOptions(lam=lam))
        assert s.report["status"] == "Solved" and np.all(s.xi <= 0)
        assert np.max(np.abs(s.evaluate_xy(xy) - z)) <= 1e-9
        slack.append(s.total_slack)
    # cheaper slack is never used less
    assert slack[0] > 0 and slack[0] <= slack[1] <= slack[2]


def test_plain_fit_without_constraints(rng):
    xy = rng.random((15, 2))
    z = 50 + 20 * np.sin(6 * xy[:, 0])
    s = fit_surface(xy, z, FitOptions(monotone=False))
    assert len(s.xi) == 0
    assert np.max(np.abs(s.evaluate_xy(xy) - z)) <= 1e-9


def test_quality_out_of_range():
    with pytest.raises(QualityOutOfRange):
        fit_surface([[0, 0], [1, 0], [0, 1]], [10, 120, 30])


def test_duplicate_site():
    with pytest.raises(DuplicateSite):
        fit_surface([[0, 0], [1, 0], [0, 1], [0, 1]], [1, 2, 3, 4])


def _model(rng):
    grid = GridSpec(bitrates=(200.0, 800.0, 3000.0, 8000.0), resolutions=((640, 360), (1280, 720), (1920, 1080)))
    samples = []
    for dev, shift in (("phone", 5.0), ("tv", 0.0)):
        for i in range(grid.N):
            b, w, h = grid.representation(i)
            z = min(100.0, shift + 12 * np.log10(b) + 2 * np.log2(w * h) - 20)
            samples.append(SamplePoint(b, w, h, dev, float(z)))
    return fit(samples, provenance={"source": "unit"}), samples


def test_model_queries(rng):
    model, samples = _model(rng)
    assert sorted(model.devices) == ["phone", "tv"]
    for s in samples:
        assert model.evaluate(s.device, s.bitrate, s.width, s.height) == pytest.approx(s.z, abs=1e-9)
    vals = model.evaluate("tv", np.array([300.0, 1000.0]), 1280, 720)
    assert vals.shape == (2,)
    with pytest.raises(UnknownDevice):
        model.evaluate("watch", 1000, 1280, 720)
    with pytest.raises(OutsideConvexHull):
        model.evaluate("tv", 50.0, 1280, 720)
    assert np.isnan(model.evaluate("tv", 50.0, 1280, 720, outside="nan"))
    assert not model.contains("tv", 50.0, 1280, 720)
    # closed hull: the boundary counts as inside
    assert model.contains("tv", 200.0, 1280, 720)


def test_native_gradient_chain_rule(rng):
    model, _ = _model(rng)
    b, w, h = 1500.0, 1280, 720
    g_native = model.gradient("tv", b, w, h, units="native")
    fd = central_difference(lambda p: model.evaluate("tv", p[0], w, h), np.array([b]), np.array([1.0]), 1e-2)
    assert g_native[0] == pytest.approx(fd, rel=1e-5)
    g_mapped = model.gradient("tv", b, w, h)
    assert g_native[0] == pytest.approx(g_mapped[0] / (b * np.log(10)))
    with pytest.raises(ValueError):
        model.gradient("tv", b, w, h, units="furlongs")


def test_document_round_trip(rng, tmp_path):
    model, _ = _model(rng)
    path = tmp_path / "m.json"
    model.save(path)
    back = GRDModel.load(path)
    for dev in model.devices:
        assert np.array_equal(model.surface(dev).ordinates, back.surface(dev).ordinates)
        assert np.array_equal(model.surface(dev).d, back.surface(dev).d)
    q_b = rng.uniform(200, 8000, 1000)
    q_r = rng.choice([720, 1080], 1000)
    q_w = np.where(q_r == 720, 1280, 1920)
    a = model.evaluate("tv", q_b, q_w, q_r)
    c = back.evaluate("tv", q_b, q_w, q_r)
    assert np.max(np.abs(a - c)) <= 1e-12
    doc = json.loads(path.read_text())
    assert doc["version"] == 1 and doc["coordinate_map"]["kind"] == "log"
    assert doc["provenance"]["source"] == "unit"


def test_document_missing_triangle(rng):
    model, _ = _model(rng)
    doc = model.to_document()
    surf = doc["devices"]["tv"]
    surf["triangles"] = surf["triangles"][:-1]
    surf["ordinates"] = surf["ordinates"][:-1]
    with pytest.raises(CorruptDocument):
        GRDModel.from_document(doc)


def test_document_forward_version(rng):
    model, _ = _model(rng)
    doc = model.to_document()
    doc["version"] = 7
    with pytest.raises(VersionMismatch, match="7.*1"):
        GRDModel.from_document(doc)


@pytest.mark.parametrize("text", ["not json", "{}", '{"format": "grdkit-model"}', "[1, 2]"])
def test_document_corrupt(text):
    with pytest.raises(CorruptDocument):
        GRDModel.loads(text)


def test_document_tampered_vertex_value(rng):
    model, _ = _model(rng)
    doc = model.to_document()
    doc["devices"]["tv"]["ordinates"][0][0] += 1.0
    with pytest.raises(CorruptDocument):
        GRDModel.from_document(doc)


def test_hull_guard_warns():
    samples = [SamplePoint(b, 1280, 720, "tv", 10 + b / 100) for b in (100, 500, 1000)]
    samples += [SamplePoint(b, 1920, 1080, "tv", 5 + b / 100) for b in (100, 500)]
    with pytest.warns(UserWarning, match="1920x1080 lacks the maximum"):
        fit(samples)


def test_fit_errors_name_device():
    samples = [SamplePoint(b, 1280, 720, "tv", 10.0) for b in (100, 500, 1000)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(Exception, match="device tv"):
            fit(samples)


def test_fit_report_fields():
    s, _, _, _ = _synthetic_fit(6)
    rep = s.report
    for key in ("status", "iterations", "objective", "curvature", "primal_residual", "dual_residual",
                "total_slack", "active_rows", "seconds"):
        assert key in rep
    assert rep["primal_residual"] <= 1e-8 and rep["dual_residual"] <= 1e-8
    assert rep["seconds"] < 5


def test_fit_deterministic():
    a, *_ = _synthetic_fit(8)
    b, *_ = _synthetic_fit(8)
    assert np.array_equal(a.ordinates, b.ordinates)


def test_options_round_trip():
    o = FitOptions(lam=1e-3, coord_map=CoordinateMap("identity"), z_range=(0, 5))
    assert FitOptions.from_dict(json.loads(json.dumps(o.to_dict()))) == o
