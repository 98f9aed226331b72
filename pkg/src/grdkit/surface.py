"""End-to-end surface fitting, evaluation and model documents.

Samples ``(bitrate, width, height, z)`` are mapped to the plane by a
``CoordinateMap`` (default ``x = log10(kbps)``, ``y = log2(width*height)``),
then to a working frame where the sites fill the unit box.  The constrained
spline is fitted in the working frame.  Box normalisation is an axis-aligned
affine map, so the fitted surface does not depend on the units chosen for
either axis.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import __version__
from .assembly import ROW_KINDS, assemble_global, local_system, ordinates_from_solution
from .bezier import evaluate_nets
from .errors import (
    CorruptDocument,
    DataError,
    DegenerateTriangle,
    GRDError,
    ParallelLines,
    QPFailure,
    QualityOutOfRange,
    SingularAssembly,
    UnknownDevice,
    VersionMismatch,
)
from .geometry import Triangulation, build_triangulation, triangulate
from .qp import SOLVED, solve

DOCUMENT_FORMAT = "grdkit-model"
DOCUMENT_VERSION = 1

# The slack penalty is applied as lam * PENALTY_UNIT in the unit-box frame.
# With the default lam = 1e-4 this puts the relaxation in its exact-penalty
# regime: slack is only used where the hard cell conditions cannot be met.
PENALTY_UNIT = 1e10


@dataclass(frozen=True)
class SamplePoint:
    bitrate: float
    width: int
    height: int
    device: str
    z: float


@dataclass(frozen=True)
class CoordinateMap:
    """Map from (bitrate kbps, width, height) to the plane.

    ``kind="log"``: ``x = log10(kbps)``, ``y = log2(width*height)``.
    ``kind="identity"``: ``x = kbps``, ``y = width*height``.
    """

    kind: str = "log"

    def __post_init__(self):
        if self.kind not in ("log", "identity"):
            raise ValueError(f"unknown coordinate map {self.kind!r}")

    def x(self, bitrate) -> np.ndarray:
        b = np.asarray(bitrate, dtype=float)
        return np.log10(b) if self.kind == "log" else b

    def y(self, width, height) -> np.ndarray:
        pix = np.asarray(width, dtype=float) * np.asarray(height, dtype=float)
        return np.log2(pix) if self.kind == "log" else pix

    def bitrate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return 10.0 ** x if self.kind == "log" else x

    def to_xy(self, bitrate, width, height) -> np.ndarray:
        x, y = np.broadcast_arrays(self.x(bitrate), self.y(width, height))
        return np.stack([x, y], axis=-1)

    def jacobian(self, bitrate, width, height) -> tuple[np.ndarray, np.ndarray]:
        """``(dx/d kbps, dy/d pixels)``."""
        b = np.asarray(bitrate, dtype=float)
        pix = np.asarray(width, dtype=float) * np.asarray(height, dtype=float)
        if self.kind == "log":
            return 1.0 / (b * math.log(10.0)), 1.0 / (pix * math.log(2.0))
        return np.ones_like(b), np.ones_like(pix)

    def to_dict(self) -> dict:
        if self.kind == "log":
            return {"kind": "log", "x": "log10(bitrate_kbps)", "y": "log2(width*height)"}
        return {"kind": "identity", "x": "bitrate_kbps", "y": "width*height"}


@dataclass(frozen=True)
class Frame:
    """Axis-aligned map from mapped coordinates to the unit working box."""

    offset: tuple[float, float]
    scale: tuple[float, float]

    @classmethod
    def fit(cls, xy: np.ndarray) -> "Frame":
        lo = xy.min(axis=0)
        span = xy.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        return cls((float(lo[0]), float(lo[1])), (float(span[0]), float(span[1])))

    def forward(self, xy) -> np.ndarray:
        return (np.asarray(xy, dtype=float) - np.array(self.offset)) / np.array(self.scale)

    def inverse(self, uv) -> np.ndarray:
        return np.asarray(uv, dtype=float) * np.array(self.scale) + np.array(self.offset)


@dataclass
class FitOptions:
    """Settings of a fit.

    Attributes:
        lam: slack penalty weight (scaled internally by ``PENALTY_UNIT``).
        monotone: impose the x-monotonicity cell conditions.
        robust: relax the ``inner``/``edge`` conditions with penalised slack.
        tol_primal, tol_dual, max_iter, method: solver settings.
        coord_map: mapping from physical units to the plane.
        z_range: admissible quality range.
        penalty_unit: multiplier applied to ``lam``.
    """

    lam: float = 1e-4
    monotone: bool = True
    robust: bool = True
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 10**6
    method: str = "ipm"
    coord_map: CoordinateMap = field(default_factory=CoordinateMap)
    z_range: tuple[float, float] = (0.0, 100.0)
    penalty_unit: float = PENALTY_UNIT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coord_map"] = self.coord_map.kind
        d["z_range"] = list(self.z_range)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitOptions":
        d = dict(d)
        d["coord_map"] = CoordinateMap(d.get("coord_map", "log"))
        d["z_range"] = tuple(d.get("z_range", (0.0, 100.0)))
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class GRDSurface:
    """A fitted piecewise-cubic surface over mapped coordinates.

    Args:
        sites: ``(n, 2)`` site coordinates in the mapped plane.
        z: values at the sites.
        triangles: ``(T, 3)`` CCW vertex triples.
        ordinates: ``(T, 19)`` control-net ordinates.
        frame: working-frame normalisation.
        d: solved global derivative unknowns.
        xi: solved slacks (empty when the fit has none).
        report: fit diagnostics.
        triangulation: optionally a prebuilt triangulation in frame space.
    """

    def __init__(self, sites, z, triangles, ordinates, frame: Frame, d=None, xi=None,
                 report: dict | None = None, triangulation: Triangulation | None = None):
        self.sites = np.asarray(sites, dtype=float).reshape(-1, 2)
        self.z = np.asarray(z, dtype=float).reshape(-1)
        self.triangles = np.asarray(triangles, dtype=int).reshape(-1, 3)
        self.ordinates = np.asarray(ordinates, dtype=float).reshape(-1, 19)
        self.frame = frame
        self.d = np.zeros(0) if d is None else np.asarray(d, dtype=float)
        self.xi = np.zeros(0) if xi is None else np.asarray(xi, dtype=float)
        self.report = dict(report or {})
        if triangulation is None:
            uv = frame.forward(self.sites)
            triangulation = build_triangulation(
                [], uv, [tuple(t) for t in self.triangles])
        self.tri = triangulation

    @property
    def total_slack(self) -> float:
        return float(np.sum(np.abs(self.xi)))

    @property
    def slack_free(self) -> bool:
        return bool(np.all(self.xi == 0.0))

    def evaluate_xy(self, xy, outside: str = "raise") -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        shape = xy.shape[:-1]
        v, _ = evaluate_nets(self.tri, self.ordinates, self.frame.forward(xy.reshape(-1, 2)), outside)
        return v.reshape(shape)

    def gradient_xy(self, xy, outside: str = "raise") -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        shape = xy.shape[:-1]
        _, g = evaluate_nets(self.tri, self.ordinates, self.frame.forward(xy.reshape(-1, 2)), outside)
        g = g / np.array(self.frame.scale)
        return g.reshape(shape + (2,))

    def contains_xy(self, xy) -> np.ndarray:
        from .geometry import locate_many

        xy = np.asarray(xy, dtype=float)
        macro, _, _ = locate_many(self.tri, self.frame.forward(xy.reshape(-1, 2)))
        return (macro >= 0).reshape(xy.shape[:-1])

    def to_dict(self) -> dict:
        return {
            "frame": {"offset": list(self.frame.offset), "scale": list(self.frame.scale)},
            "sites": self.sites.tolist(),
            "z": self.z.tolist(),
            "triangles": self.triangles.tolist(),
            "ordinates": self.ordinates.tolist(),
            "d": self.d.tolist(),
            "xi": self.xi.tolist(),
            "report": _jsonable(self.report),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GRDSurface":
        try:
            frame = Frame(tuple(float(v) for v in doc["frame"]["offset"]),
                          tuple(float(v) for v in doc["frame"]["scale"]))
            sites = np.asarray(doc["sites"], dtype=float)
            z = np.asarray(doc["z"], dtype=float)
            triangles = np.asarray(doc["triangles"], dtype=int)
            ordinates = np.asarray(doc["ordinates"], dtype=float)
            d = np.asarray(doc.get("d", []), dtype=float)
            xi = np.asarray(doc.get("xi", []), dtype=float)
            report = dict(doc.get("report", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptDocument(f"malformed surface entry: {exc}") from exc
        _validate_surface(sites, z, triangles, ordinates)
        try:
            return cls(sites, z, triangles, ordinates, frame, d, xi, report)
        except (DegenerateTriangle, ParallelLines, IndexError) as exc:
            raise CorruptDocument(f"invalid triangulation: {exc}") from exc


def _validate_surface(sites, z, triangles, ordinates):
    n = len(sites)
    if sites.ndim != 2 or sites.shape[1] != 2 or z.shape != (n,):
        raise CorruptDocument("sites and z are inconsistent")
    if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
        raise CorruptDocument("triangles must be a non-empty (T, 3) array")
    if ordinates.shape != (len(triangles), 19):
        raise CorruptDocument(
            f"expected {len(triangles)} x 19 ordinates, got {list(ordinates.shape)}")
    if triangles.min() < 0 or triangles.max() >= n:
        raise CorruptDocument("triangle vertex index out of range")
    if len(np.unique(triangles)) != n:
        raise CorruptDocument("some sites are not used by any triangle")
    if not np.all(np.isfinite(ordinates)) or not np.all(np.isfinite(sites)):
        raise CorruptDocument("non-finite numbers in surface")
    # the triangles must tile the convex hull of the sites
    p = sites[triangles]
    areas = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                   - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    if np.any(areas <= 0):
        raise CorruptDocument("triangles must be counter-clockwise and non-degenerate")
    try:
        hull_area = ConvexHull(sites).volume
    except QhullError as exc:
        raise CorruptDocument(f"sites do not span a region: {exc}") from None
    if abs(areas.sum() - hull_area) > 1e-9 * hull_area:
        raise CorruptDocument("triangle list does not cover the convex hull (missing triangle?)")
    if not np.allclose(ordinates[:, :3], z[triangles], rtol=0, atol=0):
        raise CorruptDocument("vertex ordinates do not match site values")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def fit_surface(xy, z, options: FitOptions | None = None) -> GRDSurface:
    """Fit one surface to values ``z`` at mapped sites ``xy``.

    Raises:
        DuplicateSite, CollinearInput: invalid site sets.
        QualityOutOfRange: a value outside ``options.z_range``.
        QPFailure: the solver did not reach ``Solved``.
    """
    opts = options or FitOptions()
    t0 = time.perf_counter()
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    z = np.asarray(z, dtype=float).reshape(-1)
    if len(z) != len(xy):
        raise DataError("need one value per site")
    lo, hi = opts.z_range
    bad = np.flatnonzero(~((z >= lo) & (z <= hi)))
    if len(bad):
        raise QualityOutOfRange(f"z = {z[bad[0]]!r} outside [{lo}, {hi}] at site {int(bad[0])}")
    frame = Frame.fit(xy)
    uv = frame.forward(xy)
    tri = triangulate(uv)
    try:
        locs = [local_system(t, z[list(t.vertices)]) for t in tri.triangles]
    except (DegenerateTriangle, ParallelLines) as exc:
        raise SingularAssembly(f"degenerate triangle in assembly: {exc}") from exc
    lam_eff = opts.lam * opts.penalty_unit
    qp = assemble_global(tri, z, lam_eff, monotone=opts.monotone, robust=opts.robust, locals_=locs)
    sol = solve(qp, opts.tol_primal, opts.tol_dual, opts.max_iter, method=opts.method)
    layout = qp.layout
    v = sol.v
    xi = v[layout.slack_start:] if layout.robust else np.zeros(0)
    if sol.status != SOLVED:
        raise QPFailure(f"solver finished with status {sol.status}", sol)
    ords, _ = ordinates_from_solution(tri, z, v, layout, locs)
    penalty = float(-lam_eff * xi.sum()) if len(xi) else 0.0
    report = {
        "status": sol.status,
        "iterations": sol.iterations,
        "objective": sol.objective,
        "curvature": sol.objective - penalty,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "total_slack": float(np.abs(xi).sum()),
        "n_sites": len(xy),
        "n_triangles": len(tri.triangles),
        "n_variables": qp.n,
        "active_rows": _row_activity(qp, v),
        "seconds": time.perf_counter() - t0,
    }
    return GRDSurface(xy, z, [t.vertices for t in tri.triangles], ords, frame,
                      v[: layout.slack_start], xi, report, tri)


def _row_activity(qp, v, tol: float = 1e-9) -> dict:
    if qp.m == 0:
        return {}
    slack = qp.b - qp.A @ v
    active = slack <= tol * (1.0 + np.abs(qp.b))
    out: dict[str, int] = {}
    for (_, kind), a in zip(qp.tags, active):
        out[kind] = out.get(kind, 0) + int(a)
    return out


class GRDModel:
    """Per-device fitted surfaces sharing one coordinate map."""

    def __init__(self, surfaces: Mapping[str, GRDSurface], coord_map: CoordinateMap | None = None,
                 provenance: Mapping | None = None):
        self.surfaces = dict(surfaces)
        self.coord_map = coord_map or CoordinateMap()
        self.provenance = dict(provenance or {})

    @property
    def devices(self) -> list[str]:
        return list(self.surfaces)

    def surface(self, device: str) -> GRDSurface:
        try:
            return self.surfaces[device]
        except KeyError:
            raise UnknownDevice(f"device {device!r} not in model (have {self.devices})") from None

    def evaluate(self, device: str, bitrate, width, height, outside: str = "raise") -> np.ndarray:
        """Quality at ``(bitrate kbps, width, height)``; arrays broadcast."""
        surf = self.surface(device)
        return surf.evaluate_xy(self.coord_map.to_xy(bitrate, width, height), outside)

    def gradient(self, device: str, bitrate, width, height, units: str = "mapped",
                 outside: str = "raise") -> np.ndarray:
        """Gradient ``(dz/dx, dz/dy)``.

        ``units="mapped"`` differentiates with respect to the mapped
        coordinates; ``units="native"`` with respect to kbps and pixel count.
        """
        surf = self.surface(device)
        g = surf.gradient_xy(self.coord_map.to_xy(bitrate, width, height), outside)
        if units == "native":
            jx, jy = self.coord_map.jacobian(bitrate, width, height)
            g = g * np.stack(np.broadcast_arrays(jx, jy), axis=-1)
        elif units != "mapped":
            raise ValueError("units must be 'mapped' or 'native'")
        return g

    def contains(self, device: str, bitrate, width, height) -> np.ndarray:
        return self.surface(device).contains_xy(self.coord_map.to_xy(bitrate, width, height))

    # documents
    def to_document(self) -> dict:
        return {
            "format": DOCUMENT_FORMAT,
            "version": DOCUMENT_VERSION,
            "generator": f"grdkit {__version__}",
            "coordinate_map": self.coord_map.to_dict(),
            "provenance": _jsonable(self.provenance),
            "devices": {dev: s.to_dict() for dev, s in self.surfaces.items()},
        }

    @classmethod
    def from_document(cls, doc: Mapping) -> "GRDModel":
        if not isinstance(doc, Mapping) or doc.get("format") != DOCUMENT_FORMAT:
            raise CorruptDocument("not a grdkit model document")
        version = doc.get("version")
        if not isinstance(version, int):
            raise CorruptDocument("document version missing")
        if version > DOCUMENT_VERSION:
            raise VersionMismatch(
                f"document version {version} is newer than supported version {DOCUMENT_VERSION}")
        if version < 1:
            raise VersionMismatch(f"document version {version} is not supported (need 1..{DOCUMENT_VERSION})")
        try:
            cmap = CoordinateMap(doc["coordinate_map"]["kind"])
            devices = doc["devices"]
            if not isinstance(devices, Mapping) or not devices:
                raise CorruptDocument("document has no devices")
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptDocument(f"malformed document: {exc}") from exc
        surfaces = {dev: GRDSurface.from_dict(s) for dev, s in devices.items()}
        return cls(surfaces, cmap, doc.get("provenance", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=1, allow_nan=False)

    @classmethod
    def loads(cls, text: str) -> "GRDModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptDocument(f"invalid JSON: {exc}") from exc
        return cls.from_document(doc)

    def save(self, path) -> None:
        atomic_write(path, self.dumps())

    @classmethod
    def load(cls, path) -> "GRDModel":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _group_by_device(samples) -> dict[str, list[SamplePoint]]:
    if isinstance(samples, Mapping):
        return {str(k): list(v) for k, v in samples.items()}
    out: dict[str, list[SamplePoint]] = {}
    for s in samples:
        out.setdefault(s.device, []).append(s)
    return out


def hull_guard_warnings(samples: Iterable[SamplePoint]) -> list[str]:
    """Resolutions lacking the overall minimum or maximum bitrate."""
    samples = list(samples)
    if not samples:
        return []
    bmin = min(s.bitrate for s in samples)
    bmax = max(s.bitrate for s in samples)
    by_res: dict[tuple[int, int], set] = {}
    for s in samples:
        by_res.setdefault((s.width, s.height), set()).add(s.bitrate)
    msgs = []
    for (w, h), rates in sorted(by_res.items()):
        missing = [name for name, b in (("minimum", bmin), ("maximum", bmax)) if b not in rates]
        if missing:
            msgs.append(f"resolution {w}x{h} lacks the {' and '.join(missing)} bitrate; "
                        "queries there may fall outside the hull")
    return msgs


def fit(samples, options: FitOptions | None = None, provenance: Mapping | None = None) -> GRDModel:
    """Fit one surface per device.

    Args:
        samples: iterable of SamplePoint, or a mapping device -> samples.
        options: FitOptions.
        provenance: metadata stored with the model (source, codec, metric).
    """
    opts = options or FitOptions()
    groups = _group_by_device(samples)
    if not groups:
        raise DataError("no samples to fit")
    surfaces = {}
    for dev, pts in groups.items():
        for msg in hull_guard_warnings(pts):
            warnings.warn(f"device {dev}: {msg}", stacklevel=2)
        b = np.array([p.bitrate for p in pts], dtype=float)
        if np.any(~(b > 0)):
            raise DataError(f"device {dev}: bitrates must be positive")
        xy = opts.coord_map.to_xy(b, [p.width for p in pts], [p.height for p in pts])
        z = np.array([p.z for p in pts], dtype=float)
        try:
            surfaces[dev] = fit_surface(xy, z, opts)
        except GRDError as exc:
            exc.args = (f"device {dev}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
            raise
    prov = {"settings": opts.to_dict()}
    prov.update(provenance or {})
    return GRDModel(surfaces, opts.coord_map, prov)
