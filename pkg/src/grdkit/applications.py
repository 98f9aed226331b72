"""Applications of fitted surfaces: RD curves, bitrate ladders and codec gains.

All functions take a ``GRDModel`` and query it in physical units (kbps and
pixel dimensions).  Integration over resolution uses the mapped coordinate
``log2(width*height)`` with trapezoid weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import CoverageError, EmptyCurve, EmptyQualityInterval
from .surface import GRDModel

NINE_RESOLUTIONS = (
    (320, 240), (384, 288), (512, 384), (640, 360), (720, 480),
    (960, 540), (1280, 720), (1600, 900), (1920, 1080),
)
LADDER_TARGETS = (30, 40, 50, 60, 70, 75, 80, 85, 90, 95)
GAIN_WINDOW = (500.0, 4000.0)


@dataclass
class RDCurve:
    resolution: tuple[int, int]
    device: str
    bitrates: np.ndarray
    z: np.ndarray

    def dumps(self) -> str:
        w, h = self.resolution
        lines = [f"# device {self.device}", f"# resolution {w}x{h}", "bitrate_kbps\tz"]
        lines += [f"{b!r}\t{z!r}" for b, z in zip(self.bitrates.tolist(), self.z.tolist())]
        return "\n".join(lines) + "\n"


def rd_curve(model: GRDModel, device: str, resolution: tuple[int, int],
             bitrate_range: tuple[float, float] = (100.0, 9000.0), steps: int = 90) -> RDCurve:
    """Quality along a resolution at ``steps`` evenly spaced bitrates.

    Points outside the model's hull are dropped with a warning.

    Raises:
        EmptyCurve: no point of the range is covered.
    """
    w, h = resolution
    b = np.linspace(float(bitrate_range[0]), float(bitrate_range[1]), int(steps))
    z = model.evaluate(device, b, w, h, outside="nan")
    ok = np.isfinite(z)
    if not np.any(ok):
        raise EmptyCurve(f"resolution {w}x{h} lies outside the hull of device {device}")
    if not np.all(ok):
        warnings.warn(f"{int((~ok).sum())} of {len(b)} bitrates at {w}x{h} lie outside the hull; trimmed",
                      stacklevel=2)
    return RDCurve((int(w), int(h)), device, b[ok], z[ok])


@dataclass
class SearchResult:
    bitrate: float | None  # None when unreachable
    z: float
    iterations: int

    @property
    def reachable(self) -> bool:
        return self.bitrate is not None


def dichotomous(f: Callable[[float], float], C: float, lo: float, hi: float,
                tol_q: float | None = 0.01, tol_bitrate: float = 1.0) -> SearchResult:
    """Bisection for the smallest bitrate in ``[lo, hi]`` with ``f >= C``.

    Returns ``lo`` when ``f(lo) >= C`` and an unreachable result when
    ``f(hi) < C``.  Otherwise the bracket ``f(a) < C <= f(b)`` is halved until
    it is at most ``tol_bitrate`` wide, returning ``b``, or until a midpoint
    within ``tol_q`` of ``C`` is found, returning that midpoint.
    """
    f_lo = float(f(lo))
    if f_lo >= C:
        return SearchResult(float(lo), f_lo, 0)
    f_hi = float(f(hi))
    if not f_hi >= C:
        return SearchResult(None, f_hi, 0)
    a, b, fb = float(lo), float(hi), f_hi
    it = 0
    while b - a > tol_bitrate:
        mid = 0.5 * (a + b)
        fm = float(f(mid))
        it += 1
        if tol_q is not None and abs(fm - C) <= tol_q:
            return SearchResult(mid, fm, it)
        if fm >= C:
            b, fb = mid, fm
        else:
            a = mid
    return SearchResult(b, fb, it)


def dichotomous_search(model: GRDModel, device: str, resolution: tuple[int, int], C: float,
                       bracket: tuple[float, float], tol_q: float | None = 0.01,
                       tol_bitrate: float = 1.0) -> SearchResult:
    """Bitrate reaching quality ``C`` at one resolution (see ``dichotomous``)."""
    w, h = resolution

    def f(b):
        return model.evaluate(device, b, w, h)

    return dichotomous(f, C, float(bracket[0]), float(bracket[1]), tol_q, tol_bitrate)


def invert_curves(f: Callable[[np.ndarray], np.ndarray], targets: np.ndarray, lo: float, hi: float,
                  tol: float = 1e-10) -> np.ndarray:
    """Vectorised bisection in ``x``: smallest ``x`` with ``f(x) >= target``.

    ``f`` maps an array of ``x`` to values; ``targets`` must lie within
    ``[f(lo), f(hi)]``.
    """
    t = np.asarray(targets, dtype=float)
    a = np.full(t.shape, float(lo))
    b = np.full(t.shape, float(hi))
    done = f(a) >= t
    b[done] = a[done]
    n_iter = int(math.ceil(math.log2(max(hi - lo, tol) / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        up = f(mid) >= t
        b = np.where(up, mid, b)
        a = np.where(up, a, mid)
    return b


@dataclass
class Rung:
    target: float
    resolution: tuple[int, int] | None
    bitrate: float | None
    z: float

    @property
    def reachable(self) -> bool:
        return self.bitrate is not None


@dataclass
class BitrateLadder:
    device: str
    rungs: list[Rung]

    def dumps(self) -> str:
        lines = [f"# device {self.device}", "target\twidth\theight\tbitrate_kbps\tz\tstatus"]
        for r in self.rungs:
            if r.reachable:
                w, h = r.resolution
                lines.append(f"{r.target!r}\t{w}\t{h}\t{r.bitrate!r}\t{r.z!r}\tok")
            else:
                lines.append(f"{r.target!r}\t\t\t\t{r.z!r}\tUnreachable")
        return "\n".join(lines) + "\n"


def model_bitrate_range(model: GRDModel, device: str) -> tuple[float, float]:
    """Bitrate span of a device's training sites."""
    s = model.surface(device)
    b = model.coord_map.bitrate(s.sites[:, 0])
    return float(b.min()), float(b.max())


def build_ladder(model: GRDModel, device: str, targets: Sequence[float] = LADDER_TARGETS,
                 resolutions: Sequence[tuple[int, int]] = NINE_RESOLUTIONS,
                 bracket: tuple[float, float] | None = None, tol_q: float | None = None,
                 tol_bitrate: float = 1.0) -> BitrateLadder:
    """Minimal-bitrate representation for each target quality.

    A rung whose target is met at the lowest bitrate takes the best
    resolution there.  Otherwise each resolution is searched and the lowest
    bitrate wins.  Resolutions not covered by the hull over the whole
    bracket are skipped.  ``tol_q`` defaults to ``None`` so that rungs are
    located to ``tol_bitrate`` even where the curve is flat.
    """
    targets = [float(c) for c in targets]
    if any(b < a for a, b in zip(targets, targets[1:])):
        raise ValueError("targets must be sorted ascending")
    lo, hi = bracket if bracket is not None else model_bitrate_range(model, device)
    usable = []
    for res in resolutions:
        ends = model.evaluate(device, np.array([lo, hi]), res[0], res[1], outside="nan")
        if np.all(np.isfinite(ends)):
            usable.append(tuple(res))
    if not usable:
        raise CoverageError(f"no resolution is covered over [{lo}, {hi}] kbps", list(resolutions))
    z_low = np.array([float(model.evaluate(device, lo, w, h)) for w, h in usable])
    rungs = []
    for C in targets:
        best_low = int(np.argmax(z_low))
        if z_low[best_low] >= C:
            rungs.append(Rung(C, usable[best_low], float(lo), float(z_low[best_low])))
            continue
        best = None
        best_z = -math.inf
        for res in usable:
            r = dichotomous_search(model, device, res, C, (lo, hi), tol_q, tol_bitrate)
            best_z = max(best_z, r.z)
            if r.reachable and (best is None or r.bitrate < best[1]):
                best = (res, r.bitrate, r.z)
        if best is None:
            rungs.append(Rung(C, None, None, best_z))
        else:
            rungs.append(Rung(C, best[0], float(best[1]), float(best[2])))
    return BitrateLadder(device, rungs)


@dataclass
class GainReport:
    kind: str  # "Q_gain" or "R_gain"
    value: float
    per_device: dict[str, float]
    per_resolution: dict[str, dict[str, float]]
    skipped: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def dumps(self) -> str:
        lines = [f"{self.kind}\t{self.value!r}"]
        for dev, v in self.per_device.items():
            lines.append(f"device\t{dev}\t{v!r}")
            for res, rv in self.per_resolution.get(dev, {}).items():
                lines.append(f"resolution\t{dev}\t{res}\t{rv!r}")
        for s in self.skipped:
            lines.append(f"skipped\t{s}")
        return "\n".join(lines) + "\n"


def _weights(model_a: GRDModel, model_b: GRDModel, p: Mapping[str, float] | None) -> dict[str, float]:
    if p is None:
        common = [d for d in model_a.devices if d in model_b.devices]
        if not common:
            raise CoverageError("models share no device", [])
        return {d: 1.0 / len(common) for d in common}
    p = {str(k): float(v) for k, v in p.items()}
    if abs(sum(p.values()) - 1.0) > 1e-9 or any(v < 0 for v in p.values()):
        raise ValueError("device weights must be non-negative and sum to 1")
    return p


def _res_key(r) -> str:
    return f"{r[0]}x{r[1]}"


def _trapz(y, x) -> float:
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))


def _average_over_resolutions(values: Sequence[float], ys: Sequence[float]) -> float:
    if len(values) == 1:
        return float(values[0])
    return _trapz(np.asarray(values), np.asarray(ys)) / (ys[-1] - ys[0])


def q_gain(model_a: GRDModel, model_b: GRDModel, p: Mapping[str, float] | None = None,
           window: tuple[float, float] = GAIN_WINDOW,
           resolutions: Sequence[tuple[int, int]] = NINE_RESOLUTIONS, steps: int = 100) -> GainReport:
    """Average quality gain of B over A.

    Per device, ``z_B - z_A`` is integrated by trapezoids over ``steps``
    points in log10 bitrate across ``window`` and over the resolutions in
    log2 pixels, then divided by the domain area; devices are averaged with
    weights ``p``.

    Raises:
        CoverageError: some (device, resolution, bitrate) cell is outside a
            model's hull.
    """
    p = _weights(model_a, model_b, p)
    res = sorted((tuple(r) for r in resolutions), key=lambda r: r[0] * r[1])
    xs = np.linspace(math.log10(window[0]), math.log10(window[1]), int(steps))
    b = 10.0 ** xs
    ys = [math.log2(w * h) for w, h in res]
    per_dev, per_res, missing = {}, {}, []
    for dev in p:
        rows = []
        per_res[dev] = {}
        for (w, h) in res:
            za = model_a.evaluate(dev, b, w, h, outside="nan")
            zb = model_b.evaluate(dev, b, w, h, outside="nan")
            bad = ~(np.isfinite(za) & np.isfinite(zb))
            if np.any(bad):
                missing.append(f"{dev}:{w}x{h}:{b[bad].min():.6g}-{b[bad].max():.6g}kbps")
                continue
            row = float(_trapz(zb - za, xs) / (xs[-1] - xs[0]))
            rows.append(row)
            per_res[dev][_res_key((w, h))] = row
        if not missing:
            per_dev[dev] = _average_over_resolutions(rows, ys)
    if missing:
        raise CoverageError(f"{len(missing)} cells are not covered by both models", missing)
    value = float(sum(p[d] * per_dev[d] for d in p))
    return GainReport("Q_gain", value, per_dev, per_res, [],
                      {"window": list(window), "steps": steps, "resolutions": [_res_key(r) for r in res]})


def r_gain(model_a: GRDModel, model_b: GRDModel, p: Mapping[str, float] | None = None,
           resolutions: Sequence[tuple[int, int]] = NINE_RESOLUTIONS, steps: int = 100,
           window: tuple[float, float] | None = GAIN_WINDOW) -> GainReport:
    """Average rate gain of B over A (negative means B saves bitrate).

    Per device and resolution the common bitrate span ``[x_L, x_H]`` is the
    intersection of ``window`` with both models' bitrate ranges,
    ``z_L = max(z_A(x_L), z_B(x_L))`` and ``z_H = min(z_A(x_H), z_B(x_H))``.
    Both curves are inverted on ``steps`` quality levels and the mean of
    ``x_B(z) - x_A(z)`` in log10 kbps is taken.  Resolutions are averaged
    per device, devices with weights ``p``, and the result is
    ``10**mean - 1``.  Resolutions with an empty quality interval are
    skipped and listed.
    """
    p = _weights(model_a, model_b, p)
    res = sorted((tuple(r) for r in resolutions), key=lambda r: r[0] * r[1])
    per_dev, per_res, skipped = {}, {}, []
    for dev in p:
        ra, rb = model_bitrate_range(model_a, dev), model_bitrate_range(model_b, dev)
        lo, hi = max(ra[0], rb[0]), min(ra[1], rb[1])
        if window is not None:
            lo, hi = max(lo, window[0]), min(hi, window[1])
        if not lo < hi:
            raise CoverageError(f"device {dev}: models share no bitrate range", [dev])
        xl, xh = math.log10(lo), math.log10(hi)
        vals, ys = [], []
        per_res[dev] = {}
        for (w, h) in res:
            def fa(x, w=w, h=h):
                return model_a.evaluate(dev, 10.0 ** x, w, h, outside="nan")

            def fb(x, w=w, h=h):
                return model_b.evaluate(dev, 10.0 ** x, w, h, outside="nan")

            ends_a, ends_b = fa(np.array([xl, xh])), fb(np.array([xl, xh]))
            if not (np.all(np.isfinite(ends_a)) and np.all(np.isfinite(ends_b))):
                skipped.append(f"{dev}:{w}x{h}: outside hull")
                continue
            z_l = float(max(ends_a[0], ends_b[0]))
            z_h = float(min(ends_a[1], ends_b[1]))
            if not z_l < z_h:
                skipped.append(f"{dev}:{w}x{h}: {EmptyQualityInterval.__name__} [{z_l:.6g}, {z_h:.6g}]")
                continue
            zs = np.linspace(z_l, z_h, int(steps))
            xa = invert_curves(fa, zs, xl, xh)
            xb = invert_curves(fb, zs, xl, xh)
            v = float(_trapz(xb - xa, zs) / (z_h - z_l))
            vals.append(v)
            ys.append(math.log2(w * h))
            per_res[dev][_res_key((w, h))] = v
        if not vals:
            raise EmptyQualityInterval(f"device {dev}: no resolution has a common quality interval")
        per_dev[dev] = _average_over_resolutions(vals, ys)
    mean = float(sum(p[d] * per_dev[d] for d in p))
    value = 10.0 ** mean - 1.0
    return GainReport("R_gain", value, {d: 10.0 ** v - 1.0 for d, v in per_dev.items()},
                      per_res, skipped, {"steps": steps, "window": None if window is None else list(window),
                                         "log10_mean": mean})
