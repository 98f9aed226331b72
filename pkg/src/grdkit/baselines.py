"""Reference GRD estimators and the sampling benchmark.

One-dimensional kinds fit each training resolution separately in mapped
bitrate ``x = log10(kbps)`` and cannot answer queries at other resolutions.
``PlainCT`` is the curvature-minimising spline without monotonicity rows or
slack; ``RAMCT`` is the full constrained fit.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares

from .errors import GRDError, InsufficientSamples, NoCoverage
from .sampling import CovariancePrior, GridSpec, plan as make_plan, random_plan
from .surface import CoordinateMap, FitOptions, GRDSurface, SamplePoint, fit_surface

KINDS = ("Reciprocal", "Logarithmic", "MonotoneHermite", "PlainCT", "RAMCT")
PARAM_COUNT = {"Reciprocal": 3, "Logarithmic": 2, "MonotoneHermite": 2}
INTERPOLANTS = ("MonotoneHermite", "PlainCT", "RAMCT")


@dataclass
class _Curve:
    lo: float
    hi: float
    fn: Callable[[np.ndarray], np.ndarray]
    params: tuple = ()


def _fit_reciprocal(b: np.ndarray, z: np.ndarray) -> tuple:
    """``z = a - s / (b + c)`` by damped least squares, ``c > -min(b)``."""
    bmin = float(b.min())
    span = float(b.max() - bmin) or 1.0
    a0 = float(z.max()) + 1.0
    c0 = span * 0.1
    s0 = max((a0 - float(z.min())) * (bmin + c0), 1e-6)
    # unknowns scaled to order one: (a, log s, log(c + bmin))
    def resid(p):
        a, ls, lc = p
        return a - np.exp(ls) / (b - bmin + np.exp(lc) * span) - z

    p0 = np.array([a0, math.log(s0), math.log(c0 / span)])
    res = least_squares(resid, p0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=20000)
    a, ls, lc = res.x
    s, c = math.exp(ls), math.exp(lc) * span - bmin
    return float(a), float(s), float(c)


class BaselineModel:
    """A fitted reference estimator for one device.

    Attributes:
        kind: one of ``KINDS``.
        curves: per-resolution ``(width, height) -> _Curve`` for 1-D kinds.
        surface: the fitted GRDSurface for spline kinds.
    """

    def __init__(self, kind: str, coord_map: CoordinateMap, curves=None, surface: GRDSurface | None = None):
        self.kind = kind
        self.coord_map = coord_map
        self.curves: dict[tuple[int, int], _Curve] = curves or {}
        self.surface = surface

    def params(self, width: int, height: int) -> tuple:
        return self._curve(width, height).params

    def _curve(self, width, height) -> _Curve:
        try:
            return self.curves[(int(width), int(height))]
        except KeyError:
            raise NoCoverage(f"{self.kind} has no curve at {width}x{height}") from None

    def evaluate(self, bitrate, width, height) -> np.ndarray:
        b = np.asarray(bitrate, dtype=float)
        if self.surface is not None:
            xy = self.coord_map.to_xy(b, width, height)
            return self.surface.evaluate_xy(xy)
        w = np.broadcast_to(np.asarray(width), b.shape)
        h = np.broadcast_to(np.asarray(height), b.shape)
        out = np.empty(b.shape)
        keys = set(zip(np.ravel(w).tolist(), np.ravel(h).tolist())) if b.ndim else {(int(w), int(h))}
        for key in keys:
            cur = self._curve(*key)
            sel = (w == key[0]) & (h == key[1])
            xs = self.coord_map.x(b[sel])
            if np.any(xs < cur.lo - 1e-12) or np.any(xs > cur.hi + 1e-12):
                raise NoCoverage(f"{self.kind}: bitrate outside the training range at {key[0]}x{key[1]}")
            out[sel] = cur.fn(xs)
        return out


def fit_baseline(kind: str, samples: Sequence[SamplePoint], options: FitOptions | None = None) -> BaselineModel:
    """Fit one reference estimator to one device's samples.

    Raises:
        InsufficientSamples: a 1-D kind lacks enough samples at some resolution.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}")
    opts = options or FitOptions()
    cmap = opts.coord_map
    if kind in ("PlainCT", "RAMCT"):
        xy = cmap.to_xy([s.bitrate for s in samples], [s.width for s in samples], [s.height for s in samples])
        z = np.array([s.z for s in samples], dtype=float)
        if kind == "PlainCT":
            opts = FitOptions(**{**opts.__dict__, "monotone": False, "robust": False})
        return BaselineModel(kind, cmap, surface=fit_surface(xy, z, opts))

    by_res: dict[tuple[int, int], list[SamplePoint]] = {}
    for s in samples:
        by_res.setdefault((s.width, s.height), []).append(s)
    need = PARAM_COUNT[kind]
    curves = {}
    for key, pts in sorted(by_res.items()):
        pts = sorted(pts, key=lambda s: s.bitrate)
        b = np.array([p.bitrate for p in pts])
        z = np.array([p.z for p in pts])
        if len(np.unique(b)) < need:
            raise InsufficientSamples(
                f"{kind} needs {need} bitrates at {key[0]}x{key[1]}, got {len(np.unique(b))}")
        x = cmap.x(b)
        lo, hi = float(x.min()), float(x.max())
        if kind == "Logarithmic":
            M = np.c_[np.log(b), np.ones_like(b)]
            (a, c), *_ = np.linalg.lstsq(M, z, rcond=None)
            fn = (lambda a, c: (lambda xs: a * np.log(cmap.bitrate(xs)) + c))(float(a), float(c))
            curves[key] = _Curve(lo, hi, fn, (float(a), float(c)))
        elif kind == "Reciprocal":
            a, s_, c = _fit_reciprocal(b, z)
            fn = (lambda a, s_, c: (lambda xs: a - s_ / (cmap.bitrate(xs) + c)))(a, s_, c)
            curves[key] = _Curve(lo, hi, fn, (a, s_, c))
        else:
            pchip = PchipInterpolator(x, z, extrapolate=False)
            curves[key] = _Curve(lo, hi, pchip, ())
    return BaselineModel(kind, cmap, curves=curves)


# benchmark ---------------------------------------------------------------------

@dataclass
class BenchCell:
    kind: str
    sampler: str
    count: int
    mse: float  # median over corpus surfaces; nan when not available
    linf: float
    n_ok: int
    n_total: int

    @property
    def available(self) -> bool:
        return not math.isnan(self.mse)


@dataclass
class BenchReport:
    cells: list[BenchCell]
    seconds: float
    settings: dict = field(default_factory=dict)

    def cell(self, kind: str, sampler: str, count: int) -> BenchCell:
        for c in self.cells:
            if (c.kind, c.sampler, c.count) == (kind, sampler, count):
                return c
        raise KeyError((kind, sampler, count))

    def table(self, metric: str = "mse", sep: str = "\t") -> str:
        """Rows are sample counts; columns are ``kind/sampler``."""
        cols = []
        for c in self.cells:
            if (c.kind, c.sampler) not in cols:
                cols.append((c.kind, c.sampler))
        counts = sorted({c.count for c in self.cells})
        lines = [sep.join(["samples"] + [f"{k}/{s}" for k, s in cols])]
        for n in counts:
            row = [str(n)]
            for k, s in cols:
                try:
                    v = getattr(self.cell(k, s, n), metric)
                except KeyError:
                    v = math.nan
                row.append("N.A." if math.isnan(v) else repr(float(v)))
            lines.append(sep.join(row))
        return "\n".join(lines) + "\n"


def _errors(model: BaselineModel, truth: np.ndarray, grid: GridSpec) -> tuple[float, float]:
    b, w, h = grid.arrays()
    pred = model.evaluate(b, w, h)
    err = pred - truth
    return float(np.mean(err**2)), float(np.max(np.abs(err)))


def _samples_from(grid: GridSpec, truth: np.ndarray, idx: Sequence[int], device: str) -> list[SamplePoint]:
    out = []
    for i in idx:
        b, w, h = grid.representation(i)
        out.append(SamplePoint(b, w, h, device, float(truth[i])))
    return out


def benchmark(corpus: np.ndarray, grid: GridSpec, kinds: Sequence[str] = KINDS,
              samplers: Sequence[str] = ("random", "uncertainty"), counts: Sequence[int] = (30,),
              prior: CovariancePrior | None = None, repeats: int = 50, seed: int = 0,
              options: FitOptions | None = None, device: str = "device",
              progress: Callable[[str], None] | None = None) -> BenchReport:
    """Median MSE and l-infinity error over a corpus of dense grids.

    Args:
        corpus: ``(M, N)`` ground-truth grid values for one device.
        grid: the corpus grid.
        kinds: estimators to run.
        samplers: ``"random"`` (seed set plus random indices, ``repeats``
            draws with the per-surface median taken) and/or
            ``"uncertainty"`` (the greedy plan of ``prior``).
        counts: sample counts.  A count of ``grid.N`` uses every sample.
        prior: covariance prior for the uncertainty sampler.
        repeats: random-sampling repetitions.
        seed: seed of the random sampler.

    A cell whose fits fail for more than half of the surfaces is reported
    as not available.
    """
    t0 = time.perf_counter()
    corpus = np.asarray(corpus, dtype=float)
    if corpus.ndim != 2 or corpus.shape[1] != grid.N:
        raise ValueError(f"corpus must be (M, {grid.N})")
    M = corpus.shape[0]
    rng = np.random.default_rng(seed)
    unc_order = None
    if "uncertainty" in samplers:
        if prior is None:
            raise ValueError("uncertainty sampler needs a prior")
        if prior.grid != grid:
            raise ValueError("prior grid does not match corpus grid")
        unc_order = make_plan(prior, 0.0, grid.N).indices

    # sample index sets are shared by every kind
    draws: dict[tuple[str, int], list[list[list[int]]]] = {}
    for sampler in samplers:
        for n in counts:
            if n > grid.N:
                raise ValueError(f"count {n} exceeds grid size {grid.N}")
            if n >= grid.N:
                sets = [[list(range(grid.N))] for _ in range(M)]
            elif sampler == "random":
                sets = [[random_plan(grid, n, rng) for _ in range(repeats)] for _ in range(M)]
            elif sampler == "uncertainty":
                sets = [[unc_order[:n]] for _ in range(M)]
            else:
                raise ValueError(f"unknown sampler {sampler!r}")
            draws[(sampler, n)] = sets

    cells = []
    cache: dict[tuple, tuple[float, float] | None] = {}
    for kind in kinds:
        for sampler in samplers:
            for n in counts:
                mses, linfs, ok = [], [], 0
                for m in range(M):
                    per_m, per_l = [], []
                    for idx in draws[(sampler, n)][m]:
                        key = (kind, m, tuple(sorted(idx)))
                        if key not in cache:
                            try:
                                model = fit_baseline(kind, _samples_from(grid, corpus[m], idx, device), options)
                                cache[key] = _errors(model, corpus[m], grid)
                            except GRDError:
                                cache[key] = None
                        r = cache[key]
                        if r is not None:
                            per_m.append(r[0])
                            per_l.append(r[1])
                    if len(per_m) * 2 > len(draws[(sampler, n)][m]):
                        ok += 1
                        mses.append(statistics.median(per_m))
                        linfs.append(statistics.median(per_l))
                if ok * 2 > M:
                    cell = BenchCell(kind, sampler, n, statistics.median(mses), statistics.median(linfs), ok, M)
                else:
                    cell = BenchCell(kind, sampler, n, math.nan, math.nan, ok, M)
                cells.append(cell)
                if progress:
                    progress(f"{kind}/{sampler}/{n}: mse={cell.mse:.6g} linf={cell.linf:.6g}")
    settings = {"repeats": repeats, "seed": seed, "M": M, "N": grid.N}
    return BenchReport(cells, time.perf_counter() - t0, settings)
