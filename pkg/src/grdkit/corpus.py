"""Measurement files and the synthetic GRD corpus.

Measurement files are comma-separated text.  Leading ``#`` lines declare the
metric and its range, then a typed header row names the columns::

    # grdkit-measurements 1
    # metric ssim-like
    # z_range 0 100
    source:str,codec:str,device:str,width:int,height:int,bitrate_kbps:float,z:float
    clip01,h264,tv,1920,1080,3000,87.25

Synthetic surfaces follow the logistic family
``z = A(y, u) / (1 + exp(-g(y) * (ln b - mu(y, u))))`` over
``t = (log2 pixels - log2(320*240)) / (log2(1920*1080) - log2(320*240))``,
with ``A = 100 - P_u (1 - t)^2``, ``g = g0 (1 + g1 t)`` and
``mu = mu0 + mu1 t + delta_u``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DuplicateKey, ParseError, RangeError, SpecError
from .sampling import GridSpec
from .surface import SamplePoint, atomic_write

COLUMNS = (
    ("source", str), ("codec", str), ("device", str), ("width", int),
    ("height", int), ("bitrate_kbps", float), ("z", float),
)
_TYPES = {"str": str, "int": int, "float": float}

REF_PIXELS = (320 * 240, 1920 * 1080)


@dataclass
class Measurements:
    """Validated measurements grouped by ``(source, codec, device)``."""

    metric: str
    z_range: tuple[float, float]
    groups: dict[tuple[str, str, str], list[SamplePoint]]

    def models(self) -> dict[tuple[str, str], dict[str, list[SamplePoint]]]:
        """Regroup as ``(source, codec) -> device -> samples``."""
        out: dict[tuple[str, str], dict[str, list[SamplePoint]]] = {}
        for (src, codec, dev), pts in self.groups.items():
            out.setdefault((src, codec), {})[dev] = pts
        return out

    def __len__(self) -> int:
        return sum(len(v) for v in self.groups.values())


def _parse_int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def parse_measurements(text: str) -> Measurements:
    """Parse measurement text; errors carry 1-based line numbers."""
    metric, z_range = "quality", (0.0, 100.0)
    lines = text.splitlines()
    n = 0
    while n < len(lines) and (lines[n].startswith("#") or not lines[n].strip()):
        body = lines[n].lstrip("#").strip()
        key, _, value = body.partition(" ")
        if key == "metric":
            metric = value.strip()
        elif key == "z_range":
            try:
                lo, hi = (float(v) for v in value.replace(",", " ").split())
            except ValueError:
                raise ParseError(f"bad z_range declaration {value!r}", n + 1) from None
            if not lo < hi:
                raise ParseError("z_range must have low < high", n + 1)
            z_range = (lo, hi)
        n += 1
    if n >= len(lines):
        raise ParseError("missing header row", n + 1)
    header_line = n + 1
    header = next(csv.reader([lines[n]]))
    names = []
    for col in header:
        name, _, typ = col.strip().partition(":")
        if typ and typ not in _TYPES:
            raise ParseError(f"unknown column type {typ!r}", header_line)
        names.append(name)
    missing = [c for c, _ in COLUMNS if c not in names]
    if missing:
        raise ParseError(f"header lacks columns {missing}", header_line)
    pos = {c: names.index(c) for c, _ in COLUMNS}

    groups: dict[tuple[str, str, str], list[SamplePoint]] = {}
    seen: dict[tuple, int] = {}
    lo, hi = z_range
    for k, row in enumerate(csv.reader(lines[n + 1:]), start=n + 2):
        if not row or (len(row) == 1 and not row[0].strip()) or row[0].startswith("#"):
            continue
        if len(row) != len(names):
            raise ParseError(f"expected {len(names)} fields, got {len(row)}", k)
        try:
            src, codec, dev = (row[pos[c]].strip() for c in ("source", "codec", "device"))
            w, h = _parse_int(row[pos["width"]]), _parse_int(row[pos["height"]])
            b, z = float(row[pos["bitrate_kbps"]]), float(row[pos["z"]])
        except ValueError as exc:
            raise ParseError(f"bad field: {exc}", k) from None
        if not (math.isfinite(b) and b > 0):
            raise RangeError(f"bitrate must be positive, got {b!r}", k)
        if w <= 0 or h <= 0:
            raise RangeError(f"resolution must be positive, got {w}x{h}", k)
        if not (math.isfinite(z) and lo <= z <= hi):
            raise RangeError(f"z = {z!r} outside declared range [{lo!r}, {hi!r}]", k)
        key = (src, codec, dev, w, h, b)
        if key in seen:
            raise DuplicateKey(f"duplicate measurement {key} on lines {seen[key]} and {k}", (seen[key], k))
        seen[key] = k
        groups.setdefault((src, codec, dev), []).append(SamplePoint(b, w, h, dev, z))
    if not groups:
        raise ParseError("no measurement rows", len(lines) + 1)
    return Measurements(metric, z_range, groups)


def load_measurements(path) -> Measurements:
    with open(path, encoding="utf-8") as fh:
        return parse_measurements(fh.read())


def format_measurements(rows: Iterable[tuple[str, str, SamplePoint]], metric: str = "quality",
                        z_range: tuple[float, float] = (0.0, 100.0)) -> str:
    """Text for ``(source, codec, sample)`` rows."""
    buf = io.StringIO()
    buf.write(f"# grdkit-measurements 1\n# metric {metric}\n# z_range {z_range[0]!r} {z_range[1]!r}\n")
    buf.write(",".join(f"{c}:{t.__name__}" for c, t in COLUMNS) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for src, codec, s in rows:
        writer.writerow([src, codec, s.device, s.width, s.height, repr(float(s.bitrate)), repr(float(s.z))])
    return buf.getvalue()


def write_measurements(path, rows, metric: str = "quality", z_range=(0.0, 100.0)) -> None:
    atomic_write(path, format_measurements(rows, metric, z_range))


# synthetic corpus ------------------------------------------------------------

def logistic_grd(bitrate, A, g, mu) -> np.ndarray:
    """``A / (1 + exp(-g (ln b - mu)))``."""
    return A / (1.0 + np.exp(-g * (np.log(np.asarray(bitrate, dtype=float)) - mu)))


def resolution_t(width, height) -> np.ndarray:
    """Normalised log-pixel position, clipped to ``[0, 1]``."""
    lp = np.log2(np.asarray(width, dtype=float) * np.asarray(height, dtype=float))
    lo, hi = math.log2(REF_PIXELS[0]), math.log2(REF_PIXELS[1])
    return np.clip((lp - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class DeviceParams:
    penalty: float  # P_u: ceiling drop at the smallest resolution
    delta: float  # mu shift


@dataclass(frozen=True)
class SyntheticSurface:
    """Closed-form GRD surface of one source over several devices."""

    g0: float
    g1: float
    mu0: float
    mu1: float
    devices: Mapping[str, DeviceParams]

    def params(self, device: str, width, height):
        d = self.devices[device]
        t = resolution_t(width, height)
        A = 100.0 - d.penalty * (1.0 - t) ** 2
        g = self.g0 * (1.0 + self.g1 * t)
        mu = self.mu0 + self.mu1 * t + d.delta
        return A, g, mu

    def value(self, device: str, bitrate, width, height) -> np.ndarray:
        A, g, mu = self.params(device, width, height)
        return logistic_grd(bitrate, A, g, mu)

    def d_dlogb(self, device: str, bitrate, width, height) -> np.ndarray:
        """Derivative with respect to ``ln b``."""
        A, g, mu = self.params(device, width, height)
        e = np.exp(-g * (np.log(np.asarray(bitrate, dtype=float)) - mu))
        return A * g * e / (1.0 + e) ** 2

    def grid_values(self, grid: GridSpec, device: str) -> np.ndarray:
        b, w, h = grid.arrays()
        return self.value(device, b, w, h)

    def samples(self, grid: GridSpec, indices: Sequence[int], devices: Sequence[str] | None = None
                ) -> dict[str, list[SamplePoint]]:
        devices = list(self.devices) if devices is None else list(devices)
        out = {}
        for dev in devices:
            pts = []
            for i in indices:
                b, w, h = grid.representation(i)
                pts.append(SamplePoint(b, w, h, dev, float(self.value(dev, b, w, h))))
            out[dev] = pts
        return out


DEFAULT_DEVICES = {
    # name: (penalty range, delta range); larger screens expose upsampling blur
    "phone": ((0.0, 8.0), (-0.4, -0.2)),
    "laptop": ((8.0, 20.0), (-0.1, 0.1)),
    "tv": ((20.0, 38.0), (0.1, 0.3)),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.  Parameter ranges are ``(low, high)`` uniform draws."""

    seed: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    devices: tuple[str, ...] = ("phone", "laptop", "tv")
    g0: tuple[float, float] = (1.1, 2.2)
    g1: tuple[float, float] = (0.0, 0.4)
    mu0: tuple[float, float] = (math.log(150.0), math.log(600.0))
    mu1: tuple[float, float] = (1.0, 2.2)
    device_ranges: Mapping[str, tuple[tuple[float, float], tuple[float, float]]] = field(
        default_factory=lambda: dict(DEFAULT_DEVICES))

    def validate(self) -> None:
        for name in ("g0", "g1", "mu0", "mu1"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise SpecError(f"{name} range must have low <= high")
        if self.g0[0] <= 0:
            raise SpecError("g0 must be positive")
        if self.g1[0] < 0:
            raise SpecError("g1 must be non-negative")
        if self.mu1[0] <= 0:
            raise SpecError("mu1 must be positive so that mu increases with resolution")
        if not self.devices:
            raise SpecError("need at least one device")
        for dev in self.devices:
            if dev not in self.device_ranges:
                raise SpecError(f"no parameter ranges for device {dev!r}")
            (plo, phi), (dlo, dhi) = self.device_ranges[dev]
            if not (0 <= plo <= phi < 40):
                raise SpecError(f"device {dev}: penalty must lie in [0, 40) to keep A in (60, 100]")
            if not dlo <= dhi:
                raise SpecError(f"device {dev}: delta range must have low <= high")


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    surfaces: list[SyntheticSurface]
    values: np.ndarray  # (M, D, N)

    @property
    def grid(self) -> GridSpec:
        return self.spec.grid

    @property
    def devices(self) -> tuple[str, ...]:
        return self.spec.devices

    def device_matrix(self, device: str) -> np.ndarray:
        return self.values[:, self.devices.index(device), :]

    def dumps(self) -> str:
        """Dense grid table: one row per (surface, device, index)."""
        b, w, h = self.grid.arrays()
        lines = ["# grdkit-corpus 1", f"# seed {self.spec.seed}",
                 "surface:int,device:str,index:int,width:int,height:int,bitrate_kbps:float,z:float"]
        for m in range(self.values.shape[0]):
            for d, dev in enumerate(self.devices):
                for i in range(self.grid.N):
                    lines.append(f"{m},{dev},{i},{w[i]},{h[i]},{float(b[i])!r},{float(self.values[m, d, i])!r}")
        return "\n".join(lines) + "\n"


def synth_corpus(spec: SyntheticSpec, M: int) -> SyntheticCorpus:
    """Draw ``M`` synthetic sources, deterministic in ``spec.seed``.

    Raises:
        SpecError: invalid settings, or a generated surface that is not
            non-decreasing in bitrate on the grid.
    """
    spec.validate()
    if M < 1:
        raise SpecError("M must be at least 1")
    rng = np.random.default_rng(spec.seed)
    surfaces = []
    nb = len(spec.grid.bitrates)
    values = np.empty((M, len(spec.devices), spec.grid.N))
    for m in range(M):
        g0 = rng.uniform(*spec.g0)
        g1 = rng.uniform(*spec.g1)
        mu0 = rng.uniform(*spec.mu0)
        mu1 = rng.uniform(*spec.mu1)
        devs = {}
        for dev in spec.devices:
            (plo, phi), (dlo, dhi) = spec.device_ranges[dev]
            devs[dev] = DeviceParams(float(rng.uniform(plo, phi)), float(rng.uniform(dlo, dhi)))
        s = SyntheticSurface(float(g0), float(g1), float(mu0), float(mu1), devs)
        for d, dev in enumerate(spec.devices):
            v = s.grid_values(spec.grid, dev)
            if np.any(np.diff(v.reshape(-1, nb), axis=1) < 0):
                raise SpecError(f"surface {m} device {dev} is not monotone in bitrate")
            values[m, d] = v
        surfaces.append(s)
    return SyntheticCorpus(spec, surfaces, values)


def perturbed_grid(values: np.ndarray, grid: GridSpec, amplitude: float, rng: np.random.Generator
                   ) -> np.ndarray:
    """Grid values plus uniform noise, used to build non-monotone test data."""
    return values + rng.uniform(-amplitude, amplitude, size=grid.N)


def save_corpus(path, corpus: SyntheticCorpus) -> None:
    atomic_write(path, corpus.dumps())


def load_corpus(path) -> tuple[GridSpec, tuple[str, ...], np.ndarray]:
    """Read a dense corpus table; returns ``(grid, devices, values (M, D, N))``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines()]
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        body_start += 1
    rows = {}
    reps = {}
    devices: list[str] = []
    for k, row in enumerate(csv.reader(lines[body_start + 1:]), start=body_start + 2):
        if not row:
            continue
        try:
            m, dev, i = int(row[0]), row[1], int(row[2])
            w, h, b, z = int(row[3]), int(row[4]), float(row[5]), float(row[6])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad corpus row: {exc}", k) from None
        if dev not in devices:
            devices.append(dev)
        if (m, dev, i) in rows:
            raise DuplicateKey(f"duplicate corpus entry {(m, dev, i)}", (rows[(m, dev, i)][1], k))
        rows[(m, dev, i)] = (z, k)
        reps[i] = (b, w, h)
    if not rows:
        raise ParseError("empty corpus", len(lines))
    N = max(reps) + 1
    bitrates = sorted({b for b, _, _ in reps.values()})
    resolutions = sorted({(w, h) for _, w, h in reps.values()}, key=lambda r: r[0] * r[1])
    grid = GridSpec(tuple(bitrates), tuple(resolutions))
    if grid.N != N or any(grid.representation(i) != reps[i] for i in reps):
        raise ParseError("corpus indices do not form a resolution-major grid", body_start + 1)
    M = max(m for m, _, _ in rows) + 1
    values = np.full((M, len(devices), N), np.nan)
    for (m, dev, i), (z, _) in rows.items():
        values[m, devices.index(dev), i] = z
    if np.any(np.isnan(values)):
        raise ParseError("corpus is missing grid entries", len(lines))
    return grid, tuple(devices), values
