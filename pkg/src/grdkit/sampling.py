"""Covariance priors over a representation grid and greedy uncertainty sampling.

A grid surface is treated as a Gaussian vector over the ``N`` grid
representations.  Observing representation ``i`` replaces the covariance by
its Schur complement; the greedy planner picks the representation whose
observation leaves the smallest remaining trace, averaged over devices.
Nothing in the planner depends on observed values, so a plan computed once
is a lookup table valid for every source.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateCorpus, GridMismatch, NearSingularPivot, NoAdmissiblePivot, ParseError

# grids used throughout: 100 kbps steps and the six training resolutions
DEFAULT_BITRATES = tuple(float(b) for b in range(100, 9001, 100))
DEFAULT_RESOLUTIONS = ((320, 240), (384, 288), (512, 384), (720, 480), (1280, 720), (1920, 1080))

PIVOT_FLOOR = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Representation grid, indexed resolution-major with bitrate ascending.

    Index ``i = r * len(bitrates) + b`` for resolution ``r`` and bitrate ``b``.
    """

    bitrates: tuple[float, ...] = DEFAULT_BITRATES
    resolutions: tuple[tuple[int, int], ...] = DEFAULT_RESOLUTIONS

    def __post_init__(self):
        b = np.asarray(self.bitrates, dtype=float)
        object.__setattr__(self, "bitrates", tuple(float(v) for v in b))
        object.__setattr__(self, "resolutions", tuple((int(w), int(h)) for w, h in self.resolutions))
        if len(b) < 1 or np.any(np.diff(b) <= 0) or np.any(b <= 0):
            raise GridMismatch("bitrates must be positive and strictly ascending")
        pix = [w * h for w, h in self.resolutions]
        if len(pix) < 1 or np.any(np.diff(pix) <= 0):
            raise GridMismatch("resolutions must be strictly ascending in pixel count")
        if self.N < 2:
            raise GridMismatch("grid needs at least 2 representations")

    @property
    def N(self) -> int:
        return len(self.bitrates) * len(self.resolutions)

    def index(self, r: int, b: int) -> int:
        return r * len(self.bitrates) + b

    def representation(self, i: int) -> tuple[float, int, int]:
        r, b = divmod(int(i), len(self.bitrates))
        w, h = self.resolutions[r]
        return self.bitrates[b], w, h

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Bitrate, width and height of every index, each ``(N,)``."""
        nb = len(self.bitrates)
        b = np.tile(np.asarray(self.bitrates), len(self.resolutions))
        w = np.repeat([w for w, _ in self.resolutions], nb)
        h = np.repeat([h for _, h in self.resolutions], nb)
        return b, w, h

    def seed_indices(self) -> list[int]:
        """Minimum and maximum bitrate at every resolution."""
        nb = len(self.bitrates)
        out = []
        for r in range(len(self.resolutions)):
            out.append(self.index(r, 0))
            if nb > 1:
                out.append(self.index(r, nb - 1))
        return out

    def to_dict(self) -> dict:
        return {"bitrates": list(self.bitrates), "resolutions": [list(r) for r in self.resolutions]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridSpec":
        return cls(tuple(d["bitrates"]), tuple(tuple(r) for r in d["resolutions"]))


@dataclass
class CovariancePrior:
    """Per-device grid covariance.

    Attributes:
        grid: the GridSpec the matrices refer to.
        devices: device names, one per matrix.
        sigma: ``(D, N, N)`` symmetric PSD matrices.
        epsilon: shrinkage used.
        M: number of corpus surfaces.
    """

    grid: GridSpec
    devices: tuple[str, ...]
    sigma: np.ndarray
    epsilon: float
    M: int

    def averaged(self) -> "CovariancePrior":
        """Single device-averaged matrix (the cheaper planning mode)."""
        return CovariancePrior(self.grid, ("average",), self.sigma.mean(axis=0, keepdims=True),
                               self.epsilon, self.M)

    def trace(self) -> float:
        return float(np.mean([np.trace(s) for s in self.sigma]))

    # plain-text format: typed header lines then one matrix row per line
    def dumps(self) -> str:
        buf = io.StringIO()
        buf.write("# grdkit-prior 1\n")
        buf.write("# bitrates " + " ".join(repr(b) for b in self.grid.bitrates) + "\n")
        buf.write("# resolutions " + " ".join(f"{w}x{h}" for w, h in self.grid.resolutions) + "\n")
        buf.write(f"# epsilon {self.epsilon!r}\n# M {self.M}\n")
        for dev, s in zip(self.devices, self.sigma):
            buf.write(f"# device {dev}\n")
            for row in s:
                buf.write(" ".join(repr(float(v)) for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "CovariancePrior":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# grdkit-prior"):
            raise ParseError("not a prior file", 1)
        header: dict[str, str] = {}
        devices: list[str] = []
        rows: list[list[list[float]]] = []
        for n, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if line.startswith("# "):
                key, _, value = line[2:].partition(" ")
                if key == "device":
                    devices.append(value.strip())
                    rows.append([])
                else:
                    header[key] = value
                continue
            if not rows:
                raise ParseError("matrix row before any device header", n)
            try:
                rows[-1].append([float(v) for v in line.split()])
            except ValueError as exc:
                raise ParseError(f"bad number: {exc}", n) from exc
        try:
            bitrates = tuple(float(v) for v in header["bitrates"].split())
            resolutions = tuple(tuple(int(p) for p in r.split("x")) for r in header["resolutions"].split())
            grid = GridSpec(bitrates, resolutions)
            eps, M = float(header["epsilon"]), int(header["M"])
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad prior header: {exc}", 1) from exc
        try:
            sigma = np.array(rows, dtype=float)
        except ValueError as exc:
            raise ParseError("ragged matrix rows", 1) from exc
        if sigma.shape != (len(devices), grid.N, grid.N):
            raise GridMismatch(f"matrix shape {sigma.shape} does not match grid of {grid.N} representations")
        return cls(grid, tuple(devices), sigma, eps, M)


def _as_device_corpus(corpus, devices=None) -> tuple[tuple[str, ...], list[np.ndarray]]:
    if isinstance(corpus, Mapping):
        names = tuple(str(k) for k in corpus)
        mats = [np.asarray(corpus[k], dtype=float) for k in corpus]
    else:
        arr = np.asarray(corpus, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, None, :]
        if arr.ndim != 3:
            raise GridMismatch("corpus must be (M, N) or (M, D, N)")
        names = tuple(devices) if devices is not None else tuple(f"device{d}" for d in range(arr.shape[1]))
        mats = [arr[:, d, :] for d in range(arr.shape[1])]
    return names, mats


def sample_covariance(X: np.ndarray) -> np.ndarray:
    """Unbiased covariance of the rows of ``X`` (``M x N``)."""
    # shifting by the first row first keeps identical rows exactly zero
    X0 = X - X[0]
    Xc = X0 - X0.mean(axis=0)
    S = Xc.T @ Xc / (X.shape[0] - 1)
    return 0.5 * (S + S.T)


def estimate_prior(corpus, grid: GridSpec, epsilon: float = 1e-3, devices=None) -> CovariancePrior:
    """Empirical covariance with shrinkage ``epsilon * mean(diag) * I``.

    Args:
        corpus: ``(M, N)`` or ``(M, D, N)`` dense grid values, or a mapping
            device -> ``(M, N)``.
        grid: the grid every surface is sampled on.
        epsilon: relative shrinkage.  When the corpus has no variance at
            all the shrinkage scale falls back to 1.

    Raises:
        GridMismatch: a surface does not have ``grid.N`` values.
        DegenerateCorpus: fewer than 2 surfaces.
    """
    names, mats = _as_device_corpus(corpus, devices)
    sig = []
    M = None
    for name, X in zip(names, mats):
        if X.ndim != 2 or X.shape[1] != grid.N:
            raise GridMismatch(f"device {name}: expected {grid.N} values per surface, got shape {X.shape}")
        if X.shape[0] < 2:
            raise DegenerateCorpus(f"need at least 2 corpus surfaces, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise GridMismatch(f"device {name}: non-finite corpus values")
        M = X.shape[0]
        S = sample_covariance(X)
        c = float(np.mean(np.diag(S)))
        if not c > 0:
            c = 1.0
        S[np.diag_indices_from(S)] += epsilon * c
        sig.append(S)
    return CovariancePrior(grid, names, np.stack(sig), float(epsilon), int(M))


def condition(S: np.ndarray, i: int, floor: float | None = None) -> np.ndarray:
    """Covariance of the others after observing component ``i`` (size ``N-1``).

    Raises:
        NearSingularPivot: ``S[i, i]`` is below ``1e-12 * tr(S) / N``.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if floor is None:
        floor = PIVOT_FLOOR * np.trace(S) / n
    piv = S[i, i]
    if not piv > floor:
        raise NearSingularPivot(f"pivot {i} has variance {piv:.3g} below floor {floor:.3g}")
    keep = np.r_[0:i, i + 1:n]
    s = S[keep, i]
    out = S[np.ix_(keep, keep)] - np.outer(s, s) / piv
    return 0.5 * (out + out.T)


def remaining_trace(S: np.ndarray, i: int) -> float:
    """Trace left after observing ``i``: ``tr(S) - ||S[:, i]||^2 / S_ii``."""
    return float(np.trace(S) - S[:, i] @ S[:, i] / S[i, i])


def _scores(S: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Remaining traces for all candidates and their admissibility."""
    d = np.diag(S).copy()
    ok = d > floor
    col = np.einsum("ij,ij->j", S, S)
    red = np.zeros_like(d)
    red[ok] = col[ok] / d[ok]
    return np.trace(S) - red, ok


def next_index(sigmas: Sequence[np.ndarray], candidates=None, floors=None) -> int:
    """Candidate minimising the device-averaged remaining trace.

    Args:
        sigmas: one covariance per device, all the same size.
        candidates: optional boolean mask of allowed indices.
        floors: per-device pivot floors (default ``1e-12 tr / N``).

    A candidate with a near-singular pivot on one device contributes no
    reduction there.  Ties go to the lowest index.

    Raises:
        NoAdmissiblePivot: no candidate is admissible on any device.
    """
    sigmas = [np.asarray(S, dtype=float) for S in sigmas]
    n = sigmas[0].shape[0]
    mask = np.ones(n, dtype=bool) if candidates is None else np.asarray(candidates, dtype=bool)
    total = np.zeros(n)
    any_ok = np.zeros(n, dtype=bool)
    for k, S in enumerate(sigmas):
        floor = floors[k] if floors is not None else PIVOT_FLOOR * np.trace(S) / n
        sc, ok = _scores(S, floor)
        total += sc
        any_ok |= ok
    admissible = mask & any_ok
    if not np.any(admissible):
        raise NoAdmissiblePivot("no admissible pivot remains")
    total = total / len(sigmas)
    idx = np.flatnonzero(admissible)
    return int(idx[np.argmin(total[idx])])


def _observe(S: np.ndarray, i: int, floor: float) -> None:
    """Full-size in-place Schur update; zeroes row and column ``i``."""
    piv = S[i, i]
    if piv > floor:
        s = S[:, i].copy()
        S -= np.outer(s, s) / piv
        S[:] = 0.5 * (S + S.T)
    S[i, :] = 0.0
    S[:, i] = 0.0


@dataclass
class SamplingPlan:
    """Greedy probe order.

    Attributes:
        grid: representation grid.
        indices: probe order, seed representations first.
        traces: device-averaged trace after each probe.
        initial_trace: trace before any observation.
        threshold: stopping threshold ``T``.
        stop_index: length of the plan at which the trace fell to ``T``
            (``None`` if it never did).
        n_seeds: number of leading seed indices.
        probes: values returned by the probe callback, if any.
    """

    grid: GridSpec
    indices: list[int]
    traces: list[float]
    initial_trace: float
    threshold: float
    stop_index: int | None
    n_seeds: int
    probes: list = field(default_factory=list)

    def dumps(self) -> str:
        """Structured text: one ``step index bitrate width height trace`` row per probe."""
        lines = ["# grdkit-plan 1",
                 f"# threshold {self.threshold!r}",
                 f"# initial_trace {self.initial_trace!r}",
                 f"# seeds {self.n_seeds}",
                 f"# stop_index {'none' if self.stop_index is None else self.stop_index}",
                 "step\tindex\tbitrate_kbps\twidth\theight\ttrace"]
        for k, (i, t) in enumerate(zip(self.indices, self.traces)):
            b, w, h = self.grid.representation(i)
            lines.append(f"{k}\t{i}\t{b!r}\t{w}\t{h}\t{t!r}")
        return "\n".join(lines) + "\n"


def plan(prior: CovariancePrior, T: float, K_max: int | None = None, *, seeds: bool = True,
         probe: Callable[[int], object] | None = None, average: bool = False) -> SamplingPlan:
    """Greedy uncertainty-sampling order.

    The min/max-bitrate seed set is observed first.  Then, while the
    device-averaged trace exceeds ``T`` and fewer than ``K_max`` indices are
    chosen, the next index is the trace-minimising candidate.  The stopping
    test is applied to the trace after each update.

    Args:
        prior: per-device covariance prior.
        T: trace threshold.
        K_max: maximum plan length (default ``N``).
        seeds: pre-seed with the min/max-bitrate representations.
        probe: optional callback invoked with each chosen index, standing
            in for encoding and quality measurement.  Its return values are
            recorded and never influence the choice of later indices.
        average: plan on the device-averaged covariance instead.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    grid = prior.grid
    N = grid.N
    K_max = N if K_max is None else int(K_max)
    if K_max > N or K_max < 0:
        raise ValueError(f"K_max must be in [0, {N}]")
    src = prior.averaged() if average else prior
    sig = [np.array(S, dtype=float, copy=True) for S in src.sigma]
    floors = [PIVOT_FLOOR * np.trace(S) / N for S in sig]

    def tr() -> float:
        return float(np.mean([np.trace(S) for S in sig]))

    chosen = np.zeros(N, dtype=bool)
    indices: list[int] = []
    traces: list[float] = []
    probes: list = []
    initial = tr()

    def take(i):
        for S, fl in zip(sig, floors):
            _observe(S, i, fl)
        chosen[i] = True
        indices.append(int(i))
        traces.append(tr())
        if probe is not None:
            probes.append(probe(int(i)))

    seed_list = grid.seed_indices() if seeds else []
    for i in seed_list[:K_max]:
        take(i)
    stop = len(indices) if traces and traces[-1] <= T else None
    if not seed_list and initial <= T:
        stop = 0
    while stop is None and len(indices) < K_max:
        try:
            i = next_index(sig, ~chosen, floors)
        except NoAdmissiblePivot:
            # remaining candidates carry no information; append in index order
            i = int(np.flatnonzero(~chosen)[0])
        take(i)
        if traces[-1] <= T:
            stop = len(indices)
    return SamplingPlan(grid, indices, traces, initial, float(T), stop, min(len(seed_list), K_max), probes)


def logdet_scores(S: np.ndarray) -> np.ndarray:
    """Reference scorer: log-determinant of the conditional covariance per candidate."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    out = np.full(n, np.inf)
    for i in range(n):
        try:
            C = condition(S, i)
        except NearSingularPivot:
            continue
        sign, ld = np.linalg.slogdet(C)
        out[i] = ld if sign > 0 else -np.inf
    return out


def random_plan(grid: GridSpec, K: int, rng: np.random.Generator, seeds: bool = True) -> list[int]:
    """Seed set followed by uniformly random distinct indices, ``K`` total."""
    base = grid.seed_indices() if seeds else []
    base = base[:K]
    rest = np.setdiff1d(np.arange(grid.N), base)
    extra = rng.permutation(rest)[: max(K - len(base), 0)]
    return list(base) + [int(i) for i in extra]
