"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import math
import sys
import traceback
import warnings
from typing import Sequence

import numpy as np

from . import __version__
from .errors import DataError, GRDError, NumericError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pairs(text: str, typ=float) -> tuple:
    try:
        return tuple(typ(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _resolution(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise UsageError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _resolutions(text: str | None, default):
    if text is None:
        return default
    return tuple(_resolution(r) for r in text.split(","))


def _write(path: str | None, text: str) -> None:
    from .surface import atomic_write

    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write(path, text)


def _options(args):
    from .surface import CoordinateMap, FitOptions

    if not args.lam > 0:
        raise UsageError("--lam must be positive")
    if args.max_iter < 1:
        raise UsageError("--max-iter must be at least 1")
    return FitOptions(lam=args.lam, coord_map=CoordinateMap(args.coord), method=args.method,
                      max_iter=args.max_iter)


# commands -------------------------------------------------------------------------

def cmd_fit(args) -> int:
    from .corpus import load_measurements
    from .surface import fit

    opts = _options(args)
    meas = load_measurements(args.measurements)
    groups = meas.models()
    if args.source is not None:
        groups = {k: v for k, v in groups.items() if k[0] == args.source}
    if args.codec is not None:
        groups = {k: v for k, v in groups.items() if k[1] == args.codec}
    if len(groups) != 1:
        names = sorted(f"{s}/{c}" for s, c in meas.models())
        raise DataError(f"select exactly one source/codec with --source/--codec (have {names})")
    (source, codec), samples = next(iter(groups.items()))
    opts.z_range = meas.z_range
    model = fit(samples, opts, {"source": source, "codec": codec, "metric": meas.metric})
    _write(args.output, model.dumps())
    for dev, s in model.surfaces.items():
        print(f"{dev}\tsites={len(s.sites)}\ttriangles={len(s.triangles)}\t"
              f"total_slack={s.total_slack!r}\tstatus={s.report.get('status')}", file=sys.stderr)
    return 0


def _queries(args) -> list[tuple[float, int, int]]:
    out = []
    for q in args.at or []:
        b, w, h = _pairs(q)
        out.append((b, int(w), int(h)))
    if args.queries:
        with open(args.queries, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#") or line.lower().startswith("bitrate"):
                    continue
                parts = line.replace("\t", ",").split(",")
                try:
                    out.append((float(parts[0]), int(parts[1]), int(parts[2])))
                except (ValueError, IndexError):
                    from .errors import ParseError

                    raise ParseError(f"bad query line {line!r}", n) from None
    if not out:
        raise UsageError("give queries with --at B,W,H or --queries FILE")
    return out


def cmd_eval(args) -> int:
    from .surface import GRDModel

    model = GRDModel.load(args.model)
    qs = _queries(args)
    b = np.array([q[0] for q in qs])
    w = np.array([q[1] for q in qs])
    h = np.array([q[2] for q in qs])
    z = model.evaluate(args.device, b, w, h)
    lines = ["bitrate_kbps\twidth\theight\tz" + ("\tdz_dx\tdz_dy" if args.gradient else "")]
    g = model.gradient(args.device, b, w, h, units=args.units) if args.gradient else None
    for k, (bb, ww, hh) in enumerate(qs):
        row = f"{bb!r}\t{ww}\t{hh}\t{float(z[k])!r}"
        if g is not None:
            row += f"\t{float(g[k, 0])!r}\t{float(g[k, 1])!r}"
        lines.append(row)
    _write(args.output, "\n".join(lines) + "\n")
    return 0


def cmd_prior(args) -> int:
    from .corpus import load_corpus
    from .sampling import estimate_prior

    grid, devices, values = load_corpus(args.corpus)
    corpus = {d: values[:, k, :] for k, d in enumerate(devices)}
    prior = estimate_prior(corpus, grid, args.epsilon)
    _write(args.output, prior.dumps())
    return 0


def _load_prior(path):
    from .sampling import CovariancePrior

    with open(path, encoding="utf-8") as fh:
        return CovariancePrior.loads(fh.read())


def cmd_plan(args) -> int:
    from .sampling import plan

    prior = _load_prior(args.prior)
    p = plan(prior, args.threshold, args.kmax, average=args.average, seeds=not args.no_seeds)
    _write(args.output, p.dumps())
    return 0


def cmd_ladder(args) -> int:
    from .applications import LADDER_TARGETS, NINE_RESOLUTIONS, build_ladder
    from .surface import GRDModel

    model = GRDModel.load(args.model)
    targets = _pairs(args.targets) if args.targets else LADDER_TARGETS
    res = _resolutions(args.resolutions, NINE_RESOLUTIONS)
    bracket = _pairs(args.bracket) if args.bracket else None
    lad = build_ladder(model, args.device, targets, res, bracket)
    _write(args.output, lad.dumps())
    return 0


def cmd_gain(args) -> int:
    from .applications import GAIN_WINDOW, NINE_RESOLUTIONS, q_gain, r_gain
    from .surface import GRDModel

    a, b = GRDModel.load(args.model_a), GRDModel.load(args.model_b)
    res = _resolutions(args.resolutions, NINE_RESOLUTIONS)
    window = _pairs(args.window) if args.window else GAIN_WINDOW
    q = q_gain(a, b, None, window, res, args.steps)
    r = r_gain(a, b, None, res, args.steps, window)
    _write(args.output, q.dumps() + r.dumps())
    return 0


def cmd_bench(args) -> int:
    from .baselines import KINDS, benchmark
    from .corpus import load_corpus

    grid, devices, values = load_corpus(args.corpus)
    device = args.device or devices[0]
    if device not in devices:
        raise DataError(f"device {device!r} not in corpus (have {list(devices)})")
    prior = _load_prior(args.prior) if args.prior else None
    if prior is not None and device in prior.devices and not args.average_prior:
        from .sampling import CovariancePrior

        k = prior.devices.index(device)
        prior = CovariancePrior(prior.grid, (device,), prior.sigma[k:k + 1], prior.epsilon, prior.M)
    kinds = tuple(args.kinds.split(",")) if args.kinds else KINDS
    for k in kinds:
        if k not in KINDS:
            raise UsageError(f"unknown kind {k!r}; choose from {KINDS}")
    samplers = ("random", "uncertainty") if prior is not None else ("random",)
    counts = _pairs(args.counts, int)
    report = benchmark(values[:, devices.index(device), :], grid, kinds, samplers, counts, prior,
                       args.repeats, args.seed, device=device,
                       progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    text = "# mse\n" + report.table("mse") + "# linf\n" + report.table("linf")
    _write(args.output, text)
    return 0


def cmd_synth(args) -> int:
    from .corpus import SyntheticSpec, format_measurements, save_corpus, synth_corpus
    from .sampling import random_plan

    spec = SyntheticSpec(seed=args.seed)
    corpus = synth_corpus(spec, args.M)
    if args.output:
        save_corpus(args.output, corpus)
    if args.measurements:
        rng = np.random.default_rng(args.seed)
        rows = []
        for m, surf in enumerate(corpus.surfaces):
            idx = random_plan(spec.grid, args.samples, rng) if args.samples < spec.grid.N else range(spec.grid.N)
            for dev, pts in surf.samples(spec.grid, list(idx)).items():
                rows += [(f"synth{m:03d}", args.codec, s) for s in pts]
        _write(args.measurements, format_measurements(rows, "synthetic", (0.0, 100.0)))
    if not args.output and not args.measurements:
        sys.stdout.write(corpus.dumps())
    return 0


def cmd_curve(args) -> int:
    from .applications import rd_curve
    from .surface import GRDModel

    model = GRDModel.load(args.model)
    rng_ = _pairs(args.range) if args.range else (100.0, 9000.0)
    text = ""
    for res in _resolutions(args.resolution, None):
        text += rd_curve(model, args.device, res, rng_, args.steps).dumps()
    _write(args.output, text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="grdkit", description="Fit and apply monotone GRD surfaces.")
    p.add_argument("--version", action="version", version=f"grdkit {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def fit_opts(sp):
        sp.add_argument("--lam", type=float, default=1e-4, help="slack penalty weight")
        sp.add_argument("--coord", choices=("log", "identity"), default="log")
        sp.add_argument("--method", choices=("ipm", "admm"), default="ipm")
        sp.add_argument("--max-iter", type=int, default=10**6, help="solver iteration cap")

    s = sub.add_parser("fit", help="measurements -> model document")
    s.add_argument("measurements")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--source")
    s.add_argument("--codec")
    fit_opts(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", help="evaluate a model at queries")
    s.add_argument("model")
    s.add_argument("--device", required=True)
    s.add_argument("--at", action="append", metavar="B,W,H")
    s.add_argument("--queries", metavar="FILE")
    s.add_argument("--gradient", action="store_true")
    s.add_argument("--units", choices=("mapped", "native"), default="mapped")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("prior", help="corpus -> covariance prior")
    s.add_argument("corpus")
    s.add_argument("--epsilon", type=float, default=1e-3)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_prior)

    s = sub.add_parser("plan", help="prior -> sampling plan")
    s.add_argument("prior")
    s.add_argument("--threshold", "-T", type=float, required=True)
    s.add_argument("--kmax", type=int)
    s.add_argument("--average", action="store_true", help="plan on the device-averaged covariance")
    s.add_argument("--no-seeds", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("ladder", help="quality-driven bitrate ladder")
    s.add_argument("model")
    s.add_argument("--device", required=True)
    s.add_argument("--targets")
    s.add_argument("--resolutions")
    s.add_argument("--bracket", metavar="LO,HI")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_ladder)

    s = sub.add_parser("gain", help="Q_gain and R_gain of model B over model A")
    s.add_argument("model_a")
    s.add_argument("model_b")
    s.add_argument("--resolutions")
    s.add_argument("--window", metavar="LO,HI")
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_gain)

    s = sub.add_parser("bench", help="benchmark estimators on a corpus")
    s.add_argument("corpus")
    s.add_argument("--prior")
    s.add_argument("--average-prior", action="store_true")
    s.add_argument("--device")
    s.add_argument("--kinds")
    s.add_argument("--counts", default="30")
    s.add_argument("--repeats", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--verbose", "-v", action="store_true")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("-M", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", help="dense corpus table")
    s.add_argument("--measurements", help="also write sampled measurements")
    s.add_argument("--samples", type=int, default=30)
    s.add_argument("--codec", default="synthetic")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("curve", help="RD-curve dump at given resolutions")
    s.add_argument("model")
    s.add_argument("--device", required=True)
    s.add_argument("--resolution", required=True, metavar="WxH[,WxH...]")
    s.add_argument("--range", metavar="LO,HI")
    s.add_argument("--steps", type=int, default=90)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_curve)
    return p


def _origin(exc: BaseException) -> str:
    mod = "grdkit"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("grdkit.") and name != "grdkit.cli":
            mod = name
    return mod


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("missing command")
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda m, c, f, l, file=None, line=None: print(
                f"warning: {m}", file=sys.stderr)
            return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as exc:
        print(f"error [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except GRDError as exc:
        print(f"error [{_origin(exc)}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
