"""Command line entry point: ``tgp fit | sample | eval | plotdata``.

Models are fitted on centered data by default; the offset is stored in
the model file and added back to sampled points, subtracted from
evaluation data and applied to plot-grid coordinates, so every file the
tool reads or writes is in the original data coordinates.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict

import numpy as np

from .data import ingest
from .errors import ConfigError, DataError, TgpError
from .evaluation import KdeModel, random_projection_eval
from .learn import fit_fd, fit_fvpd, fit_map, fit_ncfd
from .model import Hyperparams, TgpModel, default_hyperparams, empirical_base
from .modelfile import load_model, save_model
from .rff import frequency_covariance, sample_basis
from .sampling import draw_weighted, resample, write_samples
from .solvers import SolverOptions
from .suffstats import NoiseGrid, collect, default_threads

ALGORITHMS = ("map", "fd", "ncfd", "fvpd")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _data_options(p):
    p.add_argument("--delimiter", default=",", help="field separator (default ',')")
    hdr = p.add_mutually_exclusive_group()
    hdr.add_argument("--header", dest="header", action="store_true", default=None,
                     help="first line holds column names")
    hdr.add_argument("--no-header", dest="header", action="store_false",
                     help="first line is data")
    p.add_argument("--max-rows", type=_positive_int, default=None)


def _hyper_options(p):
    p.add_argument("--gamma", type=float, default=None, help="kernel width (Scott's rule)")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="prior precision (0.1)")
    p.add_argument("--S", type=int, default=None, help="number of random features (1000)")
    p.add_argument("--sigma-max", type=float, default=None,
                   help="largest noise level (sqrt(tr V) / d)")
    p.add_argument("--H", type=int, default=None, help="number of noise levels (10)")
    p.add_argument("--eta", type=float, default=None, help="tempering (1 / gamma^2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgp", description="GP-tilted density estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a model file")
    p.add_argument("data")
    p.add_argument("-o", "--out", required=True, help="model file to write")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="fd")
    _hyper_options(p)
    p.add_argument("--seed", type=int, default=0, help="seed for the random features")
    p.add_argument("--identity-frequencies", action="store_true",
                   help="draw frequencies from N(0, I) instead of N(0, d Sigma / tr Sigma)")
    p.add_argument("--no-center", dest="center", action="store_false",
                   help="fit on the raw coordinates")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads for the data pass (env TGP_THREADS, default 1)")
    p.add_argument("--solver", choices=("auto", "direct", "cg"), default="auto")
    p.add_argument("--cg-tol", type=float, default=1e-8)
    p.add_argument("--iters", type=_positive_int, default=10_000, help="MAP iterations")
    p.add_argument("--mc-samples", type=_positive_int, default=100_000,
                   help="MAP Monte Carlo sample size")
    p.add_argument("--step", type=float, default=None, help="MAP step size (1 / (N + lambda))")
    _data_options(p)

    p = sub.add_parser("sample", help="draw points from a fitted model")
    p.add_argument("model")
    p.add_argument("-k", "--count", type=int, required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-s", type=_positive_int, default=250_000,
                   help="base draws behind the importance weights")
    p.add_argument("--weighted", action="store_true",
                   help="write the weighted base draws (last column = weight) instead")

    p = sub.add_parser("eval", help="sliced KS / Wasserstein report against data")
    p.add_argument("model", nargs="?", help="model file (omit with --kde)")
    p.add_argument("--data", required=True, help="data to compare against")
    p.add_argument("-o", "--out", required=True, help="report file to write")
    p.add_argument("--kde", choices=("exact", "rff"), default=None,
                   help="evaluate a kernel density baseline instead of a model")
    p.add_argument("--train", default=None, help="training data for --kde")
    p.add_argument("--gamma", type=float, default=None, help="KDE width (Scott's rule)")
    p.add_argument("--S", type=int, default=1000, help="features for --kde rff")
    p.add_argument("--directions", type=_positive_int, default=500)
    p.add_argument("--grid-points", type=int, default=10_000)
    p.add_argument("--n-s", type=_positive_int, default=250_000)
    p.add_argument("--seed", type=int, default=0)
    _data_options(p)

    p = sub.add_parser("plotdata", help="log-density on a 2D grid")
    p.add_argument("model")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--bounds", type=float, nargs=4, required=True,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int, nargs=2, default=(100, 100), metavar=("NX", "NY"))
    p.add_argument("--sigma", type=float, default=0.0, help="noise level (NCFD models)")
    return parser


def _log(msg):
    print(msg, file=sys.stderr)


def _hyperparams(args, X) -> Hyperparams:
    overrides = {k: getattr(args, k) for k in ("gamma", "lam", "S", "sigma_max", "H", "eta")}
    return default_hyperparams(X, **{k: v for k, v in overrides.items() if v is not None})


def cmd_fit(args) -> int:
    threads = args.threads if args.threads is not None else default_threads()
    solver = SolverOptions(method=args.solver, tol=args.cg_tol)
    if args.step is not None and args.step <= 0:
        raise ConfigError("step must be positive")
    ds = ingest(args.data, delimiter=args.delimiter, header=args.header,
                center=args.center, max_rows=args.max_rows)
    if ds.rejected:
        _log(f"rejected {ds.rejected} malformed rows")
    X = ds.rows
    hp = _hyperparams(args, X)
    base = empirical_base(X)
    sigma_z = None if args.identity_frequencies else frequency_covariance(base.Sigma)
    basis = sample_basis(X.shape[1], hp.S, hp.gamma, sigma_z, seed=args.seed)

    t0 = time.perf_counter()
    if args.algorithm == "map":
        t_pass = 0.0
        model = fit_map(X, basis, base, lam=hp.lam, step=args.step, iters=args.iters,
                        mc_samples=args.mc_samples, seed=args.seed)
        t_solve = time.perf_counter() - t0
    else:
        grid = NoiseGrid(hp.sigma_max, hp.H) if args.algorithm == "ncfd" else NoiseGrid.zero()
        stats = collect(X, basis, base, grid, threads=threads)
        t_pass = time.perf_counter() - t0
        t1 = time.perf_counter()
        if args.algorithm == "fd":
            model = fit_fd(stats, basis, base, hp.lam, solver)
        elif args.algorithm == "ncfd":
            model = fit_ncfd(stats, basis, base, hp.lam, solver)
        else:
            model = fit_fvpd(stats, basis, base, hp.lam, hp.eta, solver)
        t_solve = time.perf_counter() - t1
    model = model.with_meta(offset=tuple(ds.offset), hyperparams=asdict(hp))
    save_model(model, args.out)
    _log(f"timing pass={t_pass:.3f}s solve={t_solve:.3f}s total={t_pass + t_solve:.3f}s")
    return 0


def _offset(model: TgpModel) -> np.ndarray:
    return np.asarray(model.meta["offset"], dtype=float)


def cmd_sample(args) -> int:
    if args.count < 1:
        raise ConfigError(f"sample count must be positive, got {args.count}")
    model = load_model(args.model)
    ws = draw_weighted(model, args.n_s, seed=args.seed)
    if ws.ess < 100:
        _log(f"warning: low effective sample size {ws.ess:.1f}")
    off = _offset(model)
    if args.weighted:
        write_samples(args.out, ws.points + off, ws.weights)
    else:
        write_samples(args.out, resample(ws, args.count, seed=args.seed) + off)
    return 0


def cmd_eval(args) -> int:
    if args.grid_points < 2:
        raise ConfigError("grid-points must be >= 2")
    if args.kde is None:
        if args.model is None:
            raise ConfigError("give a model file or --kde")
        model = load_model(args.model)
        ds = ingest(args.data, delimiter=args.delimiter, header=args.header,
                    offset=_offset(model), max_rows=args.max_rows)
    else:
        if args.model is not None:
            raise ConfigError("--kde does not take a model file")
        if args.train is None:
            raise ConfigError("--kde needs --train")
        train = ingest(args.train, delimiter=args.delimiter, header=args.header,
                       center=True, max_rows=args.max_rows)
        ds = ingest(args.data, delimiter=args.delimiter, header=args.header,
                    offset=train.offset, max_rows=args.max_rows)
        gamma = args.gamma if args.gamma is not None else default_hyperparams(train.rows).gamma
        base = empirical_base(train.rows)
        metric = frequency_covariance(base.Sigma)
        basis = None
        if args.kde == "rff":
            basis = sample_basis(train.d, args.S, gamma, metric, seed=args.seed)
        model = KdeModel(train.rows, gamma, args.kde, basis, metric=metric)
    if ds.rejected:
        _log(f"rejected {ds.rejected} malformed rows")
    report = random_projection_eval(model, ds.rows, n_directions=args.directions,
                                    grid_points=args.grid_points, n_s=args.n_s, seed=args.seed)
    for w in report.warnings:
        _log(f"warning: {w}")
    report.write(args.out)
    s = report.summary
    _log(f"median KS={s['median_ks']:.4g} median WD={s['median_wd']:.4g}")
    return 0


def cmd_plotdata(args) -> int:
    model = load_model(args.model)
    if model.d != 2:
        raise ConfigError(f"plot data needs a 2D model, this one has d={model.d}")
    nx, ny = args.resolution
    if nx < 2 or ny < 2:
        raise ConfigError("resolution must be at least 2 in each direction")
    x0, x1, y0, y1 = args.bounds
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("bounds must satisfy XMIN < XMAX and YMIN < YMAX")
    grid = model.meta["sigma_grid"]
    if args.sigma != 0 and args.sigma not in grid:
        if not any(abs(args.sigma - s) <= 1e-12 * max(1.0, s) for s in grid):
            raise ConfigError(f"sigma {args.sigma} is not on the model's noise grid "
                              f"{', '.join(repr(s) for s in grid)}")
        args.sigma = min(grid, key=lambda s: abs(s - args.sigma))
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    XX, YY = np.meshgrid(xs, ys)
    pts = np.column_stack([XX.ravel(), YY.ravel()])
    vals = model.log_unnorm_density(pts - _offset(model), args.sigma)
    try:
        with open(args.out, "w") as fh:
            for (x, y), v in zip(pts, vals):
                fh.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")
    except OSError as exc:
        raise DataError(f"cannot write {args.out}: {exc}") from exc
    return 0


COMMANDS = {"fit": cmd_fit, "sample": cmd_sample, "eval": cmd_eval, "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except TgpError as exc:
        _log(f"error: {exc}")
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
