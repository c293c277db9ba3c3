"""Command-line entry point ``rie``.

Exit codes: 0 success, 2 I/O error, 3 validation failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ExperimentConfig, builtin_config, builtin_names, resolve_threads, run_experiment
from .errors import (
    ConfigError,
    ConvergenceError,
    NumericInputError,
    RangeError,
    RIEError,
    SchemaError,
)
from .estimators import gaussian_rie, general_rie
from .freeprob import NoiseFamily
from .matrixio import read_matrix, write_matrix
from .models import EnsembleSpec
from .plotting import chart_from_csv
from .spectra import EmpiricalSpectrum

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> np.ndarray:
    try:
        return read_matrix(path)
    except NumericInputError as exc:
        raise _Fail(EXIT_NUMERIC, str(exc)) from exc
    except (OSError, ValueError, UnicodeDecodeError) as exc:
        raise _Fail(EXIT_IO, f"cannot read {path}: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _csv_list(kind):
    def parse(text: str):
        try:
            return tuple(kind(tok) for tok in text.split(",") if tok.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from exc
    return parse


def _noise_family(args) -> NoiseFamily:
    if args.noise == "gaussian":
        return NoiseFamily.gaussian()
    if args.noise == "uniform":
        return NoiseFamily.uniform_spectrum()
    if args.noise == "rank1sum":
        if args.c is None:
            raise _Fail(EXIT_VALIDATION, "--noise rank1sum requires --c")
        return NoiseFamily.rank_one_sum(args.c)
    if args.noise_sample is None:
        raise _Fail(EXIT_VALIDATION, "--noise empirical requires --noise-sample")
    return NoiseFamily.empirical(EmpiricalSpectrum.from_matrix(_read(args.noise_sample)))


def cmd_denoise(args) -> int:
    Y = _read(args.input)
    if args.formula == "gaussian" and args.noise != "gaussian":
        raise _Fail(EXIT_VALIDATION, "--formula gaussian is only valid with --noise gaussian")
    family = _noise_family(args)
    if args.formula == "gaussian":
        result = gaussian_rie(Y, args.snr, epsilon=args.eps)
    else:
        result = general_rie(Y, family, args.snr, epsilon=args.eps)
    bad = np.flatnonzero(~np.isfinite(result.xis))
    if bad.size:
        raise _Fail(EXIT_NUMERIC, f"non-finite singular values at indices {bad.tolist()}")
    try:
        write_matrix(args.output, result.estimate)
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot write {args.output}: {exc}") from exc
    print(result.to_json())
    return EXIT_OK


def _load_config(args) -> ExperimentConfig:
    if (args.config is None) == (args.preset is None):
        raise _Fail(EXIT_VALIDATION, "give exactly one of --config or --preset")
    if args.preset is not None:
        cfg = builtin_config(args.preset)
    else:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise _Fail(EXIT_IO, f"cannot read {args.config}: {exc}") from exc
        cfg = ExperimentConfig.from_json(text)
    if args.trials is not None:
        cfg = replace(cfg, n_trials=args.trials)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write_result(result, out: str, svg: str | None) -> None:
    _write_text(out, result.to_csv())
    _write_text(out + ".meta.json", result.metadata_json())
    if svg:
        _write_text(svg, chart_from_csv(result.to_csv()))


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    threads = resolve_threads(args.threads)
    result = run_experiment(cfg, threads=threads, timing=args.timing)
    _write_result(result, args.out, args.svg or cfg.output_svg)
    print(f"wrote {len(result.rows)} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_check_theorem2(args) -> int:
    n_max = max(args.n_grid)
    cfg = ExperimentConfig(
        experiment="fig3", n_rows=n_max, n_cols=n_max, lambda_grid=(1.0,),
        signal=EnsembleSpec("gaussian_iid", n_max, n_max, args.seed),
        noise=EnsembleSpec("gaussian_iid", n_max, n_max, args.seed),
        n_trials=args.seeds, master_seed=args.seed, estimators=(),
        n_grid=tuple(args.n_grid), alpha_grid=tuple(args.alpha0),
    )
    result = run_experiment(cfg, threads=resolve_threads(args.threads))
    _write_result(result, args.out, args.svg)
    return EXIT_OK


def cmd_overlap(args) -> int:
    n = args.n
    m = int(round(n / args.alpha))
    cfg = ExperimentConfig(
        experiment="overlap", n_rows=n, n_cols=m, lambda_grid=(args.snr,),
        signal=EnsembleSpec("gaussian_iid", n, m, args.seed),
        noise=EnsembleSpec("gaussian_iid", n, m, args.seed),
        n_trials=args.trials, master_seed=args.seed, estimators=(), n_bins=args.bins,
    )
    result = run_experiment(cfg, threads=1)
    _write_result(result, args.out, args.svg)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        text = Path(args.input).read_text(encoding="utf-8")
    except OSError as exc:
        raise _Fail(EXIT_IO, f"cannot read {args.input}: {exc}") from exc
    _write_text(args.out, chart_from_csv(text, logx=args.logx or None, logy=args.logy or None))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rie", description="Rotational invariant estimators for rectangular matrices.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("denoise", help="denoise a matrix Y = sqrt(snr) S + Z")
    d.add_argument("--input", required=True, help="observed matrix (CSV or binary)")
    d.add_argument("--noise", required=True, choices=("gaussian", "uniform", "rank1sum", "empirical"))
    d.add_argument("--c", type=float, help="rank-one-sum ratio L/N")
    d.add_argument("--noise-sample", help="noise matrix whose spectrum defines the empirical family")
    d.add_argument("--snr", type=float, required=True)
    d.add_argument("--eps", type=float, default=0.5, help="smoothing exponent, eta = N^-eps")
    d.add_argument("--formula", choices=("general", "gaussian"), default="general",
                   help="'gaussian' uses the closed form that needs no R-transform")
    d.add_argument("--output", required=True)
    d.set_defaults(func=cmd_denoise)

    b = sub.add_parser("bench", help="run a seeded experiment")
    b.add_argument("--config")
    b.add_argument("--preset", choices=builtin_names())
    b.add_argument("--out", required=True)
    b.add_argument("--svg")
    b.add_argument("--seed", type=int)
    b.add_argument("--trials", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--timing", action="store_true", help="fill wall_ms (breaks byte-identical reruns)")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("check-theorem2", help="trace-relation error sweep over N")
    t.add_argument("--n-grid", type=_csv_list(int), default=(100, 200, 400, 600, 800, 1000))
    t.add_argument("--alpha0", type=_csv_list(float), default=(1.0, 0.5))
    t.add_argument("--seeds", type=int, default=100)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--svg")
    t.set_defaults(func=cmd_check_theorem2)

    o = sub.add_parser("overlap", help="Monte-Carlo vs asymptotic singular vector overlap")
    o.add_argument("--alpha", type=float, default=0.25)
    o.add_argument("--n", type=int, default=1000)
    o.add_argument("--trials", type=int, default=1000)
    o.add_argument("--snr", type=float, default=1.0)
    o.add_argument("--bins", type=int, default=40)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.add_argument("--svg")
    o.set_defaults(func=cmd_overlap)

    pl = sub.add_parser("plot", help="render a result CSV as SVG")
    pl.add_argument("--input", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--logx", action="store_true")
    pl.add_argument("--logy", action="store_true")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"rie: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print("rie: invalid configuration", file=sys.stderr)
        for path, msg in exc.problems:
            print(f"  {path}: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericInputError, ConvergenceError, RangeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"rie: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, RIEError) as exc:
        print(f"rie: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
