"""Seeded Monte-Carlo experiments and their CSV reports.

Every trial draws its matrices from its own ``(master_seed, trial, role)``
stream and writes into a fixed slot, so results do not depend on how many
threads run the trials.  Within a trial the same ``S`` and ``Z`` are reused
for every ``lambda`` of the grid.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.stats

from . import __version__
from .errors import ConfigError, DomainError, RIEError
from .estimators import DenoisingInstance, gaussian_shrinkage, general_shrinkage, mse, oracle_overlaps
from .freeprob import NoiseFamily
from .models import EnsembleSpec, gaussian_iid, stream
from .spectra import default_eta, svd_decompose
from .theory import (
    DensityGrid,
    bin_overlaps,
    overlap_samples,
    overlap_theoretical,
    trace_functions_GL,
    trace_relation_rhs,
)

__all__ = [
    "EXPERIMENTS",
    "ESTIMATORS",
    "MSE_COLUMNS",
    "THEOREM2_COLUMNS",
    "OVERLAP_COLUMNS",
    "ExperimentConfig",
    "ExperimentResult",
    "builtin_config",
    "builtin_names",
    "noise_family_for",
    "resolve_threads",
    "run_experiment",
    "run_overlap",
    "run_theorem2",
]

EXPERIMENTS = ("fig1a", "fig1b", "fig3", "fig4", "fig5", "fig6", "fig7", "overlap", "custom")
ESTIMATORS = ("oracle", "rie", "gaussian_rie")
MSE_COLUMNS = ("experiment", "lambda", "N", "M", "estimator", "mean_mse", "ci95",
               "rel_err_pct", "n_trials", "seed", "wall_ms")
THEOREM2_COLUMNS = ("experiment", "N", "M", "alpha0", "mean_abs_eps", "ci95",
                    "mean_rel_err", "n_trials", "seed")
OVERLAP_COLUMNS = ("gamma", "overlap", "stderr", "n_trials", "theory")

_NOISE_KINDS = ("gaussian_iid", "uniform_spectrum_noise", "rank_one_sum")


def resolve_threads(requested: int | None = None) -> int:
    """Thread count: ``RIE_THREADS`` wins, then ``requested``, then the logical core count."""
    env = os.environ.get("RIE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError([("RIE_THREADS", f"not an integer: {env!r}")]) from exc
    else:
        n = requested if requested is not None else (os.cpu_count() or 1)
    if n < 1:
        raise ConfigError([("threads", f"must be >= 1, got {n}")])
    return n


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``epsilon_grid``, when given, runs the Gaussian-formula RIE once per
    entry (estimator names ``gaussian_rie(eps=..)``).  ``normalize_mse``
    divides every MSE by the mean squared signal norm ``(1 - p)`` of a
    Bernoulli-spectrum signal.  ``n_grid`` and ``alpha_grid`` apply to the
    trace-relation sweep; ``n_bins`` to overlap runs.
    """

    experiment: str
    n_rows: int
    n_cols: int
    lambda_grid: tuple[float, ...]
    signal: EnsembleSpec
    noise: EnsembleSpec
    n_trials: int = 10
    epsilon: float = 0.5
    master_seed: int = 0
    estimators: tuple[str, ...] = ("oracle", "rie")
    epsilon_grid: tuple[float, ...] = ()
    normalize_mse: bool = False
    n_grid: tuple[int, ...] = ()
    alpha_grid: tuple[float, ...] = ()
    n_bins: int = 40
    output_csv: str | None = None
    output_svg: str | None = None

    def __post_init__(self):
        for name in ("lambda_grid", "estimators", "epsilon_grid", "n_grid", "alpha_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        problems: list[tuple[str, str]] = []
        if self.experiment not in EXPERIMENTS:
            problems.append(("experiment", f"must be one of {EXPERIMENTS}"))
        if not (isinstance(self.n_rows, int) and isinstance(self.n_cols, int)) or self.n_rows < 1 or self.n_cols < 1:
            problems.append(("dims", "N and M must be positive integers"))
        elif self.n_rows > self.n_cols:
            problems.append(("dims", f"need N <= M, got {self.n_rows}x{self.n_cols}"))
        if not isinstance(self.n_trials, int) or self.n_trials < 1:
            problems.append(("n_trials", "must be an integer >= 1"))
        if not self.lambda_grid:
            problems.append(("lambda_grid", "must not be empty"))
        for i, lam in enumerate(self.lambda_grid):
            if not (isinstance(lam, (int, float)) and np.isfinite(lam) and lam > 0):
                problems.append((f"lambda_grid[{i}]", f"must be positive, got {lam!r}"))
        for name, eps in [("epsilon", self.epsilon)] + [(f"epsilon_grid[{i}]", e) for i, e in enumerate(self.epsilon_grid)]:
            if not 0 < eps < 1:
                problems.append((name, f"must lie in (0, 1), got {eps}"))
        if not 0 <= int(self.master_seed) < 2**64:
            problems.append(("master_seed", "must be a 64-bit unsigned integer"))
        for i, est in enumerate(self.estimators):
            if est not in ESTIMATORS:
                problems.append((f"estimators[{i}]", f"unknown estimator {est!r}"))
        for role in ("signal", "noise"):
            ens = getattr(self, role)
            if not isinstance(ens, EnsembleSpec):
                problems.append((f"ensembles.{role}", "must be an EnsembleSpec"))
                continue
            if (ens.n_rows, ens.n_cols) != (self.n_rows, self.n_cols):
                problems.append((f"ensembles.{role}.dims", f"{ens.n_rows}x{ens.n_cols} does not match {self.n_rows}x{self.n_cols}"))
        if isinstance(self.noise, EnsembleSpec) and self.noise.kind not in _NOISE_KINDS:
            problems.append(("ensembles.noise.kind", f"must be one of {_NOISE_KINDS}"))
        if isinstance(self.noise, EnsembleSpec) and "gaussian_rie" in self.estimators and self.noise.kind != "gaussian_iid":
            problems.append(("estimators", "gaussian_rie requires gaussian_iid noise"))
        if self.epsilon_grid and isinstance(self.noise, EnsembleSpec) and self.noise.kind != "gaussian_iid":
            problems.append(("epsilon_grid", "the epsilon sweep uses the Gaussian formula and requires gaussian_iid noise"))
        if self.normalize_mse and isinstance(self.signal, EnsembleSpec) and self.signal.kind != "bernoulli_spectrum_signal":
            problems.append(("normalize_mse", "only defined for bernoulli_spectrum_signal"))
        for i, n in enumerate(self.n_grid):
            if not isinstance(n, int) or n < 2:
                problems.append((f"n_grid[{i}]", "must be an integer >= 2"))
        for i, a in enumerate(self.alpha_grid):
            if not 0 < a <= 1:
                problems.append((f"alpha_grid[{i}]", "must lie in (0, 1]"))
        if self.n_bins < 2:
            problems.append(("n_bins", "must be >= 2"))
        if problems:
            raise ConfigError(problems)

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_grid"] = [float(x) for x in self.lambda_grid]
        for name in ("estimators", "epsilon_grid", "n_grid", "alpha_grid"):
            d[name] = list(getattr(self, name))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        problems = []
        for role in ("signal", "noise"):
            try:
                data[role] = EnsembleSpec.from_dict(data[role])
            except KeyError:
                problems.append((f"ensembles.{role}", "missing"))
            except (TypeError, RIEError) as exc:
                problems.append((f"ensembles.{role}", str(exc)))
        if problems:
            raise ConfigError(problems)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError([("<root>", str(exc))]) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("<root>", f"invalid JSON: {exc}")]) from exc
        if not isinstance(data, dict):
            raise ConfigError([("<root>", "expected a JSON object")])
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring output paths."""
        d = self.to_dict()
        d.pop("output_csv")
        d.pop("output_svg")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, master_seed=int(seed),
                       signal=replace(self.signal, seed=int(seed)), noise=replace(self.noise, seed=int(seed)))


@dataclass(frozen=True)
class ExperimentResult:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    metadata: dict = field(default_factory=dict)

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def metadata_json(self) -> str:
        return json.dumps(self.metadata, sort_keys=True, indent=2)

    def write(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(path + ".meta.json", "w") as fh:
            fh.write(self.metadata_json())


def noise_family_for(spec: EnsembleSpec) -> NoiseFamily:
    """Analytic noise family matching a noise ensemble."""
    if spec.kind == "gaussian_iid":
        return NoiseFamily.gaussian()
    if spec.kind == "uniform_spectrum_noise":
        return NoiseFamily.uniform_spectrum()
    if spec.kind == "rank_one_sum":
        return NoiseFamily.rank_one_sum(spec.c)
    raise DomainError(f"{spec.kind} is not a noise ensemble")


def _ci95(samples: np.ndarray) -> float:
    n = samples.size
    if n < 2:
        return 0.0
    return float(scipy.stats.t.ppf(0.975, n - 1) * np.std(samples, ddof=1) / np.sqrt(n))


def _estimator_names(cfg: ExperimentConfig) -> list[str]:
    names = list(cfg.estimators)
    names += [f"gaussian_rie(eps={e:g})" for e in cfg.epsilon_grid]
    return names


def _mse_trial(cfg: ExperimentConfig, trial: int, family: NoiseFamily) -> np.ndarray:
    """MSE of every estimator at every lambda for one trial, shape ``(n_lambda, n_est)``."""
    S = cfg.signal.generate(trial, "signal")
    Z = cfg.noise.generate(trial, "noise")
    scale = 1.0
    if cfg.normalize_mse:
        scale = 1.0 - cfg.signal.p
    names = _estimator_names(cfg)
    out = np.empty((len(cfg.lambda_grid), len(names)))
    n = cfg.n_rows
    eta = default_eta(n, cfg.epsilon)
    for i, lam in enumerate(cfg.lambda_grid):
        inst = DenoisingInstance(S, Z, lam)
        svd = svd_decompose(inst.observation, full_matrices=False)
        spec = svd.singular_values
        for k, name in enumerate(names):
            if name == "oracle":
                xis = oracle_overlaps(svd, S)
            elif name == "rie":
                xis = general_shrinkage(spec.values, spec, family, lam, eta)[0]
            elif name == "gaussian_rie":
                xis = gaussian_shrinkage(spec.values, spec, lam, eta)
            else:
                eps = cfg.epsilon_grid[k - len(cfg.estimators)]
                xis = gaussian_shrinkage(spec.values, spec, lam, default_eta(n, eps))
            out[i, k] = mse(S, svd.compose(xis)) / scale
    return out


def _map_trials(fn, n: int, threads: int) -> list:
    if threads == 1 or n == 1:
        return [fn(t) for t in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
        return list(pool.map(fn, range(n)))


def _metadata(cfg: ExperimentConfig, **extra) -> dict:
    meta = {
        "experiment": cfg.experiment,
        "config_hash": cfg.config_hash(),
        "master_seed": int(cfg.master_seed),
        "code_version": __version__,
        "config": cfg.to_dict(),
    }
    meta.update(extra)
    return meta


def run_experiment(cfg: ExperimentConfig, threads: int | None = 1, timing: bool = False) -> ExperimentResult:
    """Run an experiment; dispatches on ``cfg.experiment``.

    MSE experiments report one row per ``(lambda, estimator)``;
    ``fig3`` runs :func:`run_theorem2` and ``fig7``/``overlap`` run
    :func:`run_overlap`.  ``wall_ms`` is filled only when ``timing`` is set,
    since it would otherwise break byte-identical reruns.
    """
    threads = resolve_threads(threads)
    if cfg.experiment == "fig3":
        return run_theorem2(cfg, threads)
    if cfg.experiment in ("fig7", "overlap"):
        return run_overlap(cfg)
    family = noise_family_for(cfg.noise)
    names = _estimator_names(cfg)
    start = time.perf_counter()
    slots = _map_trials(lambda t: _mse_trial(cfg, t, family), cfg.n_trials, threads)
    wall_ms = round((time.perf_counter() - start) * 1000.0) if timing else 0
    data = np.stack(slots)  # (trial, lambda, estimator)
    means = data.mean(axis=0)
    rows = []
    oracle_col = names.index("oracle") if "oracle" in names else None
    for i, lam in enumerate(cfg.lambda_grid):
        for k, name in enumerate(names):
            rel = ""
            if oracle_col is not None:
                ref = means[i, oracle_col]
                rel = float(100.0 * (means[i, k] - ref) / ref) if ref > 0 else float("nan")
            rows.append((cfg.experiment, float(lam), cfg.n_rows, cfg.n_cols, name, float(means[i, k]),
                         _ci95(data[:, i, k]), rel, cfg.n_trials, int(cfg.master_seed), wall_ms))
    notes = {}
    if cfg.signal.kind.startswith("bernoulli"):
        notes["signal_sampling"] = "signal resampled every trial"
    if cfg.normalize_mse:
        notes["mse_normalization"] = "divided by 1 - p"
    return ExperimentResult(MSE_COLUMNS, tuple(rows), _metadata(cfg, **notes))


def _theorem2_trial(n: int, alpha0: float, seed: int, trial: int) -> tuple[float, float]:
    m = int(round(n / alpha0))
    S = gaussian_iid(n, m, stream(seed, trial, "signal"))
    Z = gaussian_iid(n, m, stream(seed, trial, "noise"))
    inst = DenoisingInstance(S, Z, 1.0)
    z = 1.0 + 1j / np.sqrt(n)
    G, L = trace_functions_GL(inst, z)
    eps = L - trace_relation_rhs(G, z, n / m, 1.0)
    return abs(eps), abs(eps) / abs(L)


def run_theorem2(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Trace-relation residual at ``z = 1 + i/sqrt(N)`` for every ``(N, alpha0)``, snr = 1."""
    n_grid = cfg.n_grid or (cfg.n_rows,)
    alphas = cfg.alpha_grid or (cfg.n_rows / cfg.n_cols,)
    jobs = [(n, a, t) for a in alphas for n in n_grid for t in range(cfg.n_trials)]
    vals = _map_trials(lambda i: _theorem2_trial(jobs[i][0], jobs[i][1], cfg.master_seed, jobs[i][2]), len(jobs), threads)
    vals = np.asarray(vals).reshape(len(alphas), len(n_grid), cfg.n_trials, 2)
    rows = []
    for ia, a in enumerate(alphas):
        for jn, n in enumerate(n_grid):
            eps = vals[ia, jn, :, 0]
            rows.append((cfg.experiment, int(n), int(round(n / a)), float(a), float(eps.mean()), _ci95(eps),
                         float(vals[ia, jn, :, 1].mean()), cfg.n_trials, int(cfg.master_seed)))
    return ExperimentResult(THEOREM2_COLUMNS, tuple(rows), _metadata(cfg))


def run_overlap(cfg: ExperimentConfig, sigma_index: int | None = None) -> ExperimentResult:
    """Binned Monte-Carlo overlap with a fixed signal, plus the asymptotic curve.

    The tracked signal singular value is the median one unless
    ``sigma_index`` is given.  Only the first ``lambda_grid`` entry is used.
    """
    lam = float(cfg.lambda_grid[0])
    S = cfg.signal.generate(0, "signal")
    n, m = S.shape
    sig = svd_decompose(S, full_matrices=False).gammas
    k = n // 2 if sigma_index is None else int(sigma_index)
    gammas, values = overlap_samples(S, k, cfg.noise.sample, cfg.n_trials, cfg.master_seed, lam)
    curve = bin_overlaps(gammas, values, cfg.n_bins, sigma=float(sig[k]))
    alpha = n / m
    family = noise_family_for(cfg.noise)
    if cfg.noise.kind == "gaussian_iid" and cfg.signal.kind == "gaussian_iid":
        grid = DensityGrid.analytic_mp(alpha, 1.0 + lam)
    else:
        grid = DensityGrid.empirical(svd_decompose(np.sqrt(lam) * S + cfg.noise.generate(0, "noise"),
                                                   full_matrices=False).singular_values)
    theory = overlap_theoretical(curve.gamma, np.sqrt(lam) * curve.sigma, grid, family, alpha)
    rows = tuple(
        (float(g), float(o), float(s), curve.n_trials, float(t))
        for g, o, s, t in zip(curve.gamma, curve.overlap, curve.stderr, theory)
    )
    return ExperimentResult(OVERLAP_COLUMNS, rows,
                            _metadata(cfg, sigma_index=k, sigma=float(sig[k]), theory_grid=grid.source))


# --- built-in presets --------------------------------------------------------

def _cfg(name: str, n: int, m: int, lambdas, signal: dict, noise: dict, **kw) -> ExperimentConfig:
    seed = kw.get("master_seed", 0)
    return ExperimentConfig(
        experiment=name, n_rows=n, n_cols=m, lambda_grid=tuple(lambdas),
        signal=EnsembleSpec(n_rows=n, n_cols=m, seed=seed, **signal),
        noise=EnsembleSpec(n_rows=n, n_cols=m, seed=seed, **noise),
        **kw,
    )


_GAUSS = {"kind": "gaussian_iid"}
_LAMBDAS = (0.1, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)

_BUILTINS = {
    "fig1a": lambda: _cfg("fig1a", 1000, 1000, _LAMBDAS, _GAUSS, {"kind": "uniform_spectrum_noise"}),
    "fig1b": lambda: _cfg("fig1b", 1000, 2000, _LAMBDAS, _GAUSS, {"kind": "rank_one_sum", "c": 1.0}),
    "fig1b_c0.5": lambda: _cfg("fig1b", 1000, 2000, _LAMBDAS, _GAUSS, {"kind": "rank_one_sum", "c": 0.5}),
    "fig3": lambda: _cfg("fig3", 1000, 1000, (1.0,), _GAUSS, _GAUSS, n_trials=100,
                         n_grid=(100, 200, 400, 600, 800, 1000), alpha_grid=(1.0, 0.5), estimators=()),
    "fig4": lambda: _cfg("fig4", 1000, 1000, (0.5, 1.0, 2.0, 3.0, 4.0, 5.0), _GAUSS, _GAUSS,
                         estimators=("oracle", "rie", "gaussian_rie")),
    "fig4_alpha0.5": lambda: _cfg("fig4", 1000, 2000, (0.5, 1.0, 2.0, 3.0, 4.0, 5.0), _GAUSS, _GAUSS,
                                  estimators=("oracle", "rie", "gaussian_rie")),
    "fig5": lambda: _cfg("fig5", 1000, 2000, _LAMBDAS, {"kind": "bernoulli_spectrum_signal", "p": 0.2}, _GAUSS,
                         normalize_mse=True),
    "fig5_p0.9": lambda: _cfg("fig5", 1000, 2000, _LAMBDAS, {"kind": "bernoulli_spectrum_signal", "p": 0.9}, _GAUSS,
                              normalize_mse=True),
    "fig6": lambda: _cfg("fig6", 1000, 2000, (2.0,), _GAUSS, _GAUSS, estimators=("oracle",),
                         epsilon_grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)),
    "fig7": lambda: _cfg("fig7", 1000, 4000, (1.0,), _GAUSS, _GAUSS, n_trials=1000, estimators=()),
    "nri": lambda: _cfg("custom", 1000, 2000, _LAMBDAS, {"kind": "bernoulli_rademacher_signal", "p": 0.5}, _GAUSS,
                        estimators=("oracle", "rie", "gaussian_rie")),
    "nri_rank1sum": lambda: _cfg("custom", 1000, 2000, _LAMBDAS, {"kind": "bernoulli_rademacher_signal", "p": 0.5},
                                 {"kind": "rank_one_sum", "c": 1.0}),
}


def builtin_names() -> tuple[str, ...]:
    return tuple(_BUILTINS)


def builtin_config(name: str, **overrides) -> ExperimentConfig:
    """Preset configuration; ``overrides`` replace top-level fields.

    Changing ``n_rows``/``n_cols`` resizes both ensembles, and changing
    ``master_seed`` reseeds them.
    """
    try:
        cfg = _BUILTINS[name]()
    except KeyError:
        raise ConfigError([("experiment", f"unknown preset {name!r}; choose from {builtin_names()}")]) from None
    seed = overrides.pop("master_seed", None)
    if "n_rows" in overrides or "n_cols" in overrides:
        n = overrides.pop("n_rows", cfg.n_rows)
        m = overrides.pop("n_cols", cfg.n_cols)
        cfg = replace(cfg, n_rows=n, n_cols=m, signal=replace(cfg.signal, n_rows=n, n_cols=m),
                      noise=replace(cfg.noise, n_rows=n, n_cols=m))
    if overrides:
        cfg = replace(cfg, **overrides)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg
