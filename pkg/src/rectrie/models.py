"""Seeded random-matrix ensembles.

Randomness comes from NumPy's ``Philox`` counter-based generator.  A stream is
keyed by ``(master_seed, trial, role)`` through ``SeedSequence`` so that every
trial and every role within a trial draws from its own independent stream,
whatever order (or thread) the trials run in.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "ENSEMBLE_KINDS",
    "ROLE_TAGS",
    "EnsembleSpec",
    "bernoulli_rademacher_signal",
    "bernoulli_spectrum_signal",
    "gaussian_iid",
    "haar_orthogonal",
    "rank_one_sum_noise",
    "stream",
    "uniform_spectrum_noise",
]

ENSEMBLE_KINDS = (
    "gaussian_iid",
    "uniform_spectrum_noise",
    "rank_one_sum",
    "bernoulli_spectrum_signal",
    "bernoulli_rademacher_signal",
)

ROLE_TAGS = {"signal": 1, "noise": 2, "aux": 3}


def stream(master_seed: int, trial: int = 0, role: str | int = "signal") -> np.random.Generator:
    """Independent Philox generator for one ``(seed, trial, role)`` triple."""
    tag = ROLE_TAGS[role] if isinstance(role, str) else int(role)
    seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(trial), tag])
    return np.random.Generator(np.random.Philox(seq))


def _check_dims(*dims: int) -> None:
    for d in dims:
        if int(d) < 1:
            raise DimensionError(f"dimensions must be positive, got {d}")


def haar_orthogonal(n: int, rng: np.random.Generator, n_cols: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR with sign correction.

    With ``n_cols < n`` the first ``n_cols`` columns of a Haar matrix are
    returned (same law, thin QR of an ``n x n_cols`` Gaussian).
    """
    k = n if n_cols is None else n_cols
    _check_dims(n, k)
    if k > n:
        raise DimensionError(f"n_cols = {k} exceeds n = {n}")
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def gaussian_iid(n_rows: int, n_cols: int, rng: np.random.Generator) -> np.ndarray:
    """Entries i.i.d. Normal(0, 1/N) with ``N = n_rows``."""
    _check_dims(n_rows, n_cols)
    return rng.standard_normal((n_rows, n_cols)) / np.sqrt(n_rows)


def uniform_spectrum_noise(n: int, rng: np.random.Generator, lo: float = 0.0, hi: float = 2.0) -> np.ndarray:
    """Square noise ``U diag(r) V^T`` with Haar ``U, V`` and ``r ~ U[lo, hi]``."""
    _check_dims(n)
    r = rng.uniform(lo, hi, size=n)
    u = haar_orthogonal(n, rng)
    v = haar_orthogonal(n, rng)
    return (u * r) @ v.T


def _unit_columns(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, k))
    return x / np.linalg.norm(x, axis=0)


def rank_one_sum_noise(n_rows: int, n_cols: int, n_terms: int, rng: np.random.Generator) -> np.ndarray:
    """``sum_k u_k v_k^T`` with independent uniform unit vectors."""
    _check_dims(n_rows, n_cols)
    if n_terms < 1:
        raise DomainError("rank_one_sum_noise needs at least one term")
    return _unit_columns(n_rows, n_terms, rng) @ _unit_columns(n_cols, n_terms, rng).T


def bernoulli_spectrum_signal(n_rows: int, n_cols: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """``U [diag(sigma), 0] V^T`` with i.i.d. ``sigma_i in {0, 1}``, ``P(0) = p``."""
    _check_dims(n_rows, n_cols)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    n = min(n_rows, n_cols)
    sigma = (rng.random(n) >= p).astype(np.float64)
    u = haar_orthogonal(n_rows, rng, n)
    v = haar_orthogonal(n_cols, rng, n)
    return (u * sigma) @ v.T


def bernoulli_rademacher_signal(n_rows: int, n_cols: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """Entries ``+-1/sqrt(N)`` w.p. ``(1-p)/2`` each and ``0`` w.p. ``p``."""
    _check_dims(n_rows, n_cols)
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    u = rng.random((n_rows, n_cols))
    half = (1.0 - p) / 2.0
    out = np.zeros((n_rows, n_cols))
    out[u < half] = 1.0
    out[(u >= half) & (u < 2 * half)] = -1.0
    return out / np.sqrt(n_rows)


@dataclass(frozen=True)
class EnsembleSpec:
    """Serializable description of one ensemble.

    ``c`` applies to ``rank_one_sum`` (``L = round(c N)`` terms) and ``p`` to
    the two Bernoulli signals.
    """

    kind: str
    n_rows: int
    n_cols: int
    seed: int = 0
    c: float | None = None
    p: float | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise DomainError(f"unknown ensemble kind {self.kind!r}; expected one of {ENSEMBLE_KINDS}")
        _check_dims(self.n_rows, self.n_cols)
        if self.kind == "rank_one_sum" and (self.c is None or not self.c > 0):
            raise DomainError("rank_one_sum requires c > 0")
        if self.kind.startswith("bernoulli") and (self.p is None or not 0.0 <= self.p <= 1.0):
            raise DomainError("Bernoulli ensembles require p in [0, 1]")
        if self.kind == "uniform_spectrum_noise" and self.n_rows != self.n_cols:
            raise DimensionError("uniform_spectrum_noise is square")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        n, m = self.n_rows, self.n_cols
        if self.kind == "gaussian_iid":
            return gaussian_iid(n, m, rng)
        if self.kind == "uniform_spectrum_noise":
            return uniform_spectrum_noise(n, rng)
        if self.kind == "rank_one_sum":
            return rank_one_sum_noise(n, m, max(1, int(round(self.c * n))), rng)
        if self.kind == "bernoulli_spectrum_signal":
            return bernoulli_spectrum_signal(n, m, self.p, rng)
        return bernoulli_rademacher_signal(n, m, self.p, rng)

    def generate(self, trial: int = 0, role: str | int = "signal") -> np.ndarray:
        """Pure function of ``(self, trial, role)``."""
        return self.sample(stream(self.seed, trial, role))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EnsembleSpec":
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleSpec":
        return cls.from_dict(json.loads(text))
