"""Singular-value utilities and smoothed spectral transforms.

The symmetrized empirical measure of a matrix ``Y`` with singular values
``gamma_1 >= ... >= gamma_N`` puts mass ``1/(2N)`` on each of ``+gamma_k`` and
``-gamma_k``.  Its Stieltjes transform off the real axis is the Cauchy-kernel
smoothed estimate of the limiting law; the Plemelj limits at ``x - i*eta``
give density and Hilbert transform estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, NumericInputError

__all__ = [
    "EmpiricalSpectrum",
    "SpectralFunction",
    "SvdResult",
    "canonicalize",
    "default_eta",
    "hermitize",
    "plemelj_limits",
    "resolvent_trace",
    "stieltjes",
    "svd_decompose",
]

# rows of z evaluated per block; bounds the (block, N) temporary
_BLOCK = 256


def _as_finite_matrix(Y) -> np.ndarray:
    a = np.asarray(Y, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError("matrix is empty")
    if not np.all(np.isfinite(a)):
        raise NumericInputError("matrix contains non-finite entries")
    return a


def default_eta(n_rows: int, epsilon: float = 0.5) -> float:
    """Imaginary offset ``N**-epsilon`` used by the estimators."""
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    return float(n_rows) ** (-epsilon)


@dataclass(frozen=True, eq=False)
class EmpiricalSpectrum:
    """Singular values of an ``n_rows x n_cols`` matrix with ``n_rows <= n_cols``.

    Values are stored in descending order as a read-only float array.
    """

    values: np.ndarray
    n_rows: int
    n_cols: int

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if self.n_rows < 1 or self.n_cols < 1:
            raise DimensionError("dimensions must be positive")
        if self.n_rows > self.n_cols:
            raise DimensionError(
                f"spectrum must be canonical (n_rows <= n_cols), got {self.n_rows}x{self.n_cols}"
            )
        if vals.size != self.n_rows:
            raise DimensionError(f"expected {self.n_rows} singular values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise NumericInputError("singular values must be finite")
        if np.any(vals < 0):
            raise DomainError("singular values must be nonnegative")
        vals = np.sort(vals)[::-1].copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, values, n_cols: int | None = None) -> "EmpiricalSpectrum":
        vals = np.asarray(values, dtype=np.float64).ravel()
        return cls(vals, vals.size, vals.size if n_cols is None else n_cols)

    @classmethod
    def from_matrix(cls, Y) -> "EmpiricalSpectrum":
        a, _ = canonicalize(Y)
        vals = scipy.linalg.svdvals(a, check_finite=False)
        return cls(vals, a.shape[0], a.shape[1])

    @property
    def alpha(self) -> float:
        return self.n_rows / self.n_cols

    @property
    def symmetrized(self) -> np.ndarray:
        return np.concatenate([self.values, -self.values])

    def __len__(self) -> int:
        return self.n_rows


@dataclass(frozen=True, eq=False)
class SvdResult:
    """SVD ``Y = U [diag(gamma) | 0] V^T``.

    ``right_vectors`` is ``M x M`` for a full decomposition and ``M x N`` for a
    thin one; the estimators only ever touch its first ``N`` columns.
    """

    left_vectors: np.ndarray
    singular_values: EmpiricalSpectrum
    right_vectors: np.ndarray

    @property
    def gammas(self) -> np.ndarray:
        return self.singular_values.values

    @property
    def thin_right(self) -> np.ndarray:
        return self.right_vectors[:, : self.singular_values.n_rows]

    def compose(self, diagonal) -> np.ndarray:
        """Return ``sum_j d_j u_j v_j^T`` for a length-N diagonal ``d``."""
        d = np.asarray(diagonal, dtype=np.float64)
        return (self.left_vectors * d) @ self.thin_right.T


def canonicalize(Y) -> tuple[np.ndarray, bool]:
    """Return ``(Y, False)`` if ``Y`` has no more rows than columns, else ``(Y.T, True)``."""
    a = np.asarray(Y, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise DimensionError(f"expected a nonempty 2-D matrix, got shape {a.shape}")
    if a.shape[0] > a.shape[1]:
        return a.T, True
    return a, False


def svd_decompose(Y, full_matrices: bool = True) -> SvdResult:
    """SVD of a canonical matrix with descending singular values.

    Uses LAPACK ``gesdd`` and falls back to ``gesvd`` if it fails to converge.
    """
    a = _as_finite_matrix(Y)
    n, m = a.shape
    if n > m:
        raise DimensionError(f"matrix must have n_rows <= n_cols, got {n}x{m}; call canonicalize first")
    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=full_matrices, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        u, s, vt = scipy.linalg.svd(a, full_matrices=full_matrices, lapack_driver="gesvd", check_finite=False)
    # gesdd already sorts descending; keep U/V aligned if a backend ever does not
    order = np.argsort(-s, kind="stable")
    if np.any(order != np.arange(n)):
        u, s = u[:, order], s[order]
        vt = np.concatenate([vt[order], vt[n:]]) if full_matrices else vt[order]
    return SvdResult(u, EmpiricalSpectrum(s, n, m), vt.T)


def hermitize(Y) -> np.ndarray:
    """Symmetric block matrix ``[[0, Y], [Y^T, 0]]``.

    Its eigenvalues are ``+-gamma_k`` plus ``M - N`` zeros.
    """
    a = np.asarray(Y, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    n, m = a.shape
    out = np.zeros((n + m, n + m))
    out[:n, n:] = a
    out[n:, :n] = a.T
    return out


def _values_of(spec) -> np.ndarray:
    if isinstance(spec, EmpiricalSpectrum):
        return spec.values
    return np.asarray(spec, dtype=np.float64).ravel()


def resolvent_trace(values, z):
    """``(1/N) sum_k 1/(z^2 - gamma_k^2)``, the normalized trace of ``(z^2 - Y Y^T)^{-1}``."""
    gam2 = _values_of(values) ** 2
    zz = np.asarray(z, dtype=np.complex128)
    flat = zz.ravel()
    out = np.empty(flat.shape, dtype=np.complex128)
    for start in range(0, flat.size, _BLOCK):
        blk = flat[start:start + _BLOCK]
        out[start:start + _BLOCK] = np.mean(1.0 / (blk[:, None] ** 2 - gam2[None, :]), axis=1)
    out = out.reshape(zz.shape)
    return out[()] if out.ndim == 0 else out


def stieltjes(spec, z):
    """Stieltjes transform of the symmetrized empirical measure.

    ``G(z) = (1/2N) sum_k [1/(z - gamma_k) + 1/(z + gamma_k)]``, evaluated
    as ``z * resolvent_trace(z)``.  Accepts scalar or array ``z``.
    """
    zz = np.asarray(z, dtype=np.complex128)
    if np.any(zz.imag == 0):
        raise DomainError("Stieltjes transform requires Im z != 0")
    return zz * resolvent_trace(spec, zz)


def plemelj_limits(spec, x, eta: float):
    """Smoothed ``(density, hilbert)`` of the symmetrized measure at ``x``.

    Evaluates ``G(x - i*eta)`` and returns ``(Im G / pi, Re G / pi)``.
    Note that ``Re G`` itself is ``pi`` times the Hilbert transform.
    """
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta}")
    g = stieltjes(spec, np.asarray(x, dtype=np.float64) - 1j * eta)
    return np.imag(g) / np.pi, np.real(g) / np.pi


@dataclass(frozen=True, eq=False)
class SpectralFunction:
    """Cauchy-kernel smoothed view of a symmetrized spectrum.

    ``support_points`` holds the ``2N`` atoms ``+-gamma_k``, each of mass
    ``1/(2N)``.
    """

    support_points: np.ndarray
    smoothing_eta: float
    _spectrum: EmpiricalSpectrum = field(repr=False)

    @classmethod
    def from_spectrum(cls, spec: EmpiricalSpectrum, eta: float | None = None) -> "SpectralFunction":
        eta = default_eta(spec.n_rows) if eta is None else float(eta)
        if not eta > 0:
            raise DomainError(f"eta must be positive, got {eta}")
        pts = spec.symmetrized
        pts.setflags(write=False)
        return cls(pts, eta, spec)

    def __call__(self, z):
        return stieltjes(self._spectrum, z)

    def density(self, x):
        return plemelj_limits(self._spectrum, x, self.smoothing_eta)[0]

    def hilbert(self, x):
        return plemelj_limits(self._spectrum, x, self.smoothing_eta)[1]
