"""Rotational invariant estimators of a rectangular signal.

All estimators keep the singular vectors of the observation ``Y`` and only
replace its singular values:  ``Xi(Y) = sum_j xi_j u_j v_j^T``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceWarning, DimensionError, DomainError, PreconditionError
from .freeprob import NoiseFamily, rect_r_transform
from .spectra import (
    EmpiricalSpectrum,
    SvdResult,
    canonicalize,
    default_eta,
    resolvent_trace,
    stieltjes,
    svd_decompose,
)

__all__ = [
    "DenoisingInstance",
    "ShrinkageResult",
    "exact_xi_prop1",
    "gaussian_rie",
    "gaussian_shrinkage",
    "general_rie",
    "general_shrinkage",
    "mse",
    "oracle_overlaps",
    "oracle_rie",
]

# below this Im G the point is treated as outside the bulk
_IM_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DenoisingInstance:
    """Ground-truth triple with ``Y = sqrt(snr) * S + Z`` built at construction."""

    signal: np.ndarray
    noise: np.ndarray
    snr: float
    observation: np.ndarray = field(init=False)

    def __post_init__(self):
        S = np.asarray(self.signal, dtype=np.float64)
        Z = np.asarray(self.noise, dtype=np.float64)
        if S.ndim != 2 or S.shape != Z.shape:
            raise DimensionError(f"signal {S.shape} and noise {Z.shape} must be equal 2-D shapes")
        if S.shape[0] > S.shape[1]:
            raise DimensionError("instances are stored canonically with n_rows <= n_cols")
        if not self.snr > 0:
            raise DomainError(f"snr must be positive, got {self.snr}")
        object.__setattr__(self, "signal", S)
        object.__setattr__(self, "noise", Z)
        object.__setattr__(self, "observation", np.sqrt(self.snr) * S + Z)

    @property
    def shape(self) -> tuple[int, int]:
        return self.signal.shape

    @property
    def alpha0(self) -> float:
        n, m = self.signal.shape
        return n / m


@dataclass(frozen=True, eq=False)
class ShrinkageResult:
    """Estimated singular values and the assembled matrix estimate.

    ``flags`` lists indices whose value fell back to zero because the
    smoothed density vanished there.  ``estimate`` has the orientation of the
    matrix passed in, while ``xis`` follow the descending singular values.
    """

    xis: np.ndarray
    estimate: np.ndarray
    eta_used: float
    flags: tuple[int, ...] = ()
    svd: SvdResult | None = field(default=None, repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {"xis": [float(x) for x in self.xis], "eta": self.eta_used, "flags": list(self.flags)}
        )


def _decompose(Y) -> tuple[SvdResult, bool]:
    a, transposed = canonicalize(Y)
    return svd_decompose(a, full_matrices=False), transposed


def _assemble(svd: SvdResult, xis: np.ndarray, transposed: bool, eta: float, flags=()) -> ShrinkageResult:
    est = svd.compose(xis)
    return ShrinkageResult(xis, est.T if transposed else est, eta, tuple(int(i) for i in flags), svd)


def _resolve_eta(n_rows: int, eta: float | None, epsilon: float) -> float:
    if eta is None:
        return default_eta(n_rows, epsilon)
    if not eta > 0:
        raise DomainError(f"eta must be positive, got {eta}")
    return float(eta)


def oracle_overlaps(svd: SvdResult, S: np.ndarray) -> np.ndarray:
    """``u_j^T S v_j`` for every singular triplet of ``svd``."""
    return np.sum((svd.left_vectors.T @ S) * svd.thin_right.T, axis=1)


def oracle_rie(instance: DenoisingInstance) -> ShrinkageResult:
    """Class-optimal RIE ``xi_j = u_j^T S v_j`` (needs the hidden signal)."""
    svd = svd_decompose(instance.observation, full_matrices=False)
    return _assemble(svd, oracle_overlaps(svd, instance.signal), False, 0.0)


def general_shrinkage(points, spectrum: EmpiricalSpectrum, noise: NoiseFamily, snr: float, eta: float):
    """Optimal singular value map evaluated at arbitrary ``points``.

    With ``z = x - i eta`` and ``g`` the smoothed Stieltjes transform of the
    symmetrized spectrum,

        xi(x) = Im[z g - C(g/z (1 - a + a z g))] / (sqrt(snr) Im g).

    Returns ``(xis, flags)``; flagged points had ``Im g`` below the floor and
    are set to zero, as are exact zeros.
    """
    x = np.asarray(points, dtype=np.float64)
    alpha = spectrum.alpha
    fam = noise.with_alpha(alpha)
    z = x - 1j * eta
    g = stieltjes(spectrum, z)
    w = (g / z) * (1.0 - alpha + alpha * z * g)
    # complex path is only exercised when Im w != 0; rect_r_transform handles both
    num = np.imag(z * g - rect_r_transform(fam, w))
    den = np.imag(g)
    bad = den < _IM_FLOOR
    xis = np.zeros_like(x)
    ok = ~bad & (x != 0)
    xis[ok] = num[ok] / den[ok] / np.sqrt(snr)
    return xis, np.flatnonzero(bad)


def general_rie(Y, noise: NoiseFamily, snr: float, eta: float | None = None, epsilon: float = 0.5) -> ShrinkageResult:
    """RIE for arbitrary bi-rotationally invariant noise with known R-transform."""
    if not snr > 0:
        raise DomainError(f"snr must be positive, got {snr}")
    svd, transposed = _decompose(Y)
    spec = svd.singular_values
    eta = _resolve_eta(spec.n_rows, eta, epsilon)
    xis, flags = general_shrinkage(spec.values, spec, noise, snr, eta)
    return _assemble(svd, xis, transposed, eta, flags)


def gaussian_shrinkage(points, spectrum: EmpiricalSpectrum, snr: float, eta: float) -> np.ndarray:
    """Closed-form Gaussian-noise shrinkage at ``z = x + i eta``.

    ``xi = Im{G (z^2 + 1 - 1/a) - z^2 G^2} / (sqrt(snr) Im{z G})`` with
    ``G(z) = (1/N) sum_k 1/(z^2 - gamma_k^2)``.
    """
    x = np.asarray(points, dtype=np.float64)
    z = x + 1j * eta
    G = resolvent_trace(spectrum, z)
    a = spectrum.alpha
    num = np.imag(G * (z**2 + 1.0 - 1.0 / a) - z**2 * G**2)
    den = np.imag(z * G)
    xis = np.where(x != 0, num / den, 0.0) / np.sqrt(snr)
    return xis


def gaussian_rie(Y, snr: float, epsilon: float = 0.5, eta: float | None = None) -> ShrinkageResult:
    """RIE for i.i.d. Gaussian noise of variance ``1/N`` (no R-transform needed)."""
    if not snr > 0:
        raise DomainError(f"snr must be positive, got {snr}")
    svd, transposed = _decompose(Y)
    spec = svd.singular_values
    eta = _resolve_eta(spec.n_rows, eta, epsilon)
    return _assemble(svd, gaussian_shrinkage(spec.values, spec, snr, eta), transposed, eta)


def _lorentz_integral(lo: float, hi: float, center: np.ndarray, eta: float) -> np.ndarray:
    """``int_lo^hi Im 1/(x + i eta - c) dx`` in closed form."""
    return -(np.arctan((hi - center) / eta) - np.arctan((lo - center) / eta))


def exact_xi_prop1(instance: DenoisingInstance, j: int, window_eps: float,
                   eta_sequence=None, drift_tol: float = 1e-3) -> float:
    """Window-integral representation of the oracle value ``u_j^T S v_j``.

    Ratio of ``int Im L(x + i eta) dx`` to ``int Im{(x + i eta) G(x + i eta)} dx``
    over ``[gamma_j - eps, gamma_j + eps]``.  Both integrands are sums of
    Lorentzians (``L`` expanded over singular triplets), so the integrals are
    taken exactly; only the ``eta -> 0`` limit is approximated by the last
    entry of ``eta_sequence``.  A :class:`ConvergenceWarning` is issued when
    the last two ratios differ by more than ``drift_tol``.
    """
    svd = svd_decompose(instance.observation, full_matrices=False)
    gam = svd.gammas
    n = gam.size
    if not 0 <= j < n:
        raise DimensionError(f"index {j} out of range for {n} singular values")
    if not window_eps > 0:
        raise PreconditionError("window_eps must be positive")
    lo, hi = gam[j] - window_eps, gam[j] + window_eps
    others = np.concatenate([np.delete(gam, j), -gam])
    if np.any((others >= lo) & (others <= hi)):
        raise PreconditionError(
            f"window [{lo:.6g}, {hi:.6g}] does not isolate gamma_{j} = {gam[j]:.6g}"
        )
    etas = np.asarray([1e-2, 1e-3, 1e-4, 1e-5, 1e-6] if eta_sequence is None else eta_sequence, dtype=float)
    if etas.size < 2 or np.any(np.diff(etas) >= 0) or np.any(etas <= 0):
        raise PreconditionError("eta_sequence must hold at least two positive, strictly decreasing values")
    overlaps = oracle_overlaps(svd, instance.signal)
    ratios = []
    for eta in etas:
        plus = _lorentz_integral(lo, hi, gam, eta)
        minus = _lorentz_integral(lo, hi, -gam, eta)
        # gamma/(z^2 - gamma^2) = (1/2)[1/(z - gamma) - 1/(z + gamma)], z/(z^2 - gamma^2) = (1/2)[... + ...]
        num = np.sum(overlaps * 0.5 * (plus - minus)) / n
        den = np.sum(0.5 * (plus + minus)) / n
        ratios.append(num / den)
    if abs(ratios[-1] - ratios[-2]) > drift_tol:
        warnings.warn(
            f"window-integral ratio drifted by {abs(ratios[-1] - ratios[-2]):.3g} between the last two eta values",
            ConvergenceWarning,
            stacklevel=2,
        )
    return float(ratios[-1])


def mse(S, estimate) -> float:
    """``(1/N) ||S - estimate||_F^2`` with ``N`` the smaller dimension."""
    a = np.asarray(S, dtype=np.float64)
    b = np.asarray(estimate, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2) / min(a.shape))
