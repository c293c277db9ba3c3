"""Asymptotic quantities: MMSE formulas, the trace relation, overlaps.

Densities live on :class:`DensityGrid`, a uniform grid over the symmetrized
real line holding ``mu_bar(x)`` and its Hilbert transform.  Grids come either
from closed forms (Marchenko-Pastur family, semicircle) or from an observed
spectrum smoothed by the Cauchy kernel.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .errors import (
    CoverageError,
    DimensionError,
    DomainError,
    InsufficientSamplesError,
    IntegrabilityWarning,
)
from .estimators import DenoisingInstance
from .freeprob import NoiseFamily, rect_r_transform, t_alpha
from .models import stream
from .spectra import EmpiricalSpectrum, default_eta, stieltjes, svd_decompose

__all__ = [
    "DensityGrid",
    "OverlapCurve",
    "ZetaPair",
    "bin_overlaps",
    "grid_shrinkage",
    "hilbert_identities",
    "hilbert_pv",
    "mmse_gaussian",
    "mmse_general",
    "mp_eigen_density",
    "mp_symmetrized_density",
    "mp_symmetrized_stieltjes",
    "overlap_empirical",
    "overlap_samples",
    "overlap_theoretical",
    "semicircle_density",
    "theorem2_residual",
    "trace_relation_rhs",
    "trace_functions_GL",
    "zeta_pair",
    "zeta_residual",
]

_GRID_POINTS = 4001
_INV_SQ_CUTOFF = 1e-3


# --- closed-form densities -------------------------------------------------

def semicircle_density(x, radius: float = 2.0):
    x = np.asarray(x, dtype=np.float64)
    r2 = radius**2
    return np.where(np.abs(x) < radius, 2.0 * np.sqrt(np.clip(r2 - x**2, 0, None)) / (np.pi * r2), 0.0)


def mp_eigen_density(t, ratio: float):
    """Marchenko-Pastur law of ``X X^T / M`` for ``X`` of shape ``N x M``, ``ratio = N/M <= 1``."""
    t = np.asarray(t, dtype=np.float64)
    a, b = (1 - np.sqrt(ratio)) ** 2, (1 + np.sqrt(ratio)) ** 2
    inside = (t > a) & (t < b)
    out = np.zeros_like(t)
    ti = t[inside]
    out[inside] = np.sqrt((b - ti) * (ti - a)) / (2 * np.pi * ratio * ti)
    return out


def _mp_edges(alpha: float, variance: float) -> tuple[float, float]:
    scale = np.sqrt(variance / alpha)
    return scale * (1 - np.sqrt(alpha)), scale * (1 + np.sqrt(alpha))


def mp_symmetrized_density(x, alpha: float, variance: float = 1.0):
    """Symmetrized singular-value density of an ``N x M`` matrix with i.i.d. entries of variance ``variance/N``.

    ``alpha = N/M``.  At ``alpha = 1`` this is a semicircle of radius ``2 sqrt(variance)``.
    """
    x = np.abs(np.asarray(x, dtype=np.float64))
    t = x**2 * alpha / variance
    a, b = (1 - np.sqrt(alpha)) ** 2, (1 + np.sqrt(alpha)) ** 2
    upper = np.sqrt(np.clip(b - t, 0.0, None))
    if a == 0.0:
        # sqrt(t)/|x| is constant, which keeps the value at x = 0 finite
        lower = np.full_like(x, np.sqrt(alpha / variance))
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            lower = np.where(t > a, np.sqrt(np.clip(t - a, 0.0, None)) / np.where(x > 0, x, 1.0), 0.0)
    return np.where(t < b, upper * lower / (2 * np.pi * alpha), 0.0)


def mp_symmetrized_stieltjes(z, alpha: float, variance: float = 1.0):
    """Closed-form Stieltjes transform of :func:`mp_symmetrized_density`.

    ``G(z) = z G_rho(z^2)`` where ``rho`` is the eigenvalue law of ``Y Y^T``;
    the product of principal square roots selects the branch analytic off
    the support.
    """
    z = np.asarray(z, dtype=np.complex128)
    c = alpha
    w = z**2 * alpha / variance
    a, b = (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2
    g_mp = ((w + c - 1) - np.sqrt(w - a) * np.sqrt(w - b)) / (2 * c * w)
    return z * (alpha / variance) * g_mp


# --- density grids ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DensityGrid:
    """``mu_bar`` and ``H[mu_bar]`` tabulated on a uniform grid.

    ``source`` is ``"analytic:<name>"`` or ``"empirical(N=.., eta=..)"``;
    ``eta`` is the smoothing offset used (``0`` for closed forms).  A grid
    spanning negative values must carry mass in ``[0.98, 1.02]``; a grid on
    the positive half only, mass in ``[0.49, 0.51]``.
    """

    xs: np.ndarray
    density: np.ndarray
    hilbert: np.ndarray
    source: str
    eta: float = 0.0

    def __post_init__(self):
        xs = np.array(self.xs, dtype=np.float64)
        dens = np.array(self.density, dtype=np.float64)
        hil = np.array(self.hilbert, dtype=np.float64)
        if xs.ndim != 1 or xs.size < 2 or dens.shape != xs.shape or hil.shape != xs.shape:
            raise DimensionError("xs, density and hilbert must be equal-length 1-D arrays")
        if np.any(np.diff(xs) <= 0):
            raise DomainError("xs must be strictly increasing")
        if np.any(dens < 0):
            raise DomainError("density must be nonnegative")
        for name, arr in (("xs", xs), ("density", dens), ("hilbert", hil)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        lo, hi = (0.98, 1.02) if xs[0] < 0 else (0.49, 0.51)
        mass = self.mass()
        if not lo <= mass <= hi:
            raise CoverageError(f"grid mass {mass:.4f} outside [{lo}, {hi}]")

    # construction ---------------------------------------------------------
    @classmethod
    def analytic_mp(cls, alpha: float, variance: float = 1.0, n_points: int = _GRID_POINTS) -> "DensityGrid":
        """Rescaled Marchenko-Pastur grid (quarter-circle at ``alpha = 1``)."""
        if not 0 < alpha <= 1:
            raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
        edge = _mp_edges(alpha, variance)[1]
        xs = np.linspace(-edge, edge, n_points)
        g = mp_symmetrized_stieltjes(xs - 1e-13j, alpha, variance)
        dens = mp_symmetrized_density(xs, alpha, variance)
        return cls(xs, dens, g.real / np.pi, f"analytic:mp(alpha={alpha:g}, variance={variance:g})")

    @classmethod
    def semicircle(cls, radius: float = 2.0, n_points: int = _GRID_POINTS) -> "DensityGrid":
        xs = np.linspace(-radius, radius, n_points)
        hil = xs * 2.0 / (np.pi * radius**2)
        return cls(xs, semicircle_density(xs, radius), hil, f"analytic:semicircle(radius={radius:g})")

    @classmethod
    def empirical(cls, spectrum: EmpiricalSpectrum, eta: float | None = None,
                  n_points: int = _GRID_POINTS, pad: float | None = None) -> "DensityGrid":
        """Cauchy-smoothed grid from an observed spectrum.

        The grid spans ``[-(gamma_max + pad), gamma_max + pad]`` with
        ``pad = max(0.5 gamma_max, 10 eta)`` so that the heavy kernel tails
        stay inside it.
        """
        eta = default_eta(spectrum.n_rows) if eta is None else float(eta)
        if not eta > 0:
            raise DomainError("eta must be positive")
        gmax = float(spectrum.values[0])
        pad = max(0.5 * gmax, 10 * eta) if pad is None else float(pad)
        edge = gmax + pad
        xs = np.linspace(-edge, edge, n_points)
        g = stieltjes(spectrum, xs - 1j * eta)
        return cls(xs, g.imag / np.pi, g.real / np.pi,
                   f"empirical(N={spectrum.n_rows}, eta={eta:.6g})", eta)

    # queries ----------------------------------------------------------------
    def quadrature_weights(self) -> np.ndarray:
        h = np.diff(self.xs)
        w = np.zeros_like(self.xs)
        w[:-1] += h / 2
        w[1:] += h / 2
        return w

    def mass(self) -> float:
        return float(self.quadrature_weights() @ self.density)

    def positive_half(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, mu_Y(x))`` for ``x > 0`` with the one-sided density ``2 mu_bar``."""
        keep = self.xs > 0
        return self.xs[keep], 2.0 * self.density[keep]

    def stieltjes_limit(self, x):
        """``G(x - i0) = pi H(x) + i pi mu_bar(x)`` by linear interpolation (NaN off-grid)."""
        x = np.asarray(x, dtype=np.float64)
        h = np.interp(x, self.xs, self.hilbert, left=np.nan, right=np.nan)
        d = np.interp(x, self.xs, self.density, left=np.nan, right=np.nan)
        return np.pi * (h + 1j * d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "density", "hilbert"])
        for row in zip(self.xs, self.density, self.hilbert):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def grid_shrinkage(grid: DensityGrid, noise: NoiseFamily, snr: float, alpha: float):
    """Optimal singular value map read off a density grid.

    Same formula as the estimator, with ``g = G(x - i0)`` interpolated from
    the grid and ``z = x - i eta_grid``.
    """
    fam = noise.with_alpha(alpha)

    def xi(x):
        x = np.asarray(x, dtype=np.float64)
        z = x - 1j * grid.eta
        g = grid.stieltjes_limit(x)
        out = np.zeros_like(x)
        ok = np.isfinite(g) & (np.imag(g) > 1e-12) & (x != 0)
        zo, go = z[ok], g[ok]
        w = (go / zo) * (1.0 - alpha + alpha * zo * go)
        num = np.imag(zo * go - rect_r_transform(fam, w))
        out[ok] = num / np.imag(go) / np.sqrt(snr)
        return out

    return xi


def mmse_general(mu_S_second_moment: float, xi_fn, grid: DensityGrid) -> float:
    """``int x^2 mu_S - int xi(x)^2 mu_Y(x) dx`` by trapezoid on the positive half-grid."""
    xs, mu_y = grid.positive_half()
    mass = float(np.trapezoid(mu_y, xs))
    if mass < 0.95:
        raise CoverageError(f"grid covers only {mass:.3f} of the mass of mu_Y")
    xi = np.asarray(xi_fn(xs), dtype=np.float64)
    return float(mu_S_second_moment - np.trapezoid(xi**2 * mu_y, xs))


def mmse_gaussian(grid: DensityGrid, alpha: float, snr: float) -> float:
    """Gaussian-noise MMSE from the one-sided law of ``Y``.

    ``(1/snr) [1/a - (1/a - 1)^2 int mu_Y/x^2 - (pi^2/3) int mu_Y^3]``.
    The ``1/x^2`` integrand is cut off below ``x = 1e-3``.
    """
    if not snr > 0:
        raise DomainError("snr must be positive")
    xs, mu_y = grid.positive_half()
    cube = float(np.trapezoid(mu_y**3, xs))
    coef = (1.0 / alpha - 1.0) ** 2
    inv_sq = 0.0
    if coef > 0:
        keep = xs >= _INV_SQ_CUTOFF
        inv_sq = float(np.trapezoid(mu_y[keep] / xs[keep] ** 2, xs[keep]))
        if mu_y[keep][0] > 1e-3:
            warnings.warn(
                "mu_Y does not vanish near x = 0; the 1/x^2 term is a partial value",
                IntegrabilityWarning,
                stacklevel=2,
            )
    return float((1.0 / alpha - coef * inv_sq - np.pi**2 / 3.0 * cube) / snr)


# --- trace relation --------------------------------------------------------

def trace_functions_GL(instance: DenoisingInstance, z: complex) -> tuple[complex, complex]:
    """``G(z) = Tr (z^2 - YY^T)^{-1} / N`` and ``L(z) = Tr (z^2 - YY^T)^{-1} Y S^T / N``.

    Both are spectral sums over the eigenpairs ``(gamma_k^2, u_k)`` of
    ``Y Y^T``; ``L`` uses ``u_k^T S Y^T u_k = gamma_k u_k^T S v_k`` so no
    right singular vectors are needed.
    """
    z = complex(z)
    if z.imag == 0 or (z * z).imag == 0:
        raise DomainError("trace functions require Im z^2 != 0")
    Y, S = instance.observation, instance.signal
    evals, U = np.linalg.eigh(Y @ Y.T)
    inv = 1.0 / (z**2 - np.clip(evals, 0.0, None))
    weights = np.sum(U * ((S @ Y.T) @ U), axis=0)
    return complex(np.mean(inv)), complex(np.mean(inv * weights))


def theorem2_residual(instance: DenoisingInstance, z: complex) -> complex:
    """``L(z) - [G (z^2 + 1 - 1/a0) - z^2 G^2 - 1] / sqrt(snr)`` for Gaussian noise."""
    G, L = trace_functions_GL(instance, z)
    return L - trace_relation_rhs(G, z, instance.alpha0, instance.snr)


def trace_relation_rhs(G: complex, z: complex, alpha0: float, snr: float) -> complex:
    """Gaussian-noise prediction ``[G (z^2 + 1 - 1/a0) - z^2 G^2 - 1] / sqrt(snr)`` for ``L(z)``."""
    z = complex(z)
    return (G * (z**2 + 1 - 1 / alpha0) - z**2 * G**2 - 1) / np.sqrt(snr)


# --- zeta pair and overlaps ------------------------------------------------

@dataclass(frozen=True)
class ZetaPair:
    zeta1: complex
    zeta2: complex
    z: complex


def _p_pair(z: complex, g: complex, alpha: float) -> tuple[complex, complex]:
    m_plus_1 = z * g  # M(1/z^2) + 1
    return m_plus_1 / z, (alpha * (m_plus_1 - 1.0) + 1.0) / z


def zeta_pair(z: complex, g: complex, noise: NoiseFamily, alpha: float) -> ZetaPair:
    """Saddle-point pair from the symmetrized Stieltjes value ``g = G(z)``.

    With ``p1 = g`` and ``p2 = (1 - a + a z g) / z`` (so that
    ``p1 p2 = T(M(1/z^2)) / z^2``): ``zeta1 = C(p1 p2)/p1`` and
    ``zeta2 = a C(p1 p2)/p2``.
    """
    fam = noise.with_alpha(alpha)
    z, g = complex(z), complex(g)
    p1, p2 = _p_pair(z, g, alpha)
    cz = complex(rect_r_transform(fam, p1 * p2))
    return ZetaPair(cz / p1, alpha * cz / p2, z)


def zeta_residual(pair: ZetaPair, g: complex, noise: NoiseFamily, alpha: float) -> float:
    """Mismatch between ``pair`` and the closed forms ``z C(u) / (M + 1)``, ``a z C(u) / (a M + 1)``.

    ``u = T(M(1/z^2)) / z^2``; this route never forms ``p1, p2``.
    """
    fam = noise.with_alpha(alpha)
    z = pair.z
    m = z * complex(g) - 1.0
    u = t_alpha(m, alpha) / z**2
    cu = complex(rect_r_transform(fam, u))
    z1 = z * cu / (m + 1.0)
    z2 = alpha * z * cu / (alpha * m + 1.0)
    return max(abs(z1 - pair.zeta1), abs(z2 - pair.zeta2))


def overlap_theoretical(gamma, sigma: float, grid: DensityGrid, noise: NoiseFamily,
                        alpha: float, eta: float | None = None):
    """Rescaled overlap ``O(gamma, sigma)`` between observed and true singular vectors.

    ``O = Im[sigma / ((z - zeta2)(z - zeta1) - sigma^2)] / (pi mu_bar(gamma))`` at
    ``z = gamma - i eta``; negative ``gamma`` uses ``O(-gamma) = -O(gamma)``.
    """
    eta = grid.eta if eta is None else float(eta)
    gam = np.atleast_1d(np.asarray(gamma, dtype=np.float64))
    out = np.zeros_like(gam)
    for i, gm in enumerate(gam):
        x = abs(gm)
        g = complex(grid.stieltjes_limit(x))
        if not np.isfinite(g) or g.imag <= 1e-12 or sigma == 0 or x == 0:
            continue
        z = x - 1j * eta
        pair = zeta_pair(z, g, noise, alpha)
        val = np.imag(sigma / ((z - pair.zeta2) * (z - pair.zeta1) - sigma**2)) / g.imag
        out[i] = np.sign(gm) * val
    return out[0] if np.ndim(gamma) == 0 else out


@dataclass(frozen=True, eq=False)
class OverlapCurve:
    gamma: np.ndarray
    overlap: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    n_trials: int
    sigma: float

    def to_csv(self, theory=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["gamma", "overlap", "stderr", "n_trials"]
        if theory is not None:
            head.append("theory")
        w.writerow(head)
        for i in range(self.gamma.size):
            row = [repr(float(self.gamma[i])), repr(float(self.overlap[i])), repr(float(self.stderr[i])), self.n_trials]
            if theory is not None:
                row.append(repr(float(theory[i])))
            w.writerow(row)
        return buf.getvalue()


def _degenerate_block(sigmas: np.ndarray, k: int, rtol: float = 1e-10) -> np.ndarray:
    scale = max(float(np.max(np.abs(sigmas))), 1e-300)
    return np.flatnonzero(np.abs(sigmas - sigmas[k]) <= rtol * scale)


def _trial_overlap(Y: np.ndarray, s_left: np.ndarray, s_right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Observed singular values and ``N (u_j^T s_l)(v_j^T s_r)`` summed over a block.

    Uses the eigendecomposition of ``Y Y^T`` and ``v_j = Y^T u_j / gamma_j``,
    falling back to a thin SVD when some ``gamma_j`` is too small for that.
    """
    n = Y.shape[0]
    evals, U = np.linalg.eigh(Y @ Y.T)
    gam = np.sqrt(np.clip(evals, 0.0, None))[::-1]
    U = U[:, ::-1]
    if gam[-1] > 1e-6 * max(gam[0], 1e-300):
        left = U.T @ s_left
        right = (U.T @ (Y @ s_right)) / gam[:, None]
    else:
        svd = svd_decompose(Y, full_matrices=False)
        gam = svd.gammas
        left = svd.left_vectors.T @ s_left
        right = svd.thin_right.T @ s_right
    return gam, n * np.sum(left * right, axis=1)


def overlap_samples(signal: np.ndarray, k: int, noise_sampler, n_trials: int,
                    master_seed: int = 0, snr: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial ``(gamma_j, N (u_j^T s_k^l)(v_j^T s_k^r))`` with the signal held fixed.

    ``noise_sampler(rng)`` draws a fresh noise matrix for every trial from the
    ``(master_seed, trial, "noise")`` stream.  Returns two ``(n_trials, N)``
    arrays.  Degenerate ``sigma_k`` are handled by summing over the block.
    """
    S = np.asarray(signal, dtype=np.float64)
    n, m = S.shape
    if n > m:
        raise DimensionError("signal must be canonical (n_rows <= n_cols)")
    if n_trials < 2:
        raise InsufficientSamplesError("overlap estimation needs at least 2 trials")
    svd_s = svd_decompose(S, full_matrices=False)
    if not 0 <= k < n:
        raise DimensionError(f"sigma index {k} out of range")
    block = _degenerate_block(svd_s.gammas, k)
    s_left = svd_s.left_vectors[:, block]
    s_right = svd_s.thin_right[:, block]
    gammas = np.empty((n_trials, n))
    values = np.empty((n_trials, n))
    for t in range(n_trials):
        Z = noise_sampler(stream(master_seed, t, "noise"))
        Y = np.sqrt(snr) * S + Z
        gammas[t], values[t] = _trial_overlap(Y, s_left, s_right)
    return gammas, values


def bin_overlaps(gammas: np.ndarray, values: np.ndarray, n_bins: int = 40,
                 quantiles: tuple[float, float] = (0.005, 0.995), sigma: float = float("nan")) -> OverlapCurve:
    """Average overlap samples in equal-width bins of ``gamma``."""
    n_trials = np.asarray(gammas).shape[0] if np.ndim(gammas) == 2 else 1
    g = np.asarray(gammas).ravel()
    v = np.asarray(values).ravel()
    lo, hi = np.quantile(g, quantiles)
    keep = (g >= lo) & (g <= hi)
    g, v = g[keep], v[keep]
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, g, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=v, minlength=n_bins)
    sq = np.bincount(idx, weights=v**2, minlength=n_bins)
    gsum = np.bincount(idx, weights=g, minlength=n_bins)
    ok = counts > 1
    c = counts[ok]
    mean = sums[ok] / c
    var = np.maximum(sq[ok] / c - mean**2, 0.0) * c / (c - 1)
    return OverlapCurve(gsum[ok] / c, mean, np.sqrt(var / c), c, n_trials, sigma)


def overlap_empirical(signal: np.ndarray, k: int, noise_sampler, n_trials: int,
                      master_seed: int = 0, snr: float = 1.0, n_bins: int = 40) -> OverlapCurve:
    """Monte-Carlo overlap curve for the ``k``-th signal singular value, binned by ``gamma``."""
    gammas, values = overlap_samples(signal, k, noise_sampler, n_trials, master_seed, snr)
    sigma = float(svd_decompose(np.asarray(signal, dtype=np.float64), full_matrices=False).gammas[k])
    return bin_overlaps(gammas, values, n_bins, sigma=sigma)


# --- Hilbert transform identities -----------------------------------------

def hilbert_pv(density, intervals, x: float) -> float:
    """``(1/pi) p.v. int f(t)/(x - t) dt`` by QUADPACK's Cauchy-weight rule."""
    total = 0.0
    for a, b in intervals:
        if a < x < b:
            val, _ = scipy.integrate.quad(density, a, b, weight="cauchy", wvar=x, limit=200, epsabs=1e-12)
            total -= val  # quad gives p.v. int f(t)/(t - x)
        else:
            val, _ = scipy.integrate.quad(lambda t: density(t) / (x - t), a, b, limit=200, epsabs=1e-12)
            total += val
    return total / np.pi


def hilbert_identities(density, intervals, n_nodes: int = 200) -> dict[str, tuple[float, float]]:
    """Both sides of the Hilbert-transform identities for a compactly supported ``f``.

    Keys: ``"f_h2"`` (``int f H^2`` vs ``int f^3 / 3``), ``"x_f_h"``
    (``int x f H`` vs ``(int f)^2 / 2 pi``) and, when no interval touches
    zero, ``"h_over_x"`` (``int f H / x`` vs ``-(int f/x)^2 / 2 pi``).

    Outer integrals use Gauss-Legendre nodes after ``t = c - r cos(theta)``,
    which turns square-root edges into smooth integrands; ``H`` is evaluated
    once per node.
    """
    u, w = np.polynomial.legendre.leggauss(n_nodes)
    theta, w = 0.5 * np.pi * (u + 1), 0.5 * np.pi * w
    xs, ws = [], []
    for a, b in intervals:
        c, r = 0.5 * (a + b), 0.5 * (b - a)
        xs.append(c - r * np.cos(theta))
        ws.append(w * r * np.sin(theta))
    x, w = np.concatenate(xs), np.concatenate(ws)
    f = np.array([density(t) for t in x], dtype=np.float64)
    h = np.array([hilbert_pv(density, intervals, t) for t in x])

    mass = np.sum(w * f)
    out = {
        "f_h2": (float(np.sum(w * f * h**2)), float(np.sum(w * f**3)) / 3.0),
        "x_f_h": (float(np.sum(w * x * f * h)), float(mass**2 / (2 * np.pi))),
    }
    if all(a * b > 0 for a, b in intervals):
        f_over_x = np.sum(w * f / x)
        out["h_over_x"] = (float(np.sum(w * f * h / x)), float(-(f_over_x**2) / (2 * np.pi)))
    return out
