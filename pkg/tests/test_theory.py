import warnings

import numpy as np
import pytest

from conftest import gaussian_pair
from rectrie.errors import CoverageError, DomainError, InsufficientSamplesError, IntegrabilityWarning
from rectrie.estimators import DenoisingInstance, general_shrinkage
from rectrie.freeprob import NoiseFamily
from rectrie.spectra import EmpiricalSpectrum, default_eta, svd_decompose
from rectrie.theory import (
    DensityGrid,
    bin_overlaps,
    grid_shrinkage,
    hilbert_identities,
    hilbert_pv,
    mmse_gaussian,
    mmse_general,
    mp_eigen_density,
    mp_symmetrized_density,
    mp_symmetrized_stieltjes,
    overlap_samples,
    overlap_theoretical,
    semicircle_density,
    theorem2_residual,
    trace_functions_GL,
    zeta_pair,
    zeta_residual,
)
from rectrie.theory import _trial_overlap


# --- closed forms and grids -------------------------------------------------

@pytest.mark.parametrize("alpha,var", [(1.0, 1.0), (0.5, 3.0), (0.25, 2.0)])
def test_mp_stieltjes_density_consistent(alpha, var):
    x = np.linspace(0.05, 5, 60)
    g = mp_symmetrized_stieltjes(x - 1e-12j, alpha, var)
    assert np.allclose(g.imag / np.pi, mp_symmetrized_density(x, alpha, var), atol=1e-6)
    assert np.all(g.imag >= -1e-12)


def test_mp_hilbert_closed_form():
    lam, alpha = 2.0, 0.5
    x = np.linspace(0.8, 4.0, 9)
    g = mp_symmetrized_stieltjes(x - 1e-13j, alpha, 1 + lam)
    assert np.allclose(g.real, x / (2 + 2 * lam) - (1 - alpha) / (2 * alpha * x), atol=1e-9)


def test_quarter_circle_is_semicircle():
    x = np.linspace(-2.5, 2.5, 11)
    assert np.allclose(mp_symmetrized_density(x, 1.0, 1.0), semicircle_density(x, 2.0))


@pytest.mark.parametrize("alpha", [1.0, 0.5, 0.25])
def test_analytic_grid_mass_and_half(alpha):
    grid = DensityGrid.analytic_mp(alpha, 2.0)
    assert grid.mass() == pytest.approx(1.0, abs=2e-3)
    xs, mu = grid.positive_half()
    assert np.all(xs > 0)
    assert np.trapezoid(mu, xs) == pytest.approx(1.0, abs=2e-3)


def test_grid_rejects_bad_input():
    xs = np.linspace(-1, 1, 11)
    with pytest.raises(DomainError):
        DensityGrid(xs, -np.ones(11), np.zeros(11), "x")
    with pytest.raises(CoverageError):
        DensityGrid(xs, 0.1 * np.ones(11), np.zeros(11), "x")
    with pytest.raises(DomainError):
        DensityGrid(xs[::-1], 0.5 * np.ones(11), np.zeros(11), "x")


def test_grid_is_read_only_and_serializes():
    grid = DensityGrid.semicircle()
    with pytest.raises(ValueError):
        grid.density[0] = 1.0
    lines = grid.to_csv().splitlines()
    assert lines[0] == "x,density,hilbert"
    assert len(lines) == grid.xs.size + 1
    assert np.isnan(grid.stieltjes_limit(5.0))


def test_empirical_grid_tracks_analytic():
    s, z = gaussian_pair(1000, 1000, seed=2)
    grid = DensityGrid.empirical(EmpiricalSpectrum.from_matrix(s + z))
    ref = DensityGrid.analytic_mp(1.0, 2.0)
    x = np.linspace(0.3, 2.2, 10)
    assert np.max(np.abs(grid.stieltjes_limit(x) - ref.stieltjes_limit(x))) <= 0.05
    assert grid.eta == pytest.approx(default_eta(1000))


# --- MMSE -----------------------------------------------------------------

def test_mmse_gaussian_square():
    assert mmse_gaussian(DensityGrid.analytic_mp(1.0, 2.0), 1.0, 1.0) == pytest.approx(0.5, abs=0.005)


def test_mmse_gaussian_rectangular():
    assert mmse_gaussian(DensityGrid.analytic_mp(0.5, 3.0), 0.5, 2.0) == pytest.approx(2 / 3, abs=0.01)


def test_mmse_general_analytic_grid():
    grid = DensityGrid.analytic_mp(1.0, 2.0)
    xi = grid_shrinkage(grid, NoiseFamily.gaussian(), 1.0, 1.0)
    assert mmse_general(1.0, xi, grid) == pytest.approx(0.5, abs=0.02)


def test_mmse_general_without_denoising():
    grid = DensityGrid.analytic_mp(0.5, 3.0)
    assert mmse_general(2.0, lambda x: np.zeros_like(x), grid) == pytest.approx(2.0)


@pytest.mark.parametrize("alpha,lam", [(1.0, 0.5), (1.0, 3.0), (0.5, 1.0), (0.5, 4.0)])
def test_two_mmse_formulas_agree(alpha, lam):
    grid = DensityGrid.analytic_mp(alpha, 1 + lam)
    general = mmse_general(1 / alpha, grid_shrinkage(grid, NoiseFamily.gaussian(), lam, alpha), grid)
    closed = mmse_gaussian(grid, alpha, lam)
    assert general == pytest.approx(closed, abs=0.01)
    assert general <= 1 / alpha
    assert closed == pytest.approx(1 / (alpha * (1 + lam)), abs=0.01)


def test_two_mmse_formulas_agree_on_empirical_grid():
    # square case: the closed form has no 1/x^2 term, so kernel leakage near 0 is harmless
    lam = 1.0
    s, z = gaussian_pair(1000, 1000, seed=7)
    spec = EmpiricalSpectrum.from_matrix(np.sqrt(lam) * s + z)
    grid = DensityGrid.empirical(spec)

    def xi(x):
        return general_shrinkage(x, spec, NoiseFamily.gaussian(), lam, grid.eta)[0]

    assert mmse_general(1.0, xi, grid) == pytest.approx(mmse_gaussian(grid, 1.0, lam), abs=0.01)


def test_mmse_gaussian_warns_on_mass_near_zero():
    grid = DensityGrid.semicircle(1.0)
    with pytest.warns(IntegrabilityWarning):
        mmse_gaussian(grid, 0.5, 1.0)


# --- trace relation -----------------------------------------------------------

def test_trace_functions_dense_oracle():
    s, z = gaussian_pair(3, 5, seed=4)
    inst = DenoisingInstance(s, z, 0.7)
    zz = 0.9 + 0.4j
    y = inst.observation
    r = np.linalg.inv(zz**2 * np.eye(3) - y @ y.T)
    G, L = trace_functions_GL(inst, zz)
    assert abs(G - np.trace(r) / 3) <= 1e-10
    assert abs(L - np.trace(r @ y @ s.T) / 3) <= 1e-10
    assert abs(G) <= 1 / abs((zz**2).imag)


def test_trace_functions_zero_signal():
    _, z = gaussian_pair(4, 6)
    assert trace_functions_GL(DenoisingInstance(np.zeros((4, 6)), z, 1.0), 1 + 0.2j)[1] == 0


def test_theorem2_residual_spread_shrinks():
    stds = {}
    for n in (100, 400):
        res = [theorem2_residual(DenoisingInstance(*gaussian_pair(n, n, seed=t), 1.0), 1 + 1j / np.sqrt(n))
               for t in range(40)]
        stds[n] = np.std(np.abs(res))
    ratio = stds[100] / stds[400]
    assert 1.3 <= ratio <= 3.2


def test_theorem2_relative_error_at_n1000():
    n, z = 1000, 1 + 1j / np.sqrt(1000)
    rel = []
    for t in range(20):
        inst = DenoisingInstance(*gaussian_pair(n, n, seed=t), 1.0)
        _, L = trace_functions_GL(inst, z)
        rel.append(abs(theorem2_residual(inst, z)) / abs(L))
    assert np.mean(rel) == pytest.approx(0.028, abs=0.01)


# --- zeta pair and overlaps -------------------------------------------------

@pytest.mark.parametrize("family,alpha", [
    (NoiseFamily.gaussian(), 0.25),
    (NoiseFamily.rank_one_sum(1.0), 0.5),
    (NoiseFamily.uniform_spectrum(), 1.0),
])
def test_zeta_residual(family, alpha):
    grid = DensityGrid.analytic_mp(alpha, 2.0)
    for x in np.linspace(0.6, 2.2, 5):
        z = x - 1e-3j
        g = complex(mp_symmetrized_stieltjes(z, alpha, 2.0))
        pair = zeta_pair(z, g, family, alpha)
        assert zeta_residual(pair, g, family, alpha) <= 1e-8
    assert grid.mass() > 0.99


def test_overlap_theory_symmetries():
    grid = DensityGrid.analytic_mp(0.25, 2.0)
    fam = NoiseFamily.gaussian()
    gam = np.array([1.5, 2.5, 3.5])
    pos = overlap_theoretical(gam, 1.9, grid, fam, 0.25)
    assert np.allclose(overlap_theoretical(-gam, 1.9, grid, fam, 0.25), -pos)
    assert np.all(overlap_theoretical(gam, 0.0, grid, fam, 0.25) == 0)
    assert np.isscalar(overlap_theoretical(2.0, 1.9, grid, fam, 0.25))


def test_overlap_without_noise_is_a_spike():
    s, _ = gaussian_pair(30, 60, seed=3)
    k = 7
    gammas, values = overlap_samples(s, k, lambda rng: np.zeros((30, 60)), 3)
    sig = svd_decompose(s).gammas
    assert np.allclose(gammas[0], sig)
    expected = np.zeros(30)
    expected[k] = 30.0
    assert np.allclose(values, expected, atol=1e-8)


def test_overlap_degenerate_block_is_summed():
    u = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))[0]
    v = np.linalg.qr(np.random.default_rng(1).standard_normal((8, 8)))[0][:, :6]
    sig = np.array([3.0, 2.0, 2.0, 1.0, 0.5, 0.2])
    s = (u * sig) @ v.T
    _, values = overlap_samples(s, 1, lambda rng: np.zeros((6, 8)), 2)
    assert np.allclose(values[0], [0, 6, 6, 0, 0, 0], atol=1e-8)


def test_overlap_eigh_route_matches_svd():
    s, z = gaussian_pair(20, 50, seed=9)
    y = s + z
    svd_s = svd_decompose(s, full_matrices=False)
    sl, sr = svd_s.left_vectors[:, [4]], svd_s.thin_right[:, [4]]
    gam, vals = _trial_overlap(y, sl, sr)
    svd_y = svd_decompose(y, full_matrices=False)
    ref = 20 * (svd_y.left_vectors.T @ sl)[:, 0] * (svd_y.thin_right.T @ sr)[:, 0]
    assert np.allclose(gam, svd_y.gammas)
    assert np.allclose(vals, ref, atol=1e-9)


def test_overlap_needs_two_trials():
    s, _ = gaussian_pair(5, 8)
    with pytest.raises(InsufficientSamplesError):
        overlap_samples(s, 0, lambda rng: np.zeros((5, 8)), 1)


def test_binning_statistics():
    g = np.tile(np.linspace(0, 1, 50), (4, 1))
    v = np.ones_like(g) * 2.0
    curve = bin_overlaps(g, v, n_bins=5, quantiles=(0.0, 1.0))
    assert np.allclose(curve.overlap, 2.0)
    assert np.allclose(curve.stderr, 0.0)
    assert curve.counts.sum() == g.size
    assert curve.n_trials == 4
    assert curve.to_csv().splitlines()[0] == "gamma,overlap,stderr,n_trials"


# --- Hilbert identities -------------------------------------------------------

def test_hilbert_pv_semicircle():
    for x in (-1.3, 0.4, 1.9, 3.0):
        expected = x / (2 * np.pi) if abs(x) < 2 else (x - np.sign(x) * np.sqrt(x * x - 4)) / (2 * np.pi)
        assert hilbert_pv(semicircle_density, [(-2, 2)], x) == pytest.approx(expected, abs=1e-9)


def test_hilbert_identities_semicircle():
    out = hilbert_identities(semicircle_density, [(-2.0, 2.0)])
    for lhs, rhs in out.values():
        assert lhs == pytest.approx(rhs, abs=1e-4)
    cube = 3 * out["f_h2"][1]
    assert cube == pytest.approx(3 / (4 * np.pi**2), abs=1e-6)


def test_hilbert_identities_rescaled_mp():
    alpha, var = 0.5, 2.0
    lo = np.sqrt(var / alpha) * (1 - np.sqrt(alpha))
    hi = np.sqrt(var / alpha) * (1 + np.sqrt(alpha))

    def f(x):
        return float(mp_symmetrized_density(x, alpha, var))

    out = hilbert_identities(f, [(-hi, -lo), (lo, hi)])
    assert "h_over_x" in out
    for lhs, rhs in out.values():
        assert lhs == pytest.approx(rhs, abs=1e-4)
    assert out["h_over_x"][1] == pytest.approx(0.0, abs=1e-12)


def test_hilbert_identity_with_inverse_moment():
    ratio = 0.3
    a, b = (1 - np.sqrt(ratio)) ** 2, (1 + np.sqrt(ratio)) ** 2

    def f(t):
        return float(mp_eigen_density(t, ratio))

    out = hilbert_identities(f, [(a, b)])
    lhs, rhs = out["h_over_x"]
    assert abs(rhs) > 0.1
    assert lhs == pytest.approx(rhs, abs=1e-4)
